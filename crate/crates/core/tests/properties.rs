//! Property tests for invariants that must hold on every sample path.

use exclusion_core::coupling::{evolve_coupled, CoupledPair};
use exclusion_core::dual::{evolve_dual, DualState};
use exclusion_core::graphical::{reverse, sample_event_log, sample_event_log_with, ClockScheme, ClockSet};
use exclusion_core::kernel::{build_kernel, perturb, BoundaryMode, GraphSpec, Perturbation};
use exclusion_core::lineage::Lineage;
use exclusion_core::measures::{nu_c, stationarity_residual};
use exclusion_core::process::{apply_log, Configuration, CylinderEvent};
use proptest::prelude::*;

fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..=1, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn particle_number_is_conserved(b in bits(8), seed in any::<u64>(), eps in -0.4f64..0.8) {
        let k = build_kernel(&GraphSpec::cycle(8, 0.5)).unwrap();
        let kbar = perturb(&k, &Perturbation::single(2, 3, eps)).unwrap();
        let eta = Configuration::for_kernel(&kbar, b).unwrap();
        let log = sample_event_log(&kbar, 6.0, seed).unwrap();
        prop_assert_eq!(apply_log(&eta, &kbar, &log).unwrap().particles(), eta.particles());
    }

    #[test]
    fn reversal_is_an_involution(seed in any::<u64>(), horizon in 0.1f64..20.0) {
        let k = build_kernel(&GraphSpec::torus(vec![3, 4], 0.3)).unwrap();
        let log = sample_event_log(&k, horizon, seed).unwrap();
        prop_assert_eq!(reverse(&reverse(&log)), log);
    }

    #[test]
    fn forward_equals_reversed_dual(b in bits(10), a in proptest::collection::btree_set(0usize..10, 0..4), seed in any::<u64>()) {
        let k = build_kernel(&GraphSpec::path(10, 1.0)).unwrap();
        let eta = Configuration::for_kernel(&k, b).unwrap();
        let log = sample_event_log(&k, 4.0, seed).unwrap();
        let a: Vec<usize> = a.into_iter().collect();
        let forward = CylinderEvent::new(a.clone()).indicator(apply_log(&eta, &k, &log).unwrap().bits());
        let dual = evolve_dual(&DualState::set(a), &reverse(&log)).unwrap();
        prop_assert_eq!(forward, dual.indicator(&eta));
    }

    #[test]
    fn lineage_matches_forward(b in bits(7), seed in any::<u64>(), eps in -0.3f64..0.9, arrows in any::<bool>()) {
        let k = build_kernel(&GraphSpec::path(7, 1.0).with_boundary(BoundaryMode::FrozenEmpty)).unwrap();
        let kbar = perturb(&k, &Perturbation::single(3, 4, eps)).unwrap();
        let scheme = if arrows { ClockScheme::Arrows } else { ClockScheme::Stirring };
        let set = ClockSet::new(&kbar, scheme);
        let eta = Configuration::for_kernel(&kbar, b).unwrap();
        let log = sample_event_log_with(&set, 5.0, seed).unwrap();
        let end = apply_log(&eta, &kbar, &log).unwrap();
        let init = eta.bits().to_vec();
        let mut lin = Lineage::new(&set, &kbar, seed, 5.0, |x| init[x]);
        for x in 0..7 {
            prop_assert_eq!(lin.eval(x, 5.0), end.get(x));
        }
    }

    #[test]
    fn coupled_discrepancies_only_annihilate(e in bits(8), x in bits(8), seed in any::<u64>()) {
        let k = build_kernel(&GraphSpec::cycle(8, 1.0)).unwrap();
        let kbar = perturb(&k, &Perturbation::single(0, 1, 0.5)).unwrap();
        let set = ClockSet::new(&kbar, ClockScheme::Arrows);
        let pair = CoupledPair::new(Configuration::for_kernel(&kbar, e).unwrap(), Configuration::for_kernel(&kbar, x).unwrap()).unwrap();
        let start = pair.discrepancies();
        let log = sample_event_log_with(&set, 3.0, seed).unwrap();
        let end = evolve_coupled(&pair, &kbar, &log).unwrap().discrepancies();
        prop_assert_eq!(end.net(), start.net());
        prop_assert!(end.plus.len() <= start.plus.len());
    }

    #[test]
    fn nu_c_is_stationary(c in 0.05f64..5.0, eps in 0.01f64..0.9, sites in proptest::collection::btree_set(1usize..9, 1..4)) {
        let k = build_kernel(&GraphSpec::path(10, 0.5)).unwrap();
        let kbar = perturb(&k, &Perturbation::single(4, 5, eps)).unwrap();
        let mu = nu_c(c, eps, 10, 4).unwrap();
        let a = CylinderEvent::new(sites.into_iter().collect());
        prop_assert!(stationarity_residual(&mu, &kbar, &a).unwrap().abs() <= 1e-12);
    }
}
