//! Distributional checks on the sampled clocks.

use exclusion_core::graphical::{sample_event_log_with, ClockScheme, ClockSet, EventKind};
use exclusion_core::kernel::{build_kernel, perturb, GraphSpec, Perturbation};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn chi_squared_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn swap_clock_counts_are_poisson() {
    let k = build_kernel(&GraphSpec::path(5, 0.7)).unwrap();
    let set = ClockSet::new(&k, ClockScheme::Stirring);
    let horizon = 3.0;
    let seeds = 4000;
    let mut counts = vec![0usize; 64];
    for seed in 0..seeds {
        let log = sample_event_log_with(&set, horizon, seed).unwrap();
        let c = log.events.iter().filter(|e| (e.x, e.y) == (1, 2) || (e.x, e.y) == (2, 1)).count();
        counts[c.min(63)] += 1;
    }
    let law = Poisson::new(0.7 * horizon).unwrap();
    // bins 0..=5 and a tail bin
    let mut observed: Vec<f64> = counts[..6].iter().map(|&c| c as f64).collect();
    observed.push(counts[6..].iter().sum::<usize>() as f64);
    let mut expected: Vec<f64> = (0..6).map(|k| law.pmf(k) * seeds as f64).collect();
    expected.push(seeds as f64 - expected.iter().sum::<f64>());
    assert!(chi_squared_p(&observed, &expected) > 1e-3, "{observed:?} {expected:?}");
}

#[test]
fn residual_clocks_carry_the_asymmetric_rate() {
    let k = build_kernel(&GraphSpec::path(4, 1.0)).unwrap();
    let kbar = perturb(&k, &Perturbation::single(1, 2, 0.4)).unwrap();
    let set = ClockSet::new(&kbar, ClockScheme::Stirring);
    let horizon = 50.0;
    let seeds = 400u64;
    let (mut swaps, mut directed) = (0usize, 0usize);
    for seed in 0..seeds {
        let log = sample_event_log_with(&set, horizon, seed).unwrap();
        for e in log.events.iter().filter(|e| e.sites() == (1, 2) || e.sites() == (2, 1)) {
            match e.kind {
                EventKind::Swap => swaps += 1,
                EventKind::Directed => {
                    assert_eq!(e.sites(), (1, 2));
                    directed += 1
                }
            }
        }
    }
    let total = horizon * seeds as f64;
    // counts are Poisson: compare with 4 standard deviations
    assert!((swaps as f64 - total).abs() < 4.0 * total.sqrt());
    assert!((directed as f64 - 0.4 * total).abs() < 4.0 * (0.4 * total).sqrt());
}

#[test]
fn arrows_clocks_split_by_direction() {
    let k = build_kernel(&GraphSpec::cycle(3, 1.0)).unwrap();
    let kbar = perturb(&k, &Perturbation::single(0, 1, 1.0)).unwrap();
    let set = ClockSet::new(&kbar, ClockScheme::Arrows);
    let horizon = 100.0;
    let (mut fwd, mut back) = (0usize, 0usize);
    for seed in 0..100 {
        let log = sample_event_log_with(&set, horizon, seed).unwrap();
        assert!(log.events.windows(2).all(|w| w[0].time < w[1].time));
        fwd += log.events.iter().filter(|e| e.sites() == (0, 1)).count();
        back += log.events.iter().filter(|e| e.sites() == (1, 0)).count();
    }
    let (ef, eb) = (2.0 * horizon * 100.0, horizon * 100.0);
    assert!((fwd as f64 - ef).abs() < 4.0 * ef.sqrt());
    assert!((back as f64 - eb).abs() < 4.0 * eb.sqrt());
}
