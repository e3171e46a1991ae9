//! Exact reference computations on windows of at most [`MAX_SITES`] sites.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::process::CylinderEvent;

pub const MAX_SITES: usize = 12;

/// Poisson tail mass left out of each uniformization step.
const TAIL: f64 = 1e-14;
/// Largest `Λ·Δt` handled in one uniformization step.
const MAX_STEP_MASS: f64 = 30.0;

/// Generator of the exclusion process on `{0,1}^n`; state `s` has site `i`
/// as bit `i`.
#[derive(Debug, Clone)]
pub struct ExactChain {
    n_sites: usize,
    rate_matrix: DMatrix<f64>,
    /// Off-diagonal `(target, rate)` per state.
    transitions: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

impl ExactChain {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_states(&self) -> usize {
        1 << self.n_sites
    }

    pub fn rate_matrix(&self) -> &DMatrix<f64> {
        &self.rate_matrix
    }

    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        &self.transitions[state]
    }

    fn max_exit(&self) -> f64 {
        self.exit.iter().cloned().fold(0.0, f64::max)
    }

    /// `v ↦ v (I + Q/Λ)`.
    fn uniformized_step(&self, v: &[f64], lambda: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = v[j] * (1.0 - self.exit[j] / lambda);
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for &(j, r) in &self.transitions[i] {
                    out[j] += vi * r / lambda;
                }
            }
        }
    }
}

pub fn build_exact(kbar: &Kernel) -> Result<ExactChain> {
    let n = kbar.n_sites();
    if n > MAX_SITES {
        return Err(Error::WindowTooLarge(n, MAX_SITES));
    }
    if kbar.has_frozen_sites() {
        return Err(Error::UnsupportedBoundary(kbar.boundary().name().to_string()));
    }
    let states = 1usize << n;
    let edges: Vec<_> = kbar.edges().collect();
    let mut rate_matrix = DMatrix::zeros(states, states);
    let mut transitions = vec![Vec::new(); states];
    let mut exit = vec![0.0; states];
    for s in 0..states {
        for &(x, y, r) in &edges {
            if (s >> x) & 1 == 1 && (s >> y) & 1 == 0 {
                let target = s ^ (1 << x) ^ (1 << y);
                rate_matrix[(s, target)] += r;
                transitions[s].push((target, r));
                exit[s] += r;
            }
        }
        rate_matrix[(s, s)] = -exit[s];
    }
    Ok(ExactChain { n_sites: n, rate_matrix, transitions, exit })
}

fn check_distribution(chain: &ExactChain, mu: &[f64]) -> Result<()> {
    if mu.len() != chain.n_states() {
        return Err(Error::InvalidValue(format!("distribution of length {} for {} states", mu.len(), chain.n_states())));
    }
    if mu.iter().any(|p| !(p.is_finite() && *p >= -1e-15)) {
        return Err(Error::InvalidValue("negative state probability".into()));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidValue(format!("state probabilities sum to {total}")));
    }
    Ok(())
}

/// `μ_0 e^{Qt}` by uniformization.
pub fn exact_transient(chain: &ExactChain, mu0: &[f64], t: f64) -> Result<Vec<f64>> {
    check_distribution(chain, mu0)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidValue(format!("time {t}")));
    }
    let lambda = chain.max_exit();
    if t == 0.0 || lambda == 0.0 {
        return Ok(mu0.to_vec());
    }
    let pieces = (lambda * t / MAX_STEP_MASS).ceil().max(1.0) as usize;
    let m = lambda * t / pieces as f64;
    let mut v = mu0.to_vec();
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..pieces {
        let mut acc = vec![0.0; v.len()];
        term.copy_from_slice(&v);
        let mut weight = (-m).exp();
        let mut covered = weight;
        let mut k = 0usize;
        loop {
            for (a, &b) in acc.iter_mut().zip(&term) {
                *a += weight * b;
            }
            if 1.0 - covered < TAIL || k > 10_000 {
                break;
            }
            k += 1;
            chain.uniformized_step(&term, lambda, &mut next);
            std::mem::swap(&mut term, &mut next);
            weight *= m / k as f64;
            covered += weight;
        }
        v = acc;
    }
    Ok(v)
}

/// `μ{η ≡ 1 on A}` for a dense distribution.
pub fn cylinder_probability(dist: &[f64], a: &CylinderEvent) -> f64 {
    let mask = a.sites().iter().fold(0usize, |m, &x| m | (1 << x));
    dist.iter().enumerate().filter(|&(s, _)| s & mask == mask).map(|(_, p)| p).sum()
}

/// Unique stationary law of the `k`-particle block, embedded in the full
/// state space.
pub fn exact_stationary(chain: &ExactChain, particles: usize) -> Result<Vec<f64>> {
    let n = chain.n_sites();
    if particles > n {
        return Err(Error::InvalidValue(format!("{particles} particles on {n} sites")));
    }
    let block: Vec<usize> = (0..chain.n_states()).filter(|s| s.count_ones() as usize == particles).collect();
    let mut index = vec![usize::MAX; chain.n_states()];
    for (i, &s) in block.iter().enumerate() {
        index[s] = i;
    }
    let m = block.len();
    // strong connectivity: every state reaches and is reached from the first
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, &s) in block.iter().enumerate() {
                let hit = if forward {
                    chain.transitions[block[i]].iter().any(|&(t, r)| t == s && r > 0.0)
                } else {
                    chain.transitions[s].iter().any(|&(t, r)| t == block[i] && r > 0.0)
                };
                if hit && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&b| b)
    };
    if m > 1 && !(reach(true) && reach(false)) {
        return Err(Error::ReducibleBlock(particles));
    }
    // π Q_B = 0 with the last equation replaced by Σπ = 1
    let mut a = DMatrix::zeros(m, m);
    for (i, &s) in block.iter().enumerate() {
        a[(i, i)] -= chain.exit[s];
        for &(t, r) in &chain.transitions[s] {
            a[(index[t], i)] += r;
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or(Error::ReducibleBlock(particles))?;
    let mut out = vec![0.0; chain.n_states()];
    for (i, &s) in block.iter().enumerate() {
        out[s] = pi[i].max(0.0);
    }
    Ok(out)
}

/// `(μ e^{Qt}) Q f_A`, the exact time derivative of `μS̄(t){η ≡ 1 on A}`.
pub fn exact_derivative(chain: &ExactChain, mu: &[f64], a: &CylinderEvent, t: f64) -> Result<f64> {
    a.check_window(chain.n_sites())?;
    let dist = exact_transient(chain, mu, t)?;
    let mask = a.sites().iter().fold(0usize, |m, &x| m | (1 << x));
    let f = |s: usize| (s & mask == mask) as u8 as f64;
    Ok(dist
        .iter()
        .enumerate()
        .map(|(s, &p)| p * chain.transitions[s].iter().map(|&(t, r)| r * (f(t) - f(s))).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, perturb, GraphSpec, Perturbation};
    use crate::measures::{stationarity_residual, ExactMeasure, ProductMeasure};

    fn four_path() -> (Kernel, Kernel) {
        let k = build_kernel(&GraphSpec::path(4, 1.0)).unwrap();
        let kbar = perturb(&k, &Perturbation::single(1, 2, 0.4)).unwrap();
        (k, kbar)
    }

    #[test]
    fn two_site_edge() {
        let k = build_kernel(&GraphSpec::path(2, 1.0)).unwrap();
        let c = build_exact(&k).unwrap();
        let q = c.rate_matrix();
        assert_eq!(q[(0b01, 0b10)], 1.0);
        assert_eq!(q[(0b10, 0b01)], 1.0);
        assert_eq!(q.row(0).iter().filter(|&&v| v != 0.0).count(), 0);
        assert_eq!(q.row(3).iter().filter(|&&v| v != 0.0).count(), 0);
    }

    #[test]
    fn rows_sum_to_zero_and_blocks_do_not_mix() {
        let (_, kbar) = four_path();
        let c = build_exact(&kbar).unwrap();
        let q = c.rate_matrix();
        for i in 0..16 {
            assert!(q.row(i).sum().abs() < 1e-15);
            for j in 0..16 {
                if q[(i, j)] != 0.0 && i != j {
                    assert_eq!((i as u32).count_ones(), (j as u32).count_ones());
                    assert!(q[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn perturbation_changes_only_its_transitions() {
        let (k, kbar) = four_path();
        let diff = build_exact(&kbar).unwrap().rate_matrix() - build_exact(&k).unwrap().rate_matrix();
        for i in 0..16usize {
            for j in 0..16usize {
                let d = diff[(i, j)];
                let moves_1_to_2 = i >> 1 & 1 == 1 && i >> 2 & 1 == 0 && j == i ^ 0b110;
                if i != j {
                    assert_eq!(d != 0.0, moves_1_to_2, "{i} {j}");
                    if moves_1_to_2 {
                        assert!((d - 0.4).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn window_cap() {
        let k = build_kernel(&GraphSpec::path(13, 1.0)).unwrap();
        assert!(matches!(build_exact(&k), Err(Error::WindowTooLarge(13, 12))));
    }

    #[test]
    fn transient_basics() {
        let (_, kbar) = four_path();
        let c = build_exact(&kbar).unwrap();
        let mu = ExactMeasure::from_product(&ProductMeasure::new(vec![0.9, 0.1, 0.6, 0.3]).unwrap());
        assert_eq!(exact_transient(&c, mu.probs(), 0.0).unwrap(), mu.probs());
        for t in [0.5, 3.0, 80.0] {
            let d = exact_transient(&c, mu.probs(), t).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(d.iter().all(|&p| p >= -1e-15));
            for k in 0..=4u32 {
                let block = |v: &[f64]| v.iter().enumerate().filter(|(s, _)| s.count_ones() == k).map(|p| p.1).sum::<f64>();
                assert!((block(&d) - block(mu.probs())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationary_examples() {
        let k = build_kernel(&GraphSpec::path(5, 1.0)).unwrap();
        let c = build_exact(&k).unwrap();
        let pi = exact_stationary(&c, 2).unwrap();
        for (s, &p) in pi.iter().enumerate() {
            let expected = if s.count_ones() == 2 { 0.1 } else { 0.0 };
            assert!((p - expected).abs() < 1e-12);
        }
        let empty = exact_stationary(&c, 0).unwrap();
        assert_eq!(empty[0], 1.0);
        let (_, kbar) = four_path();
        let c = build_exact(&kbar).unwrap();
        let pi = exact_stationary(&c, 2).unwrap();
        assert!(pi.iter().filter(|&&p| p > 0.0).any(|&p| (p - 1.0 / 6.0).abs() > 1e-3));
        let evolved = exact_transient(&c, &pi, 2.5).unwrap();
        assert!(pi.iter().zip(&evolved).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(exact_derivative(&c, &pi, &CylinderEvent::new(vec![2, 3]), 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn reducible_block_is_rejected() {
        let k = Kernel::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let c = build_exact(&k).unwrap();
        assert!(matches!(exact_stationary(&c, 1), Err(Error::ReducibleBlock(1))));
    }

    #[test]
    fn derivative_at_zero_matches_closed_form() {
        let (_, kbar) = four_path();
        let c = build_exact(&kbar).unwrap();
        let product = ProductMeasure::new(vec![0.2, 0.7, 0.4, 0.55]).unwrap();
        let mu = ExactMeasure::from_product(&product);
        for sites in [vec![0], vec![1], vec![2], vec![1, 2], vec![0, 3], vec![0, 1, 2]] {
            let a = CylinderEvent::new(sites);
            let exact = exact_derivative(&c, mu.probs(), &a, 0.0).unwrap();
            let closed = stationarity_residual(&product, &kbar, &a).unwrap();
            assert!((exact - closed).abs() < 1e-12, "{exact} {closed}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let (_, kbar) = four_path();
        let c = build_exact(&kbar).unwrap();
        let mu = ExactMeasure::from_product(&ProductMeasure::bernoulli(4, 0.5).unwrap());
        let a = CylinderEvent::new(vec![2]);
        let h = 1e-4;
        for t in [0.3, 1.0, 4.0] {
            let p = |s: f64| cylinder_probability(&exact_transient(&c, mu.probs(), s).unwrap(), &a);
            let fd = (p(t + h) - p(t - h)) / (2.0 * h);
            assert!((fd - exact_derivative(&c, mu.probs(), &a, t).unwrap()).abs() < 1e-6);
        }
    }
}
