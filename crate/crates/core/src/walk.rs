//! Green's functions and the potential kernel of the jump chain `Y_n`
//! (transition matrix `p(x,y)/p(x)`), computed by iterating the distribution
//! of `Y_n` from the origin.
//!
//! Windows must be wide enough that the walk cannot leave the interior within
//! the requested number of steps, so the numbers are those of the infinite
//! lattice. Masses below a pruning threshold are dropped and the total
//! dropped mass is reported.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Site};
use crate::rng::{Domain, Streams};
use crate::stats::{replicate, Estimate};

/// Default pruning threshold for distribution entries.
pub const PRUNE: f64 = 1e-20;

/// A symmetric kernel and the origin of the walk.
#[derive(Debug, Clone, Copy)]
pub struct WalkSpec<'a> {
    kernel: &'a Kernel,
    origin: Site,
    prune: f64,
}

impl<'a> WalkSpec<'a> {
    pub fn new(kernel: &'a Kernel, origin: Site) -> Result<Self> {
        kernel.require_symmetric()?;
        if origin >= kernel.n_sites() {
            return Err(Error::SiteOutOfWindow { site: origin, n_sites: kernel.n_sites() });
        }
        if !kernel.is_interior(origin) {
            return Err(Error::InvalidValue(format!("origin {origin} is not an interior site")));
        }
        Ok(Self { kernel, origin, prune: PRUNE })
    }

    /// Use `threshold` instead of [`PRUNE`]; `0` keeps every entry.
    pub fn with_prune(mut self, threshold: f64) -> Self {
        self.prune = threshold.max(0.0);
        self
    }

    pub fn kernel(&self) -> &'a Kernel {
        self.kernel
    }

    pub fn origin(&self) -> Site {
        self.origin
    }

    /// Site at `origin + offset` in lattice coordinates.
    pub fn offset(&self, offset: &[i64]) -> Result<Site> {
        let base = self
            .kernel
            .coords(self.origin)
            .ok_or_else(|| Error::InvalidValue("offsets need a lattice window".into()))?;
        if offset.len() != base.len() {
            return Err(Error::InvalidValue(format!("offset of dimension {} on a {}-d window", offset.len(), base.len())));
        }
        let c: Vec<i64> = base.iter().zip(offset).map(|(a, b)| a + b).collect();
        self.kernel
            .site_at(&c)
            .ok_or_else(|| Error::InvalidValue(format!("offset {offset:?} leaves the window")))
    }

    /// Refuse `steps` when the walk could feel the window edge.
    fn guard(&self, steps: usize) -> Result<()> {
        let k = self.kernel;
        let distance = if k.geometry().is_lattice() && k.geometry().periodic() {
            // a wrapped walk would meet its own image
            Some(k.geometry().dims.iter().min().copied().unwrap_or(0) / 2)
        } else {
            k.boundary_distance(&[self.origin])
        };
        match distance {
            Some(d) if d < steps => Err(Error::BoundaryReachable { origin: self.origin, steps, distance: d }),
            _ => Ok(()),
        }
    }
}

/// Iterate the law of `Y_k` for `k = 0..=steps`, calling `observe(k, law)`
/// after each step. With `taboo` the mass arriving at the origin after step 0
/// is handed to `observe` and then removed. Returns the pruned mass.
fn iterate(spec: &WalkSpec<'_>, steps: usize, taboo: bool, mut observe: impl FnMut(usize, &mut [f64])) -> f64 {
    let k = spec.kernel;
    let n = k.n_sites();
    let inv_exit: Vec<f64> = (0..n).map(|x| if k.exit_rate(x) > 0.0 { 1.0 / k.exit_rate(x) } else { 0.0 }).collect();
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut active: Vec<u32> = vec![spec.origin as u32];
    let mut next_active: Vec<u32> = Vec::new();
    let mut dropped = 0.0;
    cur[spec.origin] = 1.0;
    observe(0, &mut cur);
    for step in 1..=steps {
        for &x in &active {
            let m = cur[x as usize];
            cur[x as usize] = 0.0;
            if m == 0.0 {
                continue;
            }
            let w = m * inv_exit[x as usize];
            if w == 0.0 {
                // absorbing site
                if next[x as usize] == 0.0 {
                    next_active.push(x);
                }
                next[x as usize] += m;
                continue;
            }
            for (y, r) in k.out_edges(x as usize) {
                if next[y] == 0.0 {
                    next_active.push(y as u32);
                }
                next[y] += w * r;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut active, &mut next_active);
        next_active.clear();
        if taboo {
            observe(step, &mut cur);
            cur[spec.origin] = 0.0;
        }
        if spec.prune > 0.0 {
            active.retain(|&x| {
                let m = cur[x as usize];
                if m < spec.prune {
                    dropped += m;
                    cur[x as usize] = 0.0;
                    false
                } else {
                    true
                }
            });
        }
        if !taboo {
            observe(step, &mut cur);
        }
    }
    dropped
}

/// `G_n(o, x)` for several `x`, plus the same at `n/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenProfile {
    pub steps: usize,
    pub targets: Vec<Site>,
    pub green: Vec<f64>,
    pub green_half: Vec<f64>,
    pub dropped_mass: f64,
}

pub fn green_profile(spec: &WalkSpec<'_>, targets: &[Site], steps: usize) -> Result<GreenProfile> {
    spec.guard(steps)?;
    if let Some(&site) = targets.iter().find(|&&x| x >= spec.kernel.n_sites()) {
        return Err(Error::SiteOutOfWindow { site, n_sites: spec.kernel.n_sites() });
    }
    let mut green = vec![0.0; targets.len()];
    let mut green_half = vec![0.0; targets.len()];
    let half = steps / 2;
    let dropped_mass = iterate(spec, steps, false, |k, law| {
        for (g, &x) in green.iter_mut().zip(targets) {
            *g += law[x];
        }
        if k == half {
            green_half.copy_from_slice(&green);
        }
    });
    Ok(GreenProfile { steps, targets: targets.to_vec(), green, green_half, dropped_mass })
}

/// Expected visits to `x` in steps `0..=n`, counting the start.
pub fn green_n(spec: &WalkSpec<'_>, x: Site, steps: usize) -> Result<f64> {
    Ok(green_profile(spec, &[x], steps)?.green[0])
}

/// `a_n(x) = G_n(o,o) − G_n(o,x)` with the gap `|a_n − a_{n/2}|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialEstimate {
    pub sites: Vec<Site>,
    pub a_values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub n_used: usize,
    pub dropped_mass: f64,
}

pub fn potential_kernel(spec: &WalkSpec<'_>, xs: &[Site], steps: usize) -> Result<PotentialEstimate> {
    let mut targets = vec![spec.origin];
    targets.extend_from_slice(xs);
    let p = green_profile(spec, &targets, steps)?;
    let a: Vec<f64> = p.green[1..].iter().map(|g| p.green[0] - g).collect();
    let a_half: Vec<f64> = p.green_half[1..].iter().map(|g| p.green_half[0] - g).collect();
    Ok(PotentialEstimate {
        sites: xs.to_vec(),
        gaps: a.iter().zip(&a_half).map(|(x, y)| (x - y).abs()).collect(),
        a_values: a,
        n_used: steps,
        dropped_mass: p.dropped_mass,
    })
}

/// Whether `|a(x+y) − a(x)|` dies out along the scanned ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Vanishing,
    NonVanishing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub radius: usize,
    pub x: Site,
    pub value: f64,
    /// Gap of the difference between `n` and `n/2` steps.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisScan {
    pub offset: Vec<i64>,
    pub rows: Vec<ScanRow>,
    pub trend: Trend,
    pub n_used: usize,
    pub dropped_mass: f64,
}

impl HypothesisScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,value,gap\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.radius, r.value, r.gap);
        }
        s
    }
}

/// `|a(x+y) − a(x)|` at `x = o + r·e_1` for each radius. The trend is
/// vanishing when the last value is at most half the first.
pub fn potential_shift_scan(spec: &WalkSpec<'_>, y: &[i64], radii: &[usize], steps: usize) -> Result<HypothesisScan> {
    let dim = y.len();
    let mut xs = Vec::with_capacity(2 * radii.len());
    for &r in radii {
        let mut e = vec![0i64; dim];
        if dim > 0 {
            e[0] = r as i64;
        }
        let x = spec.offset(&e)?;
        let shifted: Vec<i64> = e.iter().zip(y).map(|(a, b)| a + b).collect();
        xs.push(x);
        xs.push(spec.offset(&shifted)?);
    }
    let pk = potential_kernel(spec, &xs, steps)?;
    let rows: Vec<ScanRow> = radii
        .iter()
        .enumerate()
        .map(|(i, &radius)| ScanRow {
            radius,
            x: xs[2 * i],
            value: (pk.a_values[2 * i + 1] - pk.a_values[2 * i]).abs(),
            gap: pk.gaps[2 * i + 1] + pk.gaps[2 * i],
        })
        .collect();
    let trend = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) if l.value > 0.5 * f.value => Trend::NonVanishing,
        _ => Trend::Vanishing,
    };
    Ok(HypothesisScan { offset: y.to_vec(), rows, trend, n_used: steps, dropped_mass: pk.dropped_mass })
}

/// `P^o(Y_k = o for some 1 ≤ k ≤ n)`, by iteration with the origin as taboo.
pub fn return_probability(spec: &WalkSpec<'_>, steps: usize) -> Result<f64> {
    spec.guard(steps)?;
    let o = spec.origin;
    let mut returned = 0.0;
    iterate(spec, steps, true, |k, law| {
        if k > 0 {
            returned += law[o];
        }
    });
    Ok(returned)
}

/// Monte Carlo count of visits to `x` in steps `0..=n`.
pub fn green_mc(spec: &WalkSpec<'_>, x: Site, steps: usize, replicas: usize, seed: u64, threads: Option<usize>) -> Result<Estimate> {
    spec.guard(steps)?;
    let k = spec.kernel;
    let visits = replicate(replicas, seed, threads, |_, s| {
        let mut rng = Streams::new(s).stream(Domain::Walk, 1, 0);
        let mut y = spec.origin;
        let mut count = (y == x) as u32;
        for _ in 0..steps {
            let exit = k.exit_rate(y);
            let mut u = rng.random::<f64>() * exit;
            for (z, r) in k.out_edges(y) {
                y = z;
                if u < r {
                    break;
                }
                u -= r;
            }
            count += (y == x) as u32;
        }
        count as f64
    });
    Ok(Estimate::from_samples(&visits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, perturb, BoundaryMode, GraphSpec, Perturbation};

    fn line(n: usize) -> Kernel {
        build_kernel(&GraphSpec::path(2 * n + 3, 1.0)).unwrap()
    }

    fn binomial_return(k: usize) -> f64 {
        // C(k, k/2) / 2^k for even k, by a stable product
        if k % 2 == 1 {
            return 0.0;
        }
        (1..=k / 2).map(|i| (k / 2 + i) as f64 / (4.0 * i as f64)).product()
    }

    #[test]
    fn small_cases() {
        let k = line(10);
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let o = spec.origin();
        assert_eq!(green_n(&spec, o, 0).unwrap(), 1.0);
        assert_eq!(green_n(&spec, o + 1, 0).unwrap(), 0.0);
        assert_eq!(green_n(&spec, o, 2).unwrap(), 1.5);
        assert_eq!(return_probability(&spec, 1).unwrap(), 0.0);
        assert_eq!(return_probability(&spec, 2).unwrap(), 0.5);
        let g = green_profile(&spec, &[o - 3, o + 3], 10).unwrap();
        assert_eq!(g.green[0], g.green[1]);
    }

    #[test]
    fn matches_binomial_closed_form() {
        let n = 400;
        let k = line(n);
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap().with_prune(0.0);
        let exact: f64 = (0..=n).map(binomial_return).sum();
        assert!((green_n(&spec, spec.origin(), n).unwrap() - exact).abs() < 1e-10);
        let pruned = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let g = green_profile(&pruned, &[pruned.origin()], n).unwrap();
        assert!((g.green[0] - exact).abs() < 1e-12);
        assert!(g.dropped_mass < 1e-15);
    }

    #[test]
    fn boundary_guard() {
        let k = line(10);
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        assert!(green_n(&spec, spec.origin(), 11).is_ok());
        assert!(matches!(green_n(&spec, spec.origin(), 12), Err(Error::BoundaryReachable { .. })));
        let torus = build_kernel(&GraphSpec::torus(vec![10, 10], 1.0)).unwrap();
        let spec = WalkSpec::new(&torus, 0).unwrap();
        assert!(green_n(&spec, 0, 5).is_ok());
        assert!(green_n(&spec, 0, 6).is_err());
        assert!(WalkSpec::new(&k, 0).is_err());
        let kbar = perturb(&k, &Perturbation::single(3, 4, 0.2)).unwrap();
        assert!(matches!(WalkSpec::new(&kbar, 5), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn potential_kernel_one_dimension() {
        let n = 20_000;
        let k = line(n);
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let o = spec.origin();
        let pk = potential_kernel(&spec, &[o, o + 1, o - 1, o + 5], n).unwrap();
        assert_eq!(pk.a_values[0], 0.0);
        // a(x) = |x|; truncation bias grows like x²/√n
        for (a, (x, tol)) in pk.a_values[1..].iter().zip([(1.0, 0.01), (1.0, 0.01), (5.0, 0.1)]) {
            assert!((a - x).abs() < tol, "{a} vs {x}");
        }
        assert!(pk.gaps[1] < 0.01);
    }

    #[test]
    fn potential_kernel_two_dimensions() {
        let n = 300;
        let side = 2 * n + 3;
        let k = build_kernel(&GraphSpec::lattice_box(vec![side, side], BoundaryMode::Reflecting, 0.25)).unwrap();
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let xs = [spec.offset(&[1, 0]).unwrap(), spec.offset(&[2, 0]).unwrap(), spec.offset(&[0, 1]).unwrap()];
        let pk = potential_kernel(&spec, &xs, n).unwrap();
        assert!((pk.a_values[0] - 1.0).abs() < 0.01, "{:?}", pk.a_values);
        assert!((pk.a_values[1] - (4.0 - 8.0 / std::f64::consts::PI)).abs() < 0.01);
        assert!((pk.a_values[0] - pk.a_values[2]).abs() < 1e-12);
        let scan = potential_shift_scan(&spec, &[1, 0], &[1, 2, 4, 8], n).unwrap();
        assert!(scan.rows.windows(2).all(|w| w[1].value < w[0].value));
        assert_eq!(scan.trend, Trend::Vanishing);
        assert!(scan.to_csv().starts_with("radius,value,gap\n1,"));
        let zero = potential_shift_scan(&spec, &[0, 0], &[1, 2], 50).unwrap();
        assert!(zero.rows.iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn three_dimensional_return_probability_plateaus() {
        let n = 60;
        let side = 2 * n + 3;
        let k = build_kernel(&GraphSpec::lattice_box(vec![side; 3], BoundaryMode::Reflecting, 1.0 / 6.0)).unwrap();
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let r30 = return_probability(&spec, 30).unwrap();
        let r60 = return_probability(&spec, 60).unwrap();
        assert!(r30 < r60 && r60 < 0.35, "{r30} {r60}");
        assert!(r60 - r30 < 0.02);
        let line = line(60);
        let spec = WalkSpec::new(&line, line.center().unwrap()).unwrap();
        assert!(return_probability(&spec, 60).unwrap() > 0.89);
    }

    #[test]
    fn distribution_iteration_matches_visit_counting() {
        let n = 1000;
        let k = line(n);
        let spec = WalkSpec::new(&k, k.center().unwrap()).unwrap();
        let x = spec.origin() + 2;
        let exact = green_n(&spec, x, n).unwrap();
        let mc = green_mc(&spec, x, n, 4000, 7, None).unwrap();
        assert!(mc.agrees_with_value(exact, 3.0), "{mc:?} {exact}");
        let side = 2 * n + 3;
        let k2 = build_kernel(&GraphSpec::lattice_box(vec![side, side], BoundaryMode::Reflecting, 1.0)).unwrap();
        let spec = WalkSpec::new(&k2, k2.center().unwrap()).unwrap();
        let x = spec.offset(&[1, 1]).unwrap();
        let exact = green_n(&spec, x, n).unwrap();
        let mc = green_mc(&spec, x, n, 4000, 8, None).unwrap();
        assert!(mc.agrees_with_value(exact, 3.0), "{mc:?} {exact}");
    }
}
