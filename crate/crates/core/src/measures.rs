//! Initial measures, exact stationarity residuals and cylinder estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphical::{sample_event_log_with, ClockScheme, ClockSet};
use crate::kernel::{light_cone_buffer, Kernel, Site};
use crate::lineage::Lineage;
use crate::process::{apply_log, Configuration, CylinderEvent};
use crate::rng::{Domain, Streams};
use crate::stats::{replicate, Estimate};

/// Law of an initial configuration.
pub trait InitialMeasure: Send + Sync {
    fn n_sites(&self) -> usize;

    /// Draw from the measure conditioned on `forced` `(site, value)` pairs.
    /// Product measures draw site `x` from the `(seed, Site, x)` stream, so
    /// every unforced site agrees with [`ProductMeasure::site_value`].
    fn sample_given(&self, seed: u64, forced: &[(Site, u8)]) -> Vec<u8>;

    /// `μ{η = 1 on ones, η = 0 on zeros}`.
    fn prob(&self, ones: &[Site], zeros: &[Site]) -> f64;

    fn as_product(&self) -> Option<&ProductMeasure> {
        None
    }

    fn sample(&self, seed: u64) -> Vec<u8> {
        self.sample_given(seed, &[])
    }

    fn cylinder_prob(&self, a: &CylinderEvent) -> f64 {
        self.prob(a.sites(), &[])
    }

    /// Dense state probabilities (site `i` as bit `i`) for small windows.
    fn state_probs(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Product measure `ν_α` with marginals `α(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasure {
    alpha: Vec<f64>,
}

impl ProductMeasure {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        for (site, &value) in alpha.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ProfileOutOfRange { site, value });
            }
        }
        Ok(Self { alpha })
    }

    pub fn bernoulli(n: usize, rho: f64) -> Result<Self> {
        Self::new(vec![rho; n])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Site `x`'s draw under replica `seed`.
    #[inline]
    pub fn site_value(&self, streams: &Streams, site: Site) -> u8 {
        let u: f64 = streams.stream(Domain::Site, site as u64, 0).random();
        (u < self.alpha[site]) as u8
    }
}

impl InitialMeasure for ProductMeasure {
    fn n_sites(&self) -> usize {
        self.alpha.len()
    }

    fn sample_given(&self, seed: u64, forced: &[(Site, u8)]) -> Vec<u8> {
        let streams = Streams::new(seed);
        let mut bits: Vec<u8> = (0..self.alpha.len()).map(|x| self.site_value(&streams, x)).collect();
        for &(x, v) in forced {
            bits[x] = v;
        }
        bits
    }

    fn prob(&self, ones: &[Site], zeros: &[Site]) -> f64 {
        ones.iter().map(|&x| self.alpha[x]).product::<f64>() * zeros.iter().map(|&x| 1.0 - self.alpha[x]).product::<f64>()
    }

    fn as_product(&self) -> Option<&ProductMeasure> {
        Some(self)
    }

    fn state_probs(&self) -> Option<Vec<f64>> {
        (self.n_sites() <= 20).then(|| ExactMeasure::from_product(self).probs)
    }
}

/// Arbitrary law on `{0,1}^n` for small `n`; state index has site `i` as bit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMeasure {
    n_sites: usize,
    probs: Vec<f64>,
}

impl ExactMeasure {
    pub fn new(n_sites: usize, probs: Vec<f64>) -> Result<Self> {
        if n_sites > 24 || probs.len() != 1usize << n_sites {
            return Err(Error::InvalidValue(format!("distribution of length {} on {n_sites} sites", probs.len())));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidValue("negative state probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidValue(format!("state probabilities sum to {total}")));
        }
        Ok(Self { n_sites, probs })
    }

    /// Dense state vector of a product measure.
    pub fn from_product(mu: &ProductMeasure) -> Self {
        let n = mu.n_sites();
        let probs = (0..1usize << n)
            .map(|s| (0..n).map(|i| if (s >> i) & 1 == 1 { mu.alpha[i] } else { 1.0 - mu.alpha[i] }).product())
            .collect();
        Self { n_sites: n, probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn matches(state: usize, forced: &[(Site, u8)]) -> bool {
        forced.iter().all(|&(x, v)| ((state >> x) & 1) as u8 == v)
    }
}

impl InitialMeasure for ExactMeasure {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn sample_given(&self, seed: u64, forced: &[(Site, u8)]) -> Vec<u8> {
        let mass: f64 = (0..self.probs.len()).filter(|&s| Self::matches(s, forced)).map(|s| self.probs[s]).sum();
        let mut u = Streams::new(seed).stream(Domain::Site, u64::MAX, 0).random::<f64>() * mass;
        let mut pick = None;
        for (s, &p) in self.probs.iter().enumerate() {
            if p > 0.0 && Self::matches(s, forced) {
                pick = Some(s);
                if u < p {
                    break;
                }
                u -= p;
            }
        }
        let s = pick.unwrap_or(0);
        let mut bits: Vec<u8> = (0..self.n_sites).map(|i| ((s >> i) & 1) as u8).collect();
        for &(x, v) in forced {
            bits[x] = v;
        }
        bits
    }

    fn prob(&self, ones: &[Site], zeros: &[Site]) -> f64 {
        let forced: Vec<(Site, u8)> = ones.iter().map(|&x| (x, 1)).chain(zeros.iter().map(|&x| (x, 0))).collect();
        (0..self.probs.len()).filter(|&s| Self::matches(s, &forced)).map(|s| self.probs[s]).sum()
    }

    fn state_probs(&self) -> Option<Vec<f64>> {
        Some(self.probs.clone())
    }
}

/// `ν^c` on a path window whose perturbed edge `(u, u+1)` sits at window
/// coordinates `(0, 1)`: `α = c/(1+c)` at and left of `u`, and
/// `(c+2cε)/(1+c+2cε)` right of it. `c = ∞` gives `α ≡ 1`.
pub fn nu_c(c: f64, eps: f64, n_sites: usize, u: Site) -> Result<ProductMeasure> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::InvalidValue(format!("c = {c}")));
    }
    if u + 1 >= n_sites {
        return Err(Error::SiteOutOfWindow { site: u + 1, n_sites });
    }
    let (left, right) = if c.is_infinite() {
        (1.0, 1.0)
    } else {
        let r = c + 2.0 * c * eps;
        (c / (1.0 + c), r / (1.0 + r))
    };
    ProductMeasure::new((0..n_sites).map(|x| if x <= u { left } else { right }).collect())
}

/// Exact `∫ Ω̄ f_A dμ` for a product measure: the sum over directed edges
/// `(x, y)` with exactly one endpoint in `A`.
pub fn stationarity_residual(mu: &ProductMeasure, kbar: &Kernel, a: &CylinderEvent) -> Result<f64> {
    a.check_window(kbar.n_sites())?;
    if mu.n_sites() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), mu.n_sites()));
    }
    let al = mu.alpha();
    let sites = a.sites();
    let without = |skip: Site| -> f64 { sites.iter().filter(|&&s| s != skip).map(|&s| al[s]).product() };
    let mut total = 0.0;
    for (x, y, r) in kbar.edges() {
        match (a.contains(x), a.contains(y)) {
            // flux into and out of A across {x,y}, paired so symmetric terms cancel exactly
            (true, false) => {
                let inflow = kbar.rate(y, x) * al[y] * (1.0 - al[x]);
                total += (inflow - r * al[x] * (1.0 - al[y])) * without(x);
            }
            (false, true) if kbar.rate(y, x) == 0.0 => total += r * al[x] * (1.0 - al[y]) * without(y),
            _ => {}
        }
    }
    Ok(total)
}

/// Monte Carlo engine for cylinder estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Materialise the whole event log and run forward.
    Forward,
    /// Evaluate only the observed sites backwards on lazy clocks; product measures only.
    Lineage,
}

/// Cylinder probability estimate with run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Whether the observation set is at least the light-cone buffer away
    /// from the window boundary.
    pub buffer_valid: bool,
    pub boundary_distance: Option<usize>,
    pub required_buffer: usize,
}

impl MeasureEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, stderr: self.stderr, replicas: self.replicas }
    }
}

/// Options shared by the cylinder estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub backend: Backend,
    /// Light-cone buffer factor; buffer = factor × row_sup × horizon.
    pub buffer_factor: f64,
    pub threads: Option<usize>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { backend: Backend::Forward, buffer_factor: 3.0, threads: None }
    }
}

fn buffer_report(kbar: &Kernel, a: &CylinderEvent, horizon: f64, factor: f64) -> (bool, Option<usize>, usize) {
    let required = light_cone_buffer(kbar.row_sup(), horizon, factor);
    let dist = kbar.boundary_distance(a.sites());
    (dist.is_none_or(|d| d >= required), dist, required)
}

fn validate(mu: &dyn InitialMeasure, kbar: &Kernel, a: &CylinderEvent, backend: Backend) -> Result<()> {
    a.check_window(kbar.n_sites())?;
    if mu.n_sites() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), mu.n_sites()));
    }
    if backend == Backend::Lineage && mu.as_product().is_none() {
        return Err(Error::InvalidValue("the lineage backend needs a product initial measure".into()));
    }
    Ok(())
}

/// Per-replica values `(1/T)∫` approximated on `grid` with trapezoid weights,
/// or the plain cylinder value when the grid has one point.
#[allow(clippy::too_many_arguments)]
fn replica_values(
    mu: &dyn InitialMeasure,
    kbar: &Kernel,
    set: &ClockSet,
    a: &CylinderEvent,
    grid: &[f64],
    weights: &[f64],
    seed: u64,
    backend: Backend,
) -> Result<f64> {
    let horizon = grid.iter().cloned().fold(0.0, f64::max);
    match backend {
        Backend::Forward => {
            let eta0 = Configuration::for_kernel(kbar, mu.sample(seed))?;
            if grid.len() == 1 {
                let log = sample_event_log_with(set, horizon, seed)?;
                return Ok(a.indicator(apply_log(&eta0, kbar, &log)?.bits()) as f64);
            }
            let log = sample_event_log_with(set, horizon, seed)?;
            let (_, traj) = crate::process::apply_log_traced(&eta0, kbar, &log)?;
            let cps = traj.checkpoints(grid);
            Ok(cps.iter().zip(weights).map(|((_, eta), w)| w * a.indicator(eta.bits()) as f64).sum())
        }
        Backend::Lineage => {
            let product = mu.as_product().expect("validated");
            let streams = Streams::new(seed);
            let init = |x: Site| product.site_value(&streams, x);
            let mut lin = Lineage::new(set, kbar, seed, horizon, init);
            Ok(grid
                .iter()
                .zip(weights)
                .map(|(&t, w)| {
                    // checkpoints include rings at exactly t; the lineage is strict, nudge past t
                    let t = if t >= horizon { t } else { t.next_up() };
                    w * lin.cylinder(a.sites(), t) as f64
                })
                .sum())
        }
    }
}

/// Monte Carlo estimate of `μS̄(t){η ≡ 1 on A}`.
pub fn estimate_cylinder(
    mu: &dyn InitialMeasure,
    kbar: &Kernel,
    a: &CylinderEvent,
    t: f64,
    replicas: usize,
    seed: u64,
    opts: EstimatorOptions,
) -> Result<MeasureEstimate> {
    validate(mu, kbar, a, opts.backend)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidValue(format!("time {t}")));
    }
    let (buffer_valid, boundary_distance, required_buffer) = buffer_report(kbar, a, t, opts.buffer_factor);
    if a.is_empty() {
        return Ok(MeasureEstimate {
            value: 1.0,
            stderr: 0.0,
            replicas,
            seed,
            buffer_valid,
            boundary_distance,
            required_buffer,
        });
    }
    let set = ClockSet::new(kbar, ClockScheme::Stirring);
    let values = replicate(replicas, seed, opts.threads, |_, s| {
        replica_values(mu, kbar, &set, a, &[t], &[1.0], s, opts.backend)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let successes = values.iter().filter(|&&v| v > 0.5).count();
    let e = Estimate::from_bernoulli(successes, replicas);
    Ok(MeasureEstimate {
        value: e.value,
        stderr: e.stderr,
        replicas,
        seed,
        buffer_valid,
        boundary_distance,
        required_buffer,
    })
}

/// `points` equally spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![horizon],
        _ => (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Trapezoid weights normalised by the grid span, so they sum to one.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let span = grid[n - 1] - grid[0];
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += h / 2.0;
        w[i + 1] += h / 2.0;
    }
    if span > 0.0 {
        w.iter_mut().for_each(|x| *x /= span);
    }
    w
}

/// Trapezoidal time average of `μS̄(t){η ≡ 1 on A}` over `grid`, estimated
/// from one path per replica observed at every grid time.
pub fn cesaro_average(
    mu: &dyn InitialMeasure,
    kbar: &Kernel,
    a: &CylinderEvent,
    grid: &[f64],
    replicas: usize,
    seed: u64,
    opts: EstimatorOptions,
) -> Result<MeasureEstimate> {
    validate(mu, kbar, a, opts.backend)?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] < w[0]) || grid[0] < 0.0 || !grid.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidValue("Cesàro grid must be a nonempty increasing list of times >= 0".into()));
    }
    let horizon = grid[grid.len() - 1];
    let (buffer_valid, boundary_distance, required_buffer) = buffer_report(kbar, a, horizon, opts.buffer_factor);
    let weights = trapezoid_weights(grid);
    let set = ClockSet::new(kbar, ClockScheme::Stirring);
    let values = replicate(replicas, seed, opts.threads, |_, s| {
        replica_values(mu, kbar, &set, a, grid, &weights, s, opts.backend)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let e = Estimate::from_samples(&values);
    Ok(MeasureEstimate {
        value: e.value,
        stderr: e.stderr,
        replicas,
        seed,
        buffer_valid,
        boundary_distance,
        required_buffer,
    })
}
