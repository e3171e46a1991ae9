//! Experiment configuration files (TOML).
//!
//! A config names one experiment kind under `[experiment]`, the window under
//! `[graph]`, optional `[[perturbation]]` entries and an optional `[measure]`.
//! Sites are written as a plain index, as absolute lattice coordinates, or as
//! `{ offset = [...] }` relative to the window center.

use std::path::PathBuf;

use exclusion_core::coupling::{LhsMode, Reference, ResidualMode};
use exclusion_core::kernel::{build_kernel, perturb, GraphSpec, Kernel, Perturbation, PerturbationEntry, Site};
use exclusion_core::measures::{nu_c, Backend, InitialMeasure, ProductMeasure};
use exclusion_core::walk::Trend;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

fn default_sigma() -> f64 {
    3.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub replicas: usize,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Where results go unless `--output-dir` is given.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbation: Vec<EntryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
    pub experiment: Experiment,
}

/// A site by index, by lattice coordinates, or by offset from the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteSpec {
    Index(usize),
    Coords(Vec<i64>),
    Relative { offset: Vec<i64> },
}

impl SiteSpec {
    pub fn resolve(&self, k: &Kernel) -> Result<Site, LabError> {
        let site = match self {
            SiteSpec::Index(i) => Some(*i).filter(|&i| i < k.n_sites()),
            SiteSpec::Coords(c) => k.site_at(c),
            SiteSpec::Relative { offset } => k.center().and_then(|o| {
                let base = k.coords(o)?;
                if base.len() != offset.len() {
                    return None;
                }
                let c: Vec<i64> = base.iter().zip(offset).map(|(a, b)| a + b).collect();
                k.site_at(&c)
            }),
        };
        site.ok_or_else(|| LabError::Config(format!("site {} is not in the window", self.describe())))
    }

    fn describe(&self) -> String {
        match self {
            SiteSpec::Index(i) => i.to_string(),
            SiteSpec::Coords(c) => format!("{c:?}"),
            SiteSpec::Relative { offset } => format!("center{offset:+?}"),
        }
    }
}

pub fn resolve_all(specs: &[SiteSpec], k: &Kernel) -> Result<Vec<Site>, LabError> {
    specs.iter().map(|s| s.resolve(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryConfig {
    pub x: SiteSpec,
    pub y: SiteSpec,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureConfig {
    Bernoulli {
        rho: f64,
    },
    Product {
        alpha: Vec<f64>,
    },
    /// The two-density family; `eps` and `u` default to the single
    /// perturbation entry.
    NuC {
        c: f64,
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        u: Option<SiteSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Forward,
    Gillespie,
    Lineage,
    /// Arrows-log basic coupling; reports both marginals.
    Coupled,
    /// Direct simulation of the coupled generator; reports both marginals.
    CoupledGillespie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualityMode {
    #[default]
    Pathwise,
    Approximate,
    Hitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenExpect {
    Stabilizes,
    Grows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LhsConfig {
    #[default]
    FiniteDifference,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateParams),
    Duality(DualityParams),
    Infinitesimal(InfinitesimalParams),
    Derivative(DerivativeParams),
    Green(GreenParams),
    Cesaro(CesaroParams),
    Potential(PotentialParams),
    Stationarity(StationarityParams),
    OracleCompare(OracleParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Duality(_) => "duality",
            Experiment::Infinitesimal(_) => "infinitesimal",
            Experiment::Derivative(_) => "derivative",
            Experiment::Green(_) => "green",
            Experiment::Cesaro(_) => "cesaro",
            Experiment::Potential(_) => "potential",
            Experiment::Stationarity(_) => "stationarity",
            Experiment::OracleCompare(_) => "oracle-compare",
        }
    }
}

fn forward() -> Engine {
    Engine::Forward
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub horizon: f64,
    /// Observation times; defaults to the horizon alone.
    #[serde(default)]
    pub times: Vec<f64>,
    pub cylinders: Vec<Vec<SiteSpec>>,
    #[serde(default = "forward")]
    pub engine: Engine,
    /// Export replica 0's configuration at each time.
    #[serde(default)]
    pub trajectory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityParams {
    #[serde(default)]
    pub mode: DualityMode,
    pub horizon: f64,
    /// `A` for the pathwise and approximate modes.
    #[serde(default)]
    pub cylinder: Vec<SiteSpec>,
    /// Initial dual sets for the hitting mode.
    #[serde(default)]
    pub sets: Vec<Vec<SiteSpec>>,
    #[serde(default)]
    pub target: Option<SiteSpec>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Compare singleton sets against a directly simulated walk.
    #[serde(default)]
    pub walk_comparison: bool,
    /// Hitting probabilities strictly decrease along `sets`.
    #[serde(default)]
    pub expect_decreasing: bool,
    #[serde(default = "yes")]
    pub expect_pathwise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfinitesimalParams {
    pub s: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "yes")]
    pub expect_table: bool,
    #[serde(default)]
    pub slope: Option<SlopeParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceConfig {
    #[default]
    Exact,
    Forward,
    Lineage,
}

impl ReferenceConfig {
    pub fn reference(self) -> Reference {
        match self {
            ReferenceConfig::Exact => Reference::Exact,
            ReferenceConfig::Forward => Reference::MonteCarlo(Backend::Forward),
            ReferenceConfig::Lineage => Reference::MonteCarlo(Backend::Lineage),
        }
    }
}

fn rao_blackwell() -> ResidualMode {
    ResidualMode::RaoBlackwell
}

/// `E f(ξ^s_0) − ∫f dμS̄(s)` for `f` the indicator of `cylinder`, at each `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeParams {
    pub cylinder: Vec<SiteSpec>,
    /// Small times, largest first.
    pub s: Vec<f64>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default = "rao_blackwell")]
    pub mode: ResidualMode,
    /// `|residual|/s` decreases along `s` and the last is at most half the first.
    #[serde(default = "yes")]
    pub expect_slope: bool,
}

fn default_h() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeParams {
    pub cylinder: Vec<SiteSpec>,
    pub times: Vec<f64>,
    #[serde(default)]
    pub lhs: LhsConfig,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "yes")]
    pub expect_agree: bool,
    #[serde(default = "yes")]
    pub expect_bound: bool,
}

impl DerivativeParams {
    pub fn lhs_mode(&self) -> LhsMode {
        match self.lhs {
            LhsConfig::Exact => LhsMode::Exact,
            LhsConfig::FiniteDifference => LhsMode::FiniteDifference { h: self.h },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenParams {
    pub z: SiteSpec,
    /// Sites `x` of `G*(z, x)`; defaults to `z`.
    #[serde(default)]
    pub sites: Vec<SiteSpec>,
    /// Truncation horizons, each estimated from its own replica set.
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub expect: Option<GreenExpect>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn lineage() -> Backend {
    Backend::Lineage
}

fn default_grid() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CesaroParams {
    pub cylinders: Vec<Vec<SiteSpec>>,
    pub horizon: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "lineage")]
    pub backend: Backend,
    /// Value the averages are compared with, e.g. the initial density.
    #[serde(default)]
    pub reference: Option<f64>,
    /// `|estimate − reference|` is nonincreasing along `cylinders` and the
    /// last one is within `sigma` of zero.
    #[serde(default)]
    pub expect_decay: bool,
    #[serde(default)]
    pub require_buffer: bool,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_prune() -> f64 {
    exclusion_core::walk::PRUNE
}

fn default_tolerance() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    /// Walk origin; defaults to the window center.
    #[serde(default)]
    pub origin: Option<SiteSpec>,
    /// The shift `y` in `a(x+y) − a(x)`.
    pub offset: Vec<i64>,
    pub radii: Vec<usize>,
    pub steps: usize,
    /// Also report the return probability within this many steps.
    #[serde(default)]
    pub return_steps: Option<usize>,
    #[serde(default)]
    pub expect_trend: Option<Trend>,
    /// Expected value at the largest radius.
    #[serde(default)]
    pub final_target: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub final_tolerance: f64,
    #[serde(default = "default_prune")]
    pub prune: f64,
}

fn default_max_size() -> usize {
    3
}

fn default_residual_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityParams {
    /// Values of `c` for the two-density family; empty uses `[measure]`.
    #[serde(default)]
    pub c: Vec<f64>,
    /// Perturbation sizes swept on the single perturbed pair; empty keeps
    /// the configured one.
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Explicit cylinders; by default every interior set of size up to `max_size`.
    #[serde(default)]
    pub cylinders: Vec<Vec<SiteSpec>>,
    #[serde(default = "default_max_size")]
    pub max_size: usize,
    #[serde(default = "default_residual_tol")]
    pub tolerance: f64,
}

fn all_engines() -> Vec<Engine> {
    vec![Engine::Forward, Engine::Gillespie, Engine::Coupled]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub times: Vec<f64>,
    pub cylinders: Vec<Vec<SiteSpec>>,
    #[serde(default = "all_engines")]
    pub engines: Vec<Engine>,
    /// Sites where the coupled engines start `ξ` at 1 instead of `η`'s value.
    #[serde(default)]
    pub xi_ones: Vec<SiteSpec>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hash of everything that affects results; thread count and output
    /// location are excluded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Kernels and measure built from a config, with every site resolved.
pub struct Prepared {
    pub k: Kernel,
    pub kbar: Kernel,
    pub perturbation: Perturbation,
    pub measure: Option<ProductMeasure>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, LabError> {
        if cfg.replicas == 0 {
            return Err(LabError::Config("replicas must be positive".into()));
        }
        let k = build_kernel(&cfg.graph)?;
        let entries = cfg
            .perturbation
            .iter()
            .map(|e| Ok(PerturbationEntry { x: e.x.resolve(&k)?, y: e.y.resolve(&k)?, eps: e.eps }))
            .collect::<Result<Vec<_>, LabError>>()?;
        for (i, e) in entries.iter().enumerate() {
            Perturbation::single(e.x, e.y, e.eps)
                .validate(&k)
                .map_err(|err| LabError::Config(format!("perturbation entry {i} (x={}, y={}, eps={}): {err}", e.x, e.y, e.eps)))?;
        }
        let perturbation = Perturbation::new(entries);
        let kbar = perturb(&k, &perturbation)?;
        let measure = cfg.measure.as_ref().map(|m| build_measure(m, &k, &perturbation)).transpose()?;
        Ok(Self { k, kbar, perturbation, measure })
    }

    pub fn mu(&self) -> Result<&dyn InitialMeasure, LabError> {
        self.measure
            .as_ref()
            .map(|m| m as &dyn InitialMeasure)
            .ok_or_else(|| LabError::Config("this experiment needs a [measure] section".into()))
    }

    pub fn single_entry(&self) -> Result<PerturbationEntry, LabError> {
        match self.perturbation.entries.as_slice() {
            [e] => Ok(*e),
            other => Err(LabError::Config(format!("exactly one [[perturbation]] entry is required, found {}", other.len()))),
        }
    }
}

fn build_measure(m: &MeasureConfig, k: &Kernel, pert: &Perturbation) -> Result<ProductMeasure, LabError> {
    let n = k.n_sites();
    Ok(match m {
        MeasureConfig::Bernoulli { rho } => ProductMeasure::bernoulli(n, *rho)?,
        MeasureConfig::Product { alpha } => {
            if alpha.len() != n {
                return Err(LabError::Config(format!("measure.alpha has {} entries for {n} sites", alpha.len())));
            }
            ProductMeasure::new(alpha.clone())?
        }
        MeasureConfig::NuC { c, eps, u } => {
            let first = pert.entries.first();
            let eps = eps
                .or(first.map(|e| e.eps))
                .ok_or_else(|| LabError::Config("nu-c needs eps or a perturbation entry".into()))?;
            let u = match u {
                Some(s) => s.resolve(k)?,
                None => first.map(|e| e.x).ok_or_else(|| LabError::Config("nu-c needs u or a perturbation entry".into()))?,
            };
            nu_c(*c, eps, n, u)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 4
replicas = 10

[graph]
family = "box"
sides = [5, 5]
base_rate = 0.25

[[perturbation]]
x = { offset = [0, 0] }
y = [3, 2]
eps = 0.5

[measure]
type = "nu-c"
c = 1.0

[experiment]
kind = "green"
z = 12
horizons = [1.0]
"#;

    #[test]
    fn site_specs_resolve_three_ways() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let prep = Prepared::new(&cfg).unwrap();
        let e = prep.single_entry().unwrap();
        // center of a 5x5 box is (2,2) = site 12, first coordinate fastest
        assert_eq!((e.x, e.y), (12, 13));
        let Experiment::Green(g) = &cfg.experiment else { panic!("kind") };
        assert_eq!(g.z.resolve(&prep.k).unwrap(), 12);
        assert!(SiteSpec::Relative { offset: vec![3, 0] }.resolve(&prep.k).is_err());
        assert!(SiteSpec::Index(25).resolve(&prep.k).is_err());
    }

    #[test]
    fn nu_c_defaults_to_the_perturbed_pair() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let prep = Prepared::new(&cfg).unwrap();
        let alpha = prep.measure.unwrap().alpha().to_vec();
        assert_eq!(alpha[12], 0.5);
        assert!((alpha[13] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_ignores_threads_and_output_dir() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let b = ExperimentConfig::from_toml(&format!("threads = 7\noutput_dir = \"x\"\n{BASE}")).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ExperimentConfig::from_toml(&BASE.replace("seed = 4", "seed = 5")).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_measures() {
        assert!(ExperimentConfig::from_toml(&BASE.replace("c = 1.0", "c = 1.0\nrho = 0.2")).is_err());
        let cfg = ExperimentConfig::from_toml(&BASE.replace("type = \"nu-c\"\nc = 1.0", "type = \"product\"\nalpha = [0.5]"))
            .unwrap();
        assert!(matches!(Prepared::new(&cfg), Err(LabError::Config(m)) if m.contains("alpha")));
    }
}
