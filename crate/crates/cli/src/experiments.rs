//! One function per experiment kind. Each returns its results as JSON, the
//! declared assertions and any CSV detail tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use exclusion_core::coupling::{
    derivative_check, discrepancy_green, evolve_coupled, finite_s_residual, gillespie_coupled, CoupledPair,
    DerivativeOptions, InfinitesimalSpec, ResidualOptions,
};
use exclusion_core::dual::{approx_duality_check, duality_check, hitting_probability, records_csv, walk_hitting_probability};
use exclusion_core::graphical::{sample_event_log, sample_event_log_with, ClockScheme, ClockSet};
use exclusion_core::kernel::{perturb, Kernel, Perturbation, Site};
use exclusion_core::measures::{
    cesaro_average, estimate_cylinder, nu_c, stationarity_residual, uniform_grid, Backend, EstimatorOptions,
    InitialMeasure, ProductMeasure,
};
use exclusion_core::oracle::{build_exact, cylinder_probability, exact_transient};
use exclusion_core::process::{apply_log, apply_log_traced, gillespie, Configuration, CylinderEvent};
use exclusion_core::rng::{mix64, replica_seed};
use exclusion_core::stats::{combined_stderr, replicate, Estimate};
use exclusion_core::walk::{potential_shift_scan, return_probability, Trend, WalkSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::*;
use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub assertions: Vec<Assertion>,
    /// `(file stem, csv text)`.
    pub tables: Vec<(String, String)>,
}

/// Independent master seed for sub-run `i` of a group.
fn sub_seed(seed: u64, group: u64, i: usize) -> u64 {
    mix64(seed ^ mix64(group.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64))
}

fn cylinders(specs: &[Vec<SiteSpec>], k: &Kernel) -> Result<Vec<CylinderEvent>, LabError> {
    specs.iter().map(|c| Ok(CylinderEvent::new(resolve_all(c, k)?))).collect()
}

fn require_nonempty<T>(v: &[T], what: &str) -> Result<(), LabError> {
    if v.is_empty() {
        return Err(LabError::Config(format!("{what} must not be empty")));
    }
    Ok(())
}

fn check_times(times: &[f64]) -> Result<(), LabError> {
    match times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        Some(t) => Err(LabError::Config(format!("time {t} must be finite and >= 0"))),
        None => Ok(()),
    }
}

fn label(a: &CylinderEvent) -> String {
    a.sites().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn run_experiment(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Outcome, LabError> {
    match &cfg.experiment {
        Experiment::Simulate(p) => simulate(cfg, prep, p),
        Experiment::Duality(p) => duality(cfg, prep, p),
        Experiment::Infinitesimal(p) => infinitesimal(cfg, prep, p),
        Experiment::Derivative(p) => derivative(cfg, prep, p),
        Experiment::Green(p) => green(cfg, prep, p),
        Experiment::Cesaro(p) => cesaro(cfg, prep, p),
        Experiment::Potential(p) => potential(prep, p),
        Experiment::Stationarity(p) => stationarity(prep, p),
        Experiment::OracleCompare(p) => oracle_compare(cfg, prep, p),
    }
}

/// Cylinder estimates for one engine at one time. Coupled engines also
/// report the `ξ` marginal; `ξ_0` is `η_0` with `xi_ones` set to 1.
struct EngineRun {
    eta: Vec<Estimate>,
    xi: Option<Vec<Estimate>>,
}

#[allow(clippy::too_many_arguments)]
fn run_engine(
    engine: Engine,
    mu: &dyn InitialMeasure,
    kbar: &Kernel,
    cyls: &[CylinderEvent],
    t: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
    xi_ones: &[Site],
) -> Result<EngineRun, LabError> {
    if engine == Engine::Lineage {
        let opts = EstimatorOptions { backend: Backend::Lineage, threads, ..Default::default() };
        let eta = cyls
            .iter()
            .map(|a| Ok(estimate_cylinder(mu, kbar, a, t, replicas, seed, opts)?.estimate()))
            .collect::<Result<_, LabError>>()?;
        return Ok(EngineRun { eta, xi: None });
    }
    let coupled = matches!(engine, Engine::Coupled | Engine::CoupledGillespie);
    let arrows = ClockSet::new(kbar, ClockScheme::Arrows);
    let hits = replicate(replicas, seed, threads, |_, s| -> exclusion_core::Result<Vec<u8>> {
        let eta0 = Configuration::for_kernel(kbar, mu.sample(s))?;
        let finals: Vec<Configuration> = match engine {
            Engine::Forward => vec![apply_log(&eta0, kbar, &sample_event_log(kbar, t, s)?)?],
            Engine::Gillespie => vec![gillespie(&eta0, kbar, t, s)?],
            Engine::Coupled | Engine::CoupledGillespie => {
                let mut xi = eta0.clone();
                for &x in xi_ones {
                    xi.set(x, 1);
                }
                let pair = CoupledPair::new(eta0, xi)?;
                let end = if engine == Engine::Coupled {
                    evolve_coupled(&pair, kbar, &sample_event_log_with(&arrows, t, s)?)?
                } else {
                    gillespie_coupled(&pair, kbar, t, s)?
                };
                vec![end.eta, end.xi]
            }
            Engine::Lineage => unreachable!("handled above"),
        };
        Ok(finals.iter().flat_map(|c| cyls.iter().map(|a| a.indicator(c.bits()))).collect())
    });
    let hits: Vec<Vec<u8>> = hits.into_iter().collect::<exclusion_core::Result<_>>()?;
    let column = |j: usize| Estimate::from_bernoulli(hits.iter().filter(|h| h[j] == 1).count(), replicas);
    let n = cyls.len();
    Ok(EngineRun {
        eta: (0..n).map(column).collect(),
        xi: coupled.then(|| (n..2 * n).map(column).collect()),
    })
}

fn engine_name(e: Engine) -> &'static str {
    match e {
        Engine::Forward => "forward",
        Engine::Gillespie => "gillespie",
        Engine::Lineage => "lineage",
        Engine::Coupled => "coupled",
        Engine::CoupledGillespie => "coupled-gillespie",
    }
}

fn simulate(cfg: &ExperimentConfig, prep: &Prepared, p: &SimulateParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let cyls = cylinders(&p.cylinders, &prep.k)?;
    require_nonempty(&cyls, "cylinders")?;
    let times = if p.times.is_empty() { vec![p.horizon] } else { p.times.clone() };
    check_times(&times)?;
    if times.iter().any(|&t| t > p.horizon) {
        return Err(LabError::Config("observation times must not exceed the horizon".into()));
    }
    let mut csv = String::from("time,cylinder,marginal,value,stderr\n");
    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let run = run_engine(p.engine, mu, &prep.kbar, &cyls, t, cfg.replicas, sub_seed(cfg.seed, 1, i), cfg.threads, &[])?;
        for (marginal, ests) in [("eta", Some(&run.eta)), ("xi", run.xi.as_ref())] {
            let Some(ests) = ests else { continue };
            for (a, e) in cyls.iter().zip(ests) {
                let _ = writeln!(csv, "{t},{},{marginal},{},{}", label(a), e.value, e.stderr);
                rows.push(json!({"time": t, "cylinder": a.sites(), "marginal": marginal, "estimate": e}));
            }
        }
    }
    let mut tables = vec![("simulate".to_string(), csv)];
    if p.trajectory {
        let s = replica_seed(cfg.seed, 0);
        let eta0 = Configuration::for_kernel(&prep.kbar, mu.sample(s))?;
        let log = sample_event_log(&prep.kbar, p.horizon, s)?;
        let (_, traj) = apply_log_traced(&eta0, &prep.kbar, &log)?;
        tables.push(("trajectory".to_string(), traj.checkpoints_csv(&times)));
    }
    Ok(Outcome {
        results: json!({"engine": engine_name(p.engine), "horizon": p.horizon, "rows": rows}),
        assertions: Vec::new(),
        tables,
    })
}

fn duality(cfg: &ExperimentConfig, prep: &Prepared, p: &DualityParams) -> Result<Outcome, LabError> {
    check_times(&[p.horizon])?;
    let mut out = Outcome::default();
    match p.mode {
        DualityMode::Pathwise => {
            let a = CylinderEvent::new(resolve_all(&p.cylinder, &prep.k)?);
            let r = duality_check(prep.mu()?, &a, &prep.k, p.horizon, cfg.replicas, cfg.seed, cfg.threads)?;
            if p.expect_pathwise {
                out.assertions.push(Assertion::new(
                    "pathwise-equal",
                    r.pathwise_equal,
                    format!("{} of {} replicas disagree", r.mismatches, cfg.replicas),
                ));
            }
            out.assertions.push(Assertion::new(
                "independent-clocks-agree",
                r.independent_lhs.agrees_with(&r.independent_rhs, p.sigma),
                format!("forward {:.6} vs dual {:.6}", r.independent_lhs.value, r.independent_rhs.value),
            ));
            out.results = json!({"mode": "pathwise", "cylinder": a.sites(), "report": r});
        }
        DualityMode::Approximate => {
            let a = CylinderEvent::new(resolve_all(&p.cylinder, &prep.k)?);
            let r = approx_duality_check(prep.mu()?, &a, &prep.k, &prep.kbar, p.horizon, cfg.replicas, cfg.seed, cfg.threads)?;
            if p.expect_pathwise {
                out.assertions.push(Assertion::new(
                    "pathwise-equal",
                    r.pathwise_equal,
                    format!("{} of {} replicas disagree", r.mismatches, cfg.replicas),
                ));
            }
            out.tables.push(("duality".to_string(), records_csv(&r.records)));
            out.results = json!({
                "mode": "approximate",
                "cylinder": a.sites(),
                "lhs": r.lhs,
                "rhs": r.rhs,
                "pathwise_equal": r.pathwise_equal,
                "mismatches": r.mismatches,
                "divergence": r.divergence,
            });
        }
        DualityMode::Hitting => {
            let z = p
                .target
                .as_ref()
                .ok_or_else(|| LabError::Config("hitting mode needs a target".into()))?
                .resolve(&prep.k)?;
            require_nonempty(&p.sets, "sets")?;
            let sets: Vec<Vec<Site>> = p.sets.iter().map(|s| resolve_all(s, &prep.k)).collect::<Result<_, _>>()?;
            let mut csv = String::from("set,dual,dual_stderr,walk,walk_stderr\n");
            let mut rows = Vec::new();
            let mut ests = Vec::new();
            for (i, set) in sets.iter().enumerate() {
                let e = hitting_probability(&prep.k, set, z, p.horizon, cfg.replicas, sub_seed(cfg.seed, 2, i), cfg.threads)?;
                let walk = match set.as_slice() {
                    [x] if p.walk_comparison => Some(walk_hitting_probability(
                        &prep.k,
                        *x,
                        z,
                        p.horizon,
                        cfg.replicas,
                        sub_seed(cfg.seed, 3, i),
                        cfg.threads,
                    )?),
                    _ => None,
                };
                if let Some(w) = walk {
                    out.assertions.push(Assertion::new(
                        format!("walk-agrees[{i}]"),
                        e.agrees_with(&w, p.sigma),
                        format!("dual {:.5} ± {:.5} vs walk {:.5} ± {:.5}", e.value, e.stderr, w.value, w.stderr),
                    ));
                }
                let (wv, ws) = walk.map_or((String::new(), String::new()), |w| (w.value.to_string(), w.stderr.to_string()));
                let names: Vec<String> = set.iter().map(|s| s.to_string()).collect();
                let _ = writeln!(csv, "{},{},{},{wv},{ws}", names.join(" "), e.value, e.stderr);
                rows.push(json!({"set": set, "dual": e, "walk": walk}));
                ests.push(e);
            }
            if p.expect_decreasing {
                for (i, w) in ests.windows(2).enumerate() {
                    let margin = p.sigma * combined_stderr(w[0].stderr, w[1].stderr);
                    out.assertions.push(Assertion::new(
                        format!("decreasing[{i}]"),
                        w[0].value - w[1].value > margin,
                        format!("{:.5} − {:.5} vs margin {:.5}", w[0].value, w[1].value, margin),
                    ));
                }
            }
            out.tables.push(("duality".to_string(), csv));
            out.results = json!({"mode": "hitting", "target": z, "horizon": p.horizon, "rows": rows});
        }
    }
    Ok(out)
}

fn infinitesimal(cfg: &ExperimentConfig, prep: &Prepared, p: &InfinitesimalParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let spec = InfinitesimalSpec::new(mu, &prep.kbar, p.s, prep.perturbation.clone())?;
    let sites = spec.sites();
    let m = sites.len();
    let key = |xi: &[u8], eta: &[u8]| -> u64 {
        (0..m).map(|i| ((xi[i] as u64) << i) | ((eta[i] as u64) << (m + i))).sum()
    };
    let keys = replicate(cfg.replicas, cfg.seed, cfg.threads, |_, s| {
        let (pair, _) = spec.draw(s);
        let xi: Vec<u8> = sites.iter().map(|&x| pair.xi.get(x)).collect();
        let eta: Vec<u8> = sites.iter().map(|&x| pair.eta.get(x)).collect();
        key(&xi, &eta)
    });
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    let n = cfg.replicas as f64;
    let bits = |v: &[u8]| v.iter().map(|b| b.to_string()).collect::<String>();
    let mut out = Outcome::default();
    let mut csv = String::from("xi,eta,probability,frequency,stderr\n");
    let mut rows = Vec::new();
    let table = spec.table();
    for row in &table {
        let k = key(&row.xi, &row.eta);
        let freq = counts.remove(&k).unwrap_or(0) as f64 / n;
        let se = (row.probability * (1.0 - row.probability) / n).sqrt();
        let _ = writeln!(csv, "{},{},{},{freq},{se}", bits(&row.xi), bits(&row.eta), row.probability);
        if p.expect_table {
            out.assertions.push(Assertion::new(
                format!("row xi={} eta={}", bits(&row.xi), bits(&row.eta)),
                (freq - row.probability).abs() <= p.sigma * se,
                format!("frequency {freq:.6} vs {:.6} ± {se:.6}", row.probability),
            ));
        }
        rows.push(json!({"xi": row.xi, "eta": row.eta, "probability": row.probability, "frequency": freq}));
    }
    if p.expect_table {
        let stray: usize = counts.values().sum();
        out.assertions.push(Assertion::new(
            "no-unlisted-rows",
            stray == 0,
            format!("{stray} draws fell outside the table"),
        ));
    }
    out.tables.push(("infinitesimal".to_string(), csv));
    let mut results = json!({"s": p.s, "sites": sites, "bound": spec.bound(), "rows": rows});
    if let Some(slope) = &p.slope {
        let (value, assertions, table) = slope_test(cfg, prep, mu, slope, p.sigma)?;
        results["slope"] = value;
        out.assertions.extend(assertions);
        out.tables.push(("slope".to_string(), table));
    }
    out.results = results;
    Ok(out)
}

fn slope_test(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    mu: &dyn InitialMeasure,
    p: &SlopeParams,
    sigma: f64,
) -> Result<(Value, Vec<Assertion>, String), LabError> {
    require_nonempty(&p.s, "slope.s")?;
    let f = CylinderEvent::new(resolve_all(&p.cylinder, &prep.k)?);
    let opts = ResidualOptions { mode: p.mode, reference: p.reference.reference(), threads: cfg.threads };
    let rows = finite_s_residual(
        mu,
        &f,
        &prep.kbar,
        &prep.perturbation,
        &p.s,
        cfg.replicas,
        sub_seed(cfg.seed, 4, 0),
        opts,
    )?;
    let mut csv = String::from("s,coupled,reference,residual,residual_stderr,per_s,per_s_stderr\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.s, r.coupled.value, r.reference.value, r.residual.value, r.residual.stderr, r.per_s.value, r.per_s.stderr
        );
    }
    let mut assertions = Vec::new();
    if p.expect_slope {
        for (i, w) in rows.windows(2).enumerate() {
            let (a, b) = (w[0].per_s.value.abs(), w[1].per_s.value.abs());
            assertions.push(Assertion::new(
                format!("slope-decreasing[{i}]"),
                b < a,
                format!("|residual|/s {a:.3e} at s={} then {b:.3e} at s={}", w[0].s, w[1].s),
            ));
        }
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            let limit = 0.5 * first.per_s.value.abs() + sigma * last.per_s.stderr;
            assertions.push(Assertion::new(
                "slope-halves",
                last.per_s.value.abs() <= limit,
                format!("|residual|/s {:.3e} at s={} vs limit {limit:.3e}", last.per_s.value.abs(), last.s),
            ));
        }
    }
    Ok((json!({"cylinder": f.sites(), "rows": rows}), assertions, csv))
}

fn derivative(cfg: &ExperimentConfig, prep: &Prepared, p: &DerivativeParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let a = CylinderEvent::new(resolve_all(&p.cylinder, &prep.k)?);
    require_nonempty(&p.times, "times")?;
    check_times(&p.times)?;
    let opts = DerivativeOptions { lhs: p.lhs_mode(), threads: cfg.threads };
    let mut out = Outcome::default();
    let mut csv = String::from("t,lhs,lhs_stderr,rhs,rhs_stderr,bound,bound_stderr\n");
    let mut reports = Vec::new();
    for (i, &t) in p.times.iter().enumerate() {
        let r = derivative_check(mu, &a, &prep.kbar, &prep.perturbation, t, cfg.replicas, sub_seed(cfg.seed, 5, i), opts)?;
        let _ = writeln!(
            csv,
            "{t},{},{},{},{},{},{}",
            r.lhs.value, r.lhs.stderr, r.rhs.value, r.rhs.stderr, r.bound.value, r.bound.stderr
        );
        if p.expect_agree {
            out.assertions.push(Assertion::new(
                format!("identity[t={t}]"),
                r.agrees(p.sigma),
                format!("lhs {:.6} ± {:.6} vs rhs {:.6} ± {:.6}", r.lhs.value, r.lhs.stderr, r.rhs.value, r.rhs.stderr),
            ));
        }
        if p.expect_bound {
            out.assertions.push(Assertion::new(
                format!("bound[t={t}]"),
                r.bound_holds(p.sigma),
                format!("|rhs| {:.6} vs bound {:.6}", r.rhs.value.abs(), r.bound.value),
            ));
        }
        reports.push(r);
    }
    out.tables.push(("derivative".to_string(), csv));
    out.results = json!({"cylinder": a.sites(), "reports": reports});
    Ok(out)
}

fn green(cfg: &ExperimentConfig, prep: &Prepared, p: &GreenParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let z = p.z.resolve(&prep.k)?;
    let xs = if p.sites.is_empty() { vec![z] } else { resolve_all(&p.sites, &prep.k)? };
    require_nonempty(&p.horizons, "horizons")?;
    check_times(&p.horizons)?;
    let mut csv = String::from("horizon,x,value,stderr\n");
    let mut per_horizon = Vec::new();
    for (i, &h) in p.horizons.iter().enumerate() {
        let ests = discrepancy_green(z, &xs, &prep.kbar, mu, &[], h, cfg.replicas, sub_seed(cfg.seed, 6, i), cfg.threads)?;
        for e in &ests {
            let _ = writeln!(csv, "{h},{},{},{}", e.x, e.value, e.stderr);
        }
        per_horizon.push(ests);
    }
    let mut out = Outcome::default();
    if let (Some(expect), [.., prev, last]) = (p.expect, per_horizon.as_slice()) {
        let diff = last[0].estimate().minus(prev[0].estimate());
        let margin = p.sigma * diff.stderr;
        let (passed, word) = match expect {
            GreenExpect::Stabilizes => (diff.value.abs() <= margin, "stabilizes"),
            GreenExpect::Grows => (diff.value > margin, "grows"),
        };
        out.assertions.push(Assertion::new(
            word,
            passed,
            format!("G(T={}) − G(T={}) = {:.5} vs margin {margin:.5}", last[0].horizon, prev[0].horizon, diff.value),
        ));
    }
    out.tables.push(("green".to_string(), csv));
    out.results = json!({"z": z, "sites": xs, "estimates": per_horizon});
    Ok(out)
}

fn cesaro(cfg: &ExperimentConfig, prep: &Prepared, p: &CesaroParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let cyls = cylinders(&p.cylinders, &prep.k)?;
    require_nonempty(&cyls, "cylinders")?;
    check_times(&[p.horizon])?;
    if p.grid_points == 0 {
        return Err(LabError::Config("grid_points must be positive".into()));
    }
    let grid = uniform_grid(p.horizon, p.grid_points);
    let opts = EstimatorOptions { backend: p.backend, threads: cfg.threads, ..Default::default() };
    let mut csv = String::from("cylinder,distance,value,stderr,deviation,buffer_valid\n");
    let mut ests = Vec::new();
    for (i, a) in cyls.iter().enumerate() {
        let e = cesaro_average(mu, &prep.kbar, a, &grid, cfg.replicas, sub_seed(cfg.seed, 7, i), opts)?;
        let dist = distance_to_support(prep, a);
        let dev = p.reference.map(|r| e.value - r);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            label(a),
            dist.map_or(String::new(), |d| d.to_string()),
            e.value,
            e.stderr,
            dev.map_or(String::new(), |d| d.to_string()),
            e.buffer_valid
        );
        ests.push(e);
    }
    let mut out = Outcome::default();
    if p.require_buffer {
        let bad = ests.iter().filter(|e| !e.buffer_valid).count();
        out.assertions.push(Assertion::new("buffer", bad == 0, format!("{bad} cylinders are inside the light-cone buffer")));
    }
    if p.expect_decay {
        let r = p.reference.ok_or_else(|| LabError::Config("expect_decay needs a reference value".into()))?;
        for (i, w) in ests.windows(2).enumerate() {
            let (a, b) = ((w[0].value - r).abs(), (w[1].value - r).abs());
            let margin = p.sigma * combined_stderr(w[0].stderr, w[1].stderr);
            out.assertions.push(Assertion::new(
                format!("nonincreasing[{i}]"),
                b <= a + margin,
                format!("|dev| {a:.5} then {b:.5}, margin {margin:.5}"),
            ));
        }
        if let Some(last) = ests.last() {
            out.assertions.push(Assertion::new(
                "last-at-reference",
                (last.value - r).abs() <= p.sigma * last.stderr,
                format!("{:.5} ± {:.5} vs {r}", last.value, last.stderr),
            ));
        }
    }
    out.tables.push(("cesaro".to_string(), csv));
    out.results = json!({
        "horizon": p.horizon,
        "grid_points": p.grid_points,
        "reference": p.reference,
        "cylinders": cyls.iter().map(|a| a.sites()).collect::<Vec<_>>(),
        "estimates": ests,
    });
    Ok(out)
}

/// Lattice distance (max over coordinates summed) from the cylinder to the
/// nearest perturbed site, when both have coordinates.
fn distance_to_support(prep: &Prepared, a: &CylinderEvent) -> Option<i64> {
    let sup: Vec<Vec<i64>> = prep
        .perturbation
        .entries
        .iter()
        .flat_map(|e| [e.x, e.y])
        .filter_map(|s| prep.k.coords(s))
        .collect();
    a.sites()
        .iter()
        .filter_map(|&s| prep.k.coords(s))
        .flat_map(|c| sup.iter().map(move |b| c.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>()))
        .min()
}

fn potential(prep: &Prepared, p: &PotentialParams) -> Result<Outcome, LabError> {
    require_nonempty(&p.radii, "radii")?;
    let origin = match &p.origin {
        Some(s) => s.resolve(&prep.k)?,
        None => prep
            .k
            .center()
            .ok_or_else(|| LabError::Config("the window has no center; set origin".into()))?,
    };
    let spec = WalkSpec::new(&prep.k, origin)?.with_prune(p.prune);
    let scan = potential_shift_scan(&spec, &p.offset, &p.radii, p.steps)?;
    let ret = p.return_steps.map(|n| return_probability(&spec, n)).transpose()?;
    let mut out = Outcome::default();
    if let Some(expect) = p.expect_trend {
        out.assertions.push(Assertion::new(
            "trend",
            scan.trend == expect,
            format!("observed {:?}, expected {expect:?}", scan.trend),
        ));
        if expect == Trend::Vanishing {
            let ok = scan.rows.windows(2).all(|w| w[1].value <= w[0].value);
            out.assertions.push(Assertion::new("monotone", ok, "values along the ray must not increase"));
        }
    }
    if let (Some(target), Some(last)) = (p.final_target, scan.rows.last()) {
        out.assertions.push(Assertion::new(
            "final-value",
            (last.value - target).abs() <= p.final_tolerance,
            format!("{:.5} at radius {} vs {target} ± {}", last.value, last.radius, p.final_tolerance),
        ));
    }
    out.tables.push(("potential".to_string(), scan.to_csv()));
    out.results = json!({"origin": origin, "scan": scan, "return_probability": ret});
    Ok(out)
}

fn interior_subsets(k: &Kernel, max_size: usize) -> Vec<CylinderEvent> {
    let interior: Vec<Site> = (0..k.n_sites()).filter(|&s| k.is_interior(s)).collect();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<Site>, usize)> = vec![(Vec::new(), 0)];
    while let Some((set, from)) = stack.pop() {
        if !set.is_empty() {
            out.push(CylinderEvent::new(set.clone()));
        }
        if set.len() == max_size {
            continue;
        }
        for i in (from..interior.len()).rev() {
            let mut next = set.clone();
            next.push(interior[i]);
            stack.push((next, i + 1));
        }
    }
    out
}

fn stationarity(prep: &Prepared, p: &StationarityParams) -> Result<Outcome, LabError> {
    let cyls = if p.cylinders.is_empty() {
        interior_subsets(&prep.k, p.max_size)
    } else {
        cylinders(&p.cylinders, &prep.k)?
    };
    require_nonempty(&cyls, "cylinders")?;
    // (c, eps, measure, perturbed kernel)
    let mut cases: Vec<(Option<f64>, Option<f64>, ProductMeasure, Kernel)> = Vec::new();
    if p.c.is_empty() && p.eps.is_empty() {
        let mu = prep
            .measure
            .clone()
            .ok_or_else(|| LabError::Config("stationarity needs c values or a [measure] section".into()))?;
        cases.push((None, None, mu, prep.kbar.clone()));
    } else {
        let e = prep.single_entry()?;
        let eps_list = if p.eps.is_empty() { vec![e.eps] } else { p.eps.clone() };
        for &eps in &eps_list {
            let pert = Perturbation::single(e.x, e.y, eps);
            pert.validate(&prep.k)
                .map_err(|err| LabError::Config(format!("eps sweep value {eps}: {err}")))?;
            let kbar = perturb(&prep.k, &pert)?;
            if p.c.is_empty() {
                let mu = prep
                    .measure
                    .clone()
                    .ok_or_else(|| LabError::Config("an eps sweep without c values needs a [measure] section".into()))?;
                cases.push((None, Some(eps), mu, kbar));
            } else {
                for &c in &p.c {
                    cases.push((Some(c), Some(eps), nu_c(c, eps, prep.k.n_sites(), e.x)?, kbar.clone()));
                }
            }
        }
    }
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = String::from("c,eps,cylinder,residual\n");
    let mut summary = Vec::new();
    let mut worst = 0.0f64;
    for (c, eps, mu, kbar) in &cases {
        let mut max = 0.0f64;
        for a in &cyls {
            let r = stationarity_residual(mu, kbar, a)?;
            max = max.max(r.abs());
            let _ = writeln!(csv, "{},{},{},{r}", fmt(*c), fmt(*eps), label(a));
        }
        worst = worst.max(max);
        summary.push(json!({"c": c, "eps": eps, "max_abs_residual": max}));
    }
    Ok(Outcome {
        results: json!({"cylinders": cyls.len(), "cases": summary, "max_abs_residual": worst}),
        assertions: vec![Assertion::new(
            "residual-below-tolerance",
            worst <= p.tolerance,
            format!("max |residual| {worst:.3e} vs {:.0e} over {} cylinders", p.tolerance, cyls.len()),
        )],
        tables: vec![("stationarity".to_string(), csv)],
    })
}

fn oracle_compare(cfg: &ExperimentConfig, prep: &Prepared, p: &OracleParams) -> Result<Outcome, LabError> {
    let mu = prep.mu()?;
    let cyls = cylinders(&p.cylinders, &prep.k)?;
    require_nonempty(&cyls, "cylinders")?;
    require_nonempty(&p.times, "times")?;
    require_nonempty(&p.engines, "engines")?;
    check_times(&p.times)?;
    let xi_ones = resolve_all(&p.xi_ones, &prep.k)?;
    let chain = build_exact(&prep.kbar)?;
    let probs = mu
        .state_probs()
        .ok_or_else(|| LabError::Config("the exact oracle needs dense state probabilities".into()))?;
    let mask: usize = xi_ones.iter().map(|&x| 1usize << x).sum();
    let mut xi_probs = vec![0.0; probs.len()];
    for (i, &q) in probs.iter().enumerate() {
        xi_probs[i | mask] += q;
    }
    let mut out = Outcome::default();
    let mut csv = String::from("engine,time,cylinder,marginal,exact,estimate,stderr\n");
    let mut rows = Vec::new();
    for (ti, &t) in p.times.iter().enumerate() {
        let eta_t = exact_transient(&chain, &probs, t)?;
        let xi_t = exact_transient(&chain, &xi_probs, t)?;
        for (ei, &engine) in p.engines.iter().enumerate() {
            let seed = sub_seed(cfg.seed, 8 + ei as u64, ti);
            let run = run_engine(engine, mu, &prep.kbar, &cyls, t, cfg.replicas, seed, cfg.threads, &xi_ones)?;
            for (marginal, ests, dist) in [("eta", Some(&run.eta), &eta_t), ("xi", run.xi.as_ref(), &xi_t)] {
                let Some(ests) = ests else { continue };
                for (a, e) in cyls.iter().zip(ests) {
                    let exact = cylinder_probability(dist, a);
                    let name = engine_name(engine);
                    let _ = writeln!(csv, "{name},{t},{},{marginal},{exact},{},{}", label(a), e.value, e.stderr);
                    out.assertions.push(Assertion::new(
                        format!("{name} {marginal} t={t} A=[{}]", label(a)),
                        e.agrees_with_value(exact, p.sigma),
                        format!("{:.6} ± {:.6} vs exact {exact:.6}", e.value, e.stderr),
                    ));
                    rows.push(json!({
                        "engine": name, "time": t, "cylinder": a.sites(), "marginal": marginal,
                        "exact": exact, "estimate": e,
                    }));
                }
            }
        }
    }
    out.tables.push(("oracle-compare".to_string(), csv));
    out.results = json!({"states": chain.n_states(), "rows": rows});
    Ok(out)
}
