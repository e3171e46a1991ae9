//! Basic coupling of two exclusion processes, the infinitesimal initial
//! coupling, and the discrepancy estimators built on them.
//!
//! Both marginals read one log. A directed ring `(x,y)` moves the particle in
//! every marginal that has one at `x` and a hole at `y`, so the two move
//! together whenever they can. On an arrows log (one directed clock per
//! ordered pair at rate `p̄(x,y)`) this is exactly the basic coupling, and a
//! plus and a minus discrepancy that meet across a ring annihilate. A
//! stirring log also couples the marginals correctly, but opposite
//! discrepancies can swap past each other there.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphical::{sample_event_log_with, ClockScheme, ClockSet, EventKind, EventLog};
use crate::kernel::{Kernel, Perturbation, Site};
use crate::lineage::Lineage;
use crate::measures::{estimate_cylinder, Backend, EstimatorOptions, InitialMeasure};
use crate::oracle::{build_exact, cylinder_probability, exact_derivative, exact_transient};
use crate::process::{Configuration, CylinderEvent};
use crate::rng::{exp_variate, mix64, Domain, Streams};
use crate::stats::{replicate, Estimate};

const FD_SALT: u64 = 0x6644_2d66_645f_7374;
const REFERENCE_SALT: u64 = 0x7265_6665_7265_6e63;

/// Two configurations on the same window, `η` and `ξ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledPair {
    pub eta: Configuration,
    pub xi: Configuration,
}

impl CoupledPair {
    pub fn new(eta: Configuration, xi: Configuration) -> Result<Self> {
        if eta.len() != xi.len() {
            return Err(Error::SiteSetMismatch(eta.len(), xi.len()));
        }
        if eta.boundary() != xi.boundary() {
            return Err(Error::InvalidValue("coupled configurations use different boundary modes".into()));
        }
        Ok(Self { eta, xi })
    }

    pub fn equal(eta: Configuration) -> Self {
        Self { xi: eta.clone(), eta }
    }

    pub fn discrepancies(&self) -> DiscrepancySet {
        let mut d = DiscrepancySet::default();
        for (x, (&a, &b)) in self.eta.bits().iter().zip(self.xi.bits()).enumerate() {
            match (a, b) {
                (0, 1) => d.plus.push(x),
                (1, 0) => d.minus.push(x),
                _ => {}
            }
        }
        d
    }

    fn apply_event(&mut self, k: &Kernel, kind: EventKind, x: Site, y: Site) {
        self.eta.apply_event(k, kind, x, y);
        self.xi.apply_event(k, kind, x, y);
    }
}

/// Sites where `ξ = 1, η = 0` (plus) and `ξ = 0, η = 1` (minus).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancySet {
    pub plus: Vec<Site>,
    pub minus: Vec<Site>,
}

impl DiscrepancySet {
    pub fn is_empty(&self) -> bool {
        self.plus.is_empty() && self.minus.is_empty()
    }

    pub fn len(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    /// `|plus| − |minus|`, conserved on windows without reservoirs.
    pub fn net(&self) -> i64 {
        self.plus.len() as i64 - self.minus.len() as i64
    }
}

fn check_pair(pair: &CoupledPair, kbar: &Kernel, log: &EventLog) -> Result<()> {
    log.check_fingerprint(kbar.fingerprint())?;
    if pair.eta.len() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), pair.eta.len()));
    }
    Ok(())
}

/// Run both marginals on the same log.
pub fn evolve_coupled(pair: &CoupledPair, kbar: &Kernel, log: &EventLog) -> Result<CoupledPair> {
    check_pair(pair, kbar, log)?;
    let mut p = pair.clone();
    for e in &log.events {
        p.apply_event(kbar, e.kind, e.x as usize, e.y as usize);
    }
    Ok(p)
}

/// A discrepancy change at one site; `sign` is `+1`, `-1`, or `0` once the
/// site agrees again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub time: f64,
    pub site: Site,
    pub sign: i8,
}

fn sign_at(p: &CoupledPair, x: Site) -> i8 {
    p.xi.get(x) as i8 - p.eta.get(x) as i8
}

/// [`evolve_coupled`] that also records every change of the discrepancy
/// field, starting with the initial discrepancies at time 0.
pub fn evolve_coupled_traced(
    pair: &CoupledPair,
    kbar: &Kernel,
    log: &EventLog,
) -> Result<(CoupledPair, Vec<DiscrepancyRecord>)> {
    check_pair(pair, kbar, log)?;
    let mut p = pair.clone();
    let mut records: Vec<DiscrepancyRecord> = (0..p.eta.len())
        .filter(|&x| sign_at(&p, x) != 0)
        .map(|x| DiscrepancyRecord { time: 0.0, site: x, sign: sign_at(&p, x) })
        .collect();
    for e in &log.events {
        let (x, y) = e.sites();
        let before = [sign_at(&p, x), sign_at(&p, y)];
        p.apply_event(kbar, e.kind, x, y);
        for (site, old) in [(x, before[0]), (y, before[1])] {
            let new = sign_at(&p, site);
            if new != old {
                records.push(DiscrepancyRecord { time: e.time, site, sign: new });
            }
        }
    }
    Ok((p, records))
}

pub fn discrepancy_csv(records: &[DiscrepancyRecord]) -> String {
    let mut s = String::from("time,site,sign\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.time, r.site, r.sign);
    }
    s
}

/// Direct simulation of the coupled generator `Ω̃`: along each edge the two
/// marginals jump jointly when both can, otherwise whichever can jumps alone.
pub fn gillespie_coupled(pair: &CoupledPair, kbar: &Kernel, horizon: f64, seed: u64) -> Result<CoupledPair> {
    if pair.eta.len() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), pair.eta.len()));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidValue(format!("horizon {horizon}")));
    }
    let mut rng = Streams::new(seed).stream(Domain::Gillespie, 1, 0);
    let edges: Vec<(Site, Site, f64)> = kbar.edges().collect();
    let mut p = pair.clone();
    let mut t = 0.0;
    let can = |c: &Configuration, x: Site, y: Site| c.get(x) == 1 && c.get(y) == 0;
    loop {
        let total: f64 = edges
            .iter()
            .filter(|&&(x, y, _)| can(&p.eta, x, y) || can(&p.xi, x, y))
            .map(|e| e.2)
            .sum();
        if total <= 0.0 {
            return Ok(p);
        }
        t += exp_variate(&mut rng, total);
        if t >= horizon {
            return Ok(p);
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = None;
        for &(x, y, r) in &edges {
            if can(&p.eta, x, y) || can(&p.xi, x, y) {
                chosen = Some((x, y));
                if pick < r {
                    break;
                }
                pick -= r;
            }
        }
        let (x, y) = chosen.expect("positive total rate");
        for c in [&mut p.eta, &mut p.xi] {
            if can(c, x, y) {
                c.set(x, 0);
                c.set(y, 1);
            }
            c.pin_frozen(kbar);
        }
    }
}

/// First-order move for one perturbed pair `(x,y)`. With `ε > 0` a
/// configuration with a particle at `x` and a hole at `y` has `ξ` moved
/// `x → y` with probability `s·ε`. With `ε < 0` a configuration with a hole at
/// `x` and a particle at `y` has `ξ` moved `y → x` with probability
/// `s·|ε|·μ{x=1,y=0}/μ{x=0,y=1}`, which puts total mass `μ{D}s|ε|` on that row.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EntryRule {
    x: Site,
    y: Site,
    positive: bool,
    rate: f64,
}

impl EntryRule {
    fn rate_at(&self, get: impl Fn(Site) -> u8) -> f64 {
        let (a, b) = (get(self.x), get(self.y));
        let active = if self.positive { a == 1 && b == 0 } else { a == 0 && b == 1 };
        if active { self.rate } else { 0.0 }
    }

    fn fire(&self, bits: &mut [u8]) {
        let v = !self.positive as u8;
        bits[self.x] = v;
        bits[self.y] = 1 - v;
    }
}

fn entry_rules(mu: &dyn InitialMeasure, entries: &Perturbation) -> Vec<EntryRule> {
    entries
        .entries
        .iter()
        .map(|e| {
            if e.eps >= 0.0 {
                EntryRule { x: e.x, y: e.y, positive: true, rate: e.eps }
            } else {
                let d = mu.prob(&[e.x], &[e.y]);
                let reverse = mu.prob(&[e.y], &[e.x]);
                let rate = if d == 0.0 { 0.0 } else { e.eps.abs() * d / reverse };
                EntryRule { x: e.x, y: e.y, positive: false, rate }
            }
        })
        .collect()
}

/// Largest `s` for which every table row is a probability:
/// `1 / max_η Σ_i rate_i(η)` over configurations of the perturbed sites that
/// `μ` charges.
pub fn infinitesimal_bound(mu: &dyn InitialMeasure, entries: &Perturbation) -> Result<f64> {
    let rules = entry_rules(mu, entries);
    let mut sites: Vec<Site> = rules.iter().flat_map(|r| [r.x, r.y]).collect();
    sites.sort_unstable();
    sites.dedup();
    if sites.len() > 20 {
        return Err(Error::InvalidValue(format!("{} perturbed sites; at most 20 supported", sites.len())));
    }
    let mut worst: f64 = 0.0;
    for mask in 0u32..(1 << sites.len()) {
        let get = |s: Site| (mask >> sites.binary_search(&s).expect("perturbed site") & 1) as u8;
        let total: f64 = rules.iter().map(|r| r.rate_at(get)).sum();
        if total > worst {
            let (ones, zeros): (Vec<Site>, Vec<Site>) = sites.iter().partition(|&&s| get(s) == 1);
            if mu.prob(&ones, &zeros) > 0.0 {
                worst = total;
            }
        }
    }
    Ok(if worst > 0.0 { 1.0 / worst } else { f64::INFINITY })
}

/// Joint initial law `ν̃` of `(η_0, ξ^s_0)`: `η_0 ~ μ`, and `ξ_0` equals `η_0`
/// except that at most one perturbed pair is moved.
#[derive(Clone)]
pub struct InfinitesimalSpec<'a> {
    mu: &'a dyn InitialMeasure,
    kbar: &'a Kernel,
    s: f64,
    entries: Perturbation,
    rules: Vec<EntryRule>,
    bound: f64,
}

impl<'a> InfinitesimalSpec<'a> {
    pub fn new(mu: &'a dyn InitialMeasure, kbar: &'a Kernel, s: f64, entries: Perturbation) -> Result<Self> {
        if mu.n_sites() != kbar.n_sites() {
            return Err(Error::SiteSetMismatch(kbar.n_sites(), mu.n_sites()));
        }
        for e in &entries.entries {
            for site in [e.x, e.y] {
                if site >= kbar.n_sites() {
                    return Err(Error::SiteOutOfWindow { site, n_sites: kbar.n_sites() });
                }
            }
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidValue(format!("small time s={s}")));
        }
        let bound = infinitesimal_bound(mu, &entries)?;
        if s > 0.0 && s >= bound {
            return Err(Error::SmallTimeOutOfRange { s, bound });
        }
        let rules = entry_rules(mu, &entries);
        Ok(Self { mu, kbar, s, entries, rules, bound })
    }

    pub fn mu(&self) -> &'a dyn InitialMeasure {
        self.mu
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn entries(&self) -> &Perturbation {
        &self.entries
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Perturbed sites in increasing order.
    pub fn sites(&self) -> Vec<Site> {
        let mut sites: Vec<Site> = self.rules.iter().flat_map(|r| [r.x, r.y]).collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    /// Law of `(ξ_0, η_0)` restricted to [`Self::sites`], rows of positive
    /// probability only.
    pub fn table(&self) -> Vec<TableRow> {
        let sites = self.sites();
        let mut rows: Vec<TableRow> = Vec::new();
        let mut add = |xi: Vec<u8>, eta: Vec<u8>, p: f64| {
            if p <= 0.0 {
                return;
            }
            match rows.iter_mut().find(|r| r.xi == xi && r.eta == eta) {
                Some(r) => r.probability += p,
                None => rows.push(TableRow { xi, eta, probability: p }),
            }
        };
        for mask in 0u32..(1 << sites.len()) {
            let eta: Vec<u8> = (0..sites.len()).map(|i| (mask >> i & 1) as u8).collect();
            let (ones, zeros): (Vec<Site>, Vec<Site>) = sites.iter().partition(|&&s| eta[sites.binary_search(&s).unwrap()] == 1);
            let q = self.mu.prob(&ones, &zeros);
            let get = |s: Site| eta[sites.binary_search(&s).expect("perturbed site")];
            let mut stay = 1.0;
            for r in &self.rules {
                let p = self.s * r.rate_at(get);
                if p > 0.0 {
                    let mut full = vec![0u8; self.kbar.n_sites()];
                    for (&s, &v) in sites.iter().zip(&eta) {
                        full[s] = v;
                    }
                    r.fire(&mut full);
                    add(sites.iter().map(|&s| full[s]).collect(), eta.clone(), q * p);
                    stay -= p;
                }
            }
            add(eta.clone(), eta, q * stay);
        }
        rows
    }

    /// A draw together with the index of the entry that fired, if any.
    pub fn draw(&self, seed: u64) -> (CoupledPair, Option<usize>) {
        let bits = self.mu.sample(seed);
        let mut xi = bits.clone();
        let mut fired = None;
        if self.s > 0.0 {
            let u: f64 = Streams::new(seed).stream(Domain::Infinitesimal, 0, 0).random();
            let mut acc = 0.0;
            for (i, r) in self.rules.iter().enumerate() {
                acc += self.s * r.rate_at(|x| bits[x]);
                if u < acc {
                    r.fire(&mut xi);
                    fired = Some(i);
                    break;
                }
            }
        }
        let eta = Configuration::for_kernel(self.kbar, bits).expect("window checked");
        let xi = Configuration::for_kernel(self.kbar, xi).expect("window checked");
        (CoupledPair { eta, xi }, fired)
    }
}

/// One row of the joint table at the perturbed sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub xi: Vec<u8>,
    pub eta: Vec<u8>,
    pub probability: f64,
}

pub fn sample_infinitesimal(spec: &InfinitesimalSpec<'_>, seed: u64) -> CoupledPair {
    spec.draw(seed).0
}

/// How `E f(ξ^s_0)` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// `μf + s·E_μ[Σ_i rate_i(η)(f(η^i) − f(η))]`, the conditional expectation
    /// given `η_0`. One set of `η` samples serves every `s`.
    RaoBlackwell,
    /// Indicator of `f(ξ^s_0)` on sampled pairs.
    Raw,
}

/// Reference value for `∫f dμS̄(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Uniformization on the full state space; small windows only.
    Exact,
    MonteCarlo(Backend),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub mode: ResidualMode,
    pub reference: Reference,
    pub threads: Option<usize>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { mode: ResidualMode::RaoBlackwell, reference: Reference::Exact, threads: None }
    }
}

/// `E f(ξ^s_0) − ∫f dμS̄(s)` at one `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub s: f64,
    pub coupled: Estimate,
    pub reference: Estimate,
    pub residual: Estimate,
    /// `residual / s`.
    pub per_s: Estimate,
}

fn exact_reference(mu: &dyn InitialMeasure, kbar: &Kernel, a: &CylinderEvent, t: f64) -> Result<f64> {
    let probs = mu
        .state_probs()
        .ok_or_else(|| Error::InvalidValue("exact reference needs dense state probabilities".into()))?;
    let chain = build_exact(kbar)?;
    Ok(cylinder_probability(&exact_transient(&chain, &probs, t)?, a))
}

#[allow(clippy::too_many_arguments)]
pub fn finite_s_residual(
    mu: &dyn InitialMeasure,
    f: &CylinderEvent,
    kbar: &Kernel,
    entries: &Perturbation,
    s_list: &[f64],
    replicas: usize,
    seed: u64,
    opts: ResidualOptions,
) -> Result<Vec<ResidualRow>> {
    f.check_window(kbar.n_sites())?;
    let specs: Vec<InfinitesimalSpec<'_>> = s_list
        .iter()
        .map(|&s| InfinitesimalSpec::new(mu, kbar, s, entries.clone()))
        .collect::<Result<_>>()?;
    let rb = match opts.mode {
        ResidualMode::RaoBlackwell => {
            let rules = entry_rules(mu, entries);
            let g = replicate(replicas, seed, opts.threads, |_, rs| {
                let bits = mu.sample(rs);
                let base = f.indicator(&bits) as f64;
                rules
                    .iter()
                    .map(|r| {
                        let rate = r.rate_at(|x| bits[x]);
                        if rate == 0.0 {
                            return 0.0;
                        }
                        let mut moved = bits.clone();
                        r.fire(&mut moved);
                        rate * (f.indicator(&moved) as f64 - base)
                    })
                    .sum::<f64>()
            });
            Some((mu.cylinder_prob(f), Estimate::from_samples(&g)))
        }
        ResidualMode::Raw => None,
    };
    let mut rows = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let s = spec.s();
        let coupled = match rb {
            Some((mean, g)) => Estimate { value: mean + s * g.value, stderr: s * g.stderr, replicas },
            None => {
                let hits = replicate(replicas, seed, opts.threads, |_, rs| spec.draw(rs).0.xi.bits().to_vec());
                Estimate::from_bernoulli(hits.iter().filter(|b| f.indicator(b) == 1).count(), replicas)
            }
        };
        let reference = match opts.reference {
            Reference::Exact => Estimate::exact(exact_reference(mu, kbar, f, s)?),
            Reference::MonteCarlo(backend) => {
                let eo = EstimatorOptions { backend, threads: opts.threads, ..Default::default() };
                let rseed = mix64(seed ^ REFERENCE_SALT ^ i as u64);
                estimate_cylinder(mu, kbar, f, s, replicas, rseed, eo)?.estimate()
            }
        };
        let residual = coupled.minus(reference);
        let per_s = if s > 0.0 { residual.scaled(1.0 / s) } else { Estimate::exact(0.0) };
        rows.push(ResidualRow { s, coupled, reference, residual, per_s });
    }
    Ok(rows)
}

/// Left-hand side of the derivative identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LhsMode {
    /// Central difference `(P(t+h) − P(t−h))/2h` on common random numbers.
    FiniteDifference { h: f64 },
    /// `(μe^{Qt}) Q f_A` from the exact oracle.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeOptions {
    pub lhs: LhsMode,
    pub threads: Option<usize>,
}

impl Default for DerivativeOptions {
    fn default() -> Self {
        Self { lhs: LhsMode::FiniteDifference { h: 0.1 }, threads: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub t: f64,
    pub eps: f64,
    /// `μ{η(u)=1, η(v)=0}`.
    pub mu_d: f64,
    pub lhs: Estimate,
    /// Finite difference at `h/2` from the same replicas, for step sensitivity.
    pub lhs_half_step: Option<Estimate>,
    /// `|ε|μ{D}·E[∏ξ̂_t − ∏η̂_t]`.
    pub rhs: Estimate,
    /// `|ε|μ{D}·Σ_z Σ_{x∈A} E[ξ^{(z)}_t(x) − η^{(z)}_t(x)]`.
    pub bound: Estimate,
}

impl DerivativeReport {
    pub fn agrees(&self, k: f64) -> bool {
        self.lhs.agrees_with(&self.rhs, k)
    }

    /// `|rhs| ≤ bound` up to `k` combined standard errors.
    pub fn bound_holds(&self, k: f64) -> bool {
        self.rhs.value.abs() <= self.bound.value + k * (self.rhs.stderr.powi(2) + self.bound.stderr.powi(2)).sqrt()
    }
}

/// Initial condition of the conditioned pair `(η̂_0, ξ̂_0)`: the law of `η̂_0`
/// and the values `ξ̂_0` takes at `(u, v)`.
fn conditioned_row(u: Site, v: Site, eps: f64) -> ([(Site, u8); 2], [u8; 2]) {
    if eps >= 0.0 {
        ([(u, 1), (v, 0)], [0, 1])
    } else {
        ([(u, 0), (v, 1)], [1, 0])
    }
}

/// Finite-difference estimate and `|ε|μ{D}` times the conditioned coupled
/// difference at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn derivative_check(
    mu: &dyn InitialMeasure,
    a: &CylinderEvent,
    kbar: &Kernel,
    entries: &Perturbation,
    t: f64,
    replicas: usize,
    seed: u64,
    opts: DerivativeOptions,
) -> Result<DerivativeReport> {
    if entries.entries.len() != 1 {
        return Err(Error::NotSinglePair(entries.entries.len()));
    }
    a.check_window(kbar.n_sites())?;
    if mu.n_sites() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), mu.n_sites()));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidValue(format!("time {t}")));
    }
    let e = entries.entries[0];
    let (u, v) = (e.x, e.y);
    let mu_d = mu.prob(&[u], &[v]);
    let weight = e.eps.abs() * mu_d;
    let (cond, xi_uv) = conditioned_row(u, v, e.eps);

    let arrows = ClockSet::new(kbar, ClockScheme::Arrows);
    let runs = replicate(replicas, seed, opts.threads, |_, rs| -> Result<(f64, f64)> {
        let log = sample_event_log_with(&arrows, t, rs)?;
        let base = mu.sample_given(rs, &cond);
        let mut xi = base.clone();
        xi[u] = xi_uv[0];
        xi[v] = xi_uv[1];
        let pair = CoupledPair {
            eta: Configuration::for_kernel(kbar, base.clone())?,
            xi: Configuration::for_kernel(kbar, xi)?,
        };
        let end = evolve_coupled(&pair, kbar, &log)?;
        let diff = a.indicator(end.xi.bits()) as f64 - a.indicator(end.eta.bits()) as f64;
        let mut excess = 0.0;
        for z in [u, v] {
            let mut eta = base.clone();
            eta[z] = 0;
            let mut xi = eta.clone();
            xi[z] = 1;
            let pair = CoupledPair {
                eta: Configuration::for_kernel(kbar, eta)?,
                xi: Configuration::for_kernel(kbar, xi)?,
            };
            let end = evolve_coupled(&pair, kbar, &log)?;
            excess += a.sites().iter().map(|&x| end.xi.get(x) as f64 - end.eta.get(x) as f64).sum::<f64>();
        }
        Ok((diff, excess))
    });
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_>>()?;
    let diffs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let excess: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let rhs = Estimate::from_samples(&diffs).scaled(weight);
    let bound = Estimate::from_samples(&excess).scaled(weight);

    let (lhs, lhs_half_step) = match opts.lhs {
        LhsMode::Exact => {
            let probs = mu
                .state_probs()
                .ok_or_else(|| Error::InvalidValue("exact derivative needs dense state probabilities".into()))?;
            let chain = build_exact(kbar)?;
            (Estimate::exact(exact_derivative(&chain, &probs, a, t)?), None)
        }
        LhsMode::FiniteDifference { h } => {
            if !(h > 0.0 && h <= t) {
                return Err(Error::InvalidValue(format!("finite-difference step h={h} must lie in (0, t={t}]")));
            }
            let stirring = ClockSet::new(kbar, ClockScheme::Stirring);
            let times = [t - h, t + h, t - h / 2.0, t + h / 2.0];
            let fd = replicate(replicas, mix64(seed ^ FD_SALT), opts.threads, |_, rs| -> Result<(f64, f64)> {
                let eta0 = Configuration::for_kernel(kbar, mu.sample(rs))?;
                let log = sample_event_log_with(&stirring, t + h, rs)?;
                let (_, traj) = crate::process::apply_log_traced(&eta0, kbar, &log)?;
                let f: Vec<f64> = traj.checkpoints(&times).iter().map(|(_, c)| a.indicator(c.bits()) as f64).collect();
                Ok(((f[1] - f[0]) / (2.0 * h), (f[3] - f[2]) / h))
            });
            let fd: Vec<(f64, f64)> = fd.into_iter().collect::<Result<_>>()?;
            let full: Vec<f64> = fd.iter().map(|r| r.0).collect();
            let half: Vec<f64> = fd.iter().map(|r| r.1).collect();
            (Estimate::from_samples(&full), Some(Estimate::from_samples(&half)))
        }
    };
    Ok(DerivativeReport { t, eps: e.eps, mu_d, lhs, lhs_half_step, rhs, bound })
}

/// Expected time the discrepancy started at `z` spends at `x` before the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub x: Site,
    pub value: f64,
    pub stderr: f64,
    pub horizon: f64,
    pub replicas: usize,
}

impl GreenEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, stderr: self.stderr, replicas: self.replicas }
    }
}

/// Follow the single plus discrepancy of `(η, ξ)` with `ξ = η + δ_z` on the
/// stirring clocks behind `lin`, calling `visit(site, from, to)` for each
/// sojourn. A swap carries the discrepancy along; a directed ring `(w,b)`
/// moves it to `b` when `η(b) = 0`, and a ring `(a,w)` moves it to `a` when
/// `η(a) = 1`. It ends when it enters a reservoir site.
///
/// With a single discrepancy the pair `(η, position)` has the same law on
/// stirring clocks as on arrows, so this is the basic-coupling discrepancy.
pub fn track_discrepancy<F: Fn(Site) -> u8>(
    lin: &mut Lineage<'_, F>,
    kernel: &Kernel,
    z: Site,
    horizon: f64,
    mut visit: impl FnMut(Site, f64, f64),
) {
    if kernel.frozen_value(z).is_some() {
        return;
    }
    let (mut w, mut t) = (z, 0.0);
    loop {
        let Some((s, c)) = lin.clocks().next_incident(w, t).filter(|&(s, _)| s < horizon) else {
            visit(w, t, horizon);
            return;
        };
        visit(w, t, s);
        let clock = *lin.clocks().set().clock(c as usize);
        let target = match clock.kind {
            EventKind::Swap => Some(clock.other(w)),
            EventKind::Directed => {
                let (a, b) = (clock.x as usize, clock.y as usize);
                if w == a {
                    (lin.eval(b, s) == 0).then_some(b)
                } else {
                    (lin.eval(a, s) == 1).then_some(a)
                }
            }
        };
        if let Some(next) = target {
            w = next;
            if kernel.frozen_value(w).is_some() {
                return;
            }
        }
        t = s;
    }
}

/// Occupation-time estimates of `G*(z, x)` truncated at `horizon`, for each
/// `x` in `xs`. `η_0` is drawn from `μ` conditioned on `conditioning`, then
/// `η_0(z) = 0` and `ξ_0(z) = 1` are forced. A discrepancy that leaves
/// through a reservoir stops accumulating time.
#[allow(clippy::too_many_arguments)]
pub fn discrepancy_green(
    z: Site,
    xs: &[Site],
    kbar: &Kernel,
    mu: &dyn InitialMeasure,
    conditioning: &[(Site, u8)],
    horizon: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<GreenEstimate>> {
    let n = kbar.n_sites();
    if mu.n_sites() != n {
        return Err(Error::SiteSetMismatch(n, mu.n_sites()));
    }
    for &site in xs.iter().chain([&z]).chain(conditioning.iter().map(|c| &c.0)) {
        if site >= n {
            return Err(Error::SiteOutOfWindow { site, n_sites: n });
        }
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidValue(format!("horizon {horizon}")));
    }
    let mut forced: Vec<(Site, u8)> = conditioning.iter().copied().filter(|c| c.0 != z).collect();
    forced.push((z, 0));
    let set = ClockSet::new(kbar, ClockScheme::Stirring);
    let product = mu.as_product();
    let occupation = replicate(replicas, seed, threads, |_, rs| {
        let streams = Streams::new(rs);
        let dense = product.is_none().then(|| mu.sample_given(rs, &forced));
        let init = |x: Site| {
            if let Some(&(_, v)) = forced.iter().find(|f| f.0 == x) {
                return v;
            }
            match (&dense, product) {
                (Some(bits), _) => bits[x],
                (None, Some(p)) => p.site_value(&streams, x),
                (None, None) => unreachable!("dense sample exists without a product measure"),
            }
        };
        let mut lin = Lineage::new(&set, kbar, rs, horizon, init);
        let mut occ = vec![0.0; xs.len()];
        track_discrepancy(&mut lin, kbar, z, horizon, |w, from, to| {
            for (o, &x) in occ.iter_mut().zip(xs) {
                if x == w {
                    *o += to - from;
                }
            }
        });
        occ
    });
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let samples: Vec<f64> = occupation.iter().map(|o| o[i]).collect();
            let e = Estimate::from_samples(&samples);
            GreenEstimate { x, value: e.value, stderr: e.stderr, horizon, replicas }
        })
        .collect())
}
