//! Finite-particle duals on shared clocks.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphical::{reverse, sample_event_log, ClockScheme, ClockSet, EventKind, EventLog, LazyClocks};
use crate::kernel::{Kernel, PerturbSupport, Site};
use crate::measures::InitialMeasure;
use crate::process::{apply_log, apply_log_traced, Configuration, CylinderEvent, Trajectory};
use crate::rng::{exp_variate, mix64, Domain, Streams};
use crate::stats::{replicate, Estimate};

/// Salt separating the independent-clock replica family from the shared one.
const INDEPENDENT_SALT: u64 = 0x6a09_e667_f3bc_c908;

/// A finite site set or the absorbing cemetery `Δ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualState {
    Set(Vec<Site>),
    Cemetery,
}

impl DualState {
    /// Sorted, deduplicated set.
    pub fn set(mut sites: Vec<Site>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        DualState::Set(sites)
    }

    pub fn sites(&self) -> Option<&[Site]> {
        match self {
            DualState::Set(s) => Some(s),
            DualState::Cemetery => None,
        }
    }

    pub fn is_cemetery(&self) -> bool {
        matches!(self, DualState::Cemetery)
    }

    /// `∏_{x∈A} η(x)`, with `η(Δ) ≡ 0`.
    pub fn indicator(&self, eta: &Configuration) -> u8 {
        match self {
            DualState::Set(s) => s.iter().all(|&x| eta.get(x) == 1) as u8,
            DualState::Cemetery => 0,
        }
    }

    fn label(&self) -> String {
        match self {
            DualState::Set(s) => s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            DualState::Cemetery => "cemetery".to_string(),
        }
    }
}

/// Exchange membership of `x` and `y` in a sorted set.
fn stir(set: &mut Vec<Site>, x: Site, y: Site) {
    let hx = set.binary_search(&x);
    let hy = set.binary_search(&y);
    match (hx, hy) {
        (Ok(i), Err(_)) => {
            set.remove(i);
            let j = set.binary_search(&y).unwrap_err();
            set.insert(j, y);
        }
        (Err(_), Ok(i)) => {
            set.remove(i);
            let j = set.binary_search(&x).unwrap_err();
            set.insert(j, x);
        }
        _ => {}
    }
}

/// Stir `a0` along the swap events of `log` (in the log's own order).
pub fn evolve_dual(a0: &DualState, log: &EventLog) -> Result<DualState> {
    let directed = log.directed_events();
    if directed > 0 {
        return Err(Error::DirectedEventsInDualLog(directed));
    }
    let DualState::Set(sites) = a0 else {
        return Ok(DualState::Cemetery);
    };
    let mut set = sites.clone();
    for e in &log.events {
        stir(&mut set, e.x as usize, e.y as usize);
    }
    Ok(DualState::Set(set))
}

/// Which way the approximate dual runs relative to the forward path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Runs with forward time; occupations are read before the switch.
    Forward,
    /// Runs from `T` down to `0` on the reversed log; occupations are read
    /// after the switch.
    Reversed,
}

/// Outcome of one approximate-dual run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRunRecord {
    pub seed: u64,
    pub final_state: DualState,
    /// A swap ever joined a member of `Ā` to a site of `B`.
    pub hit_b: bool,
    /// `Ā_t = A_t` for the whole run.
    pub stayed_equal: bool,
}

/// Run `Ā` from `a0` on `log` next to the plain dual `A`, consulting the
/// event-exact forward trajectory `traj` of the same clocks. Only swap
/// events move either set.
pub fn evolve_approx_dual(
    a0: &[Site],
    log: &EventLog,
    traj: &Trajectory,
    support: &PerturbSupport,
    direction: Direction,
) -> Result<DualRunRecord> {
    if let Some(&x) = a0.iter().find(|&&x| support.contains(x)) {
        return Err(Error::DualMeetsSupport(x));
    }
    if traj.len() != log.len() {
        return Err(Error::InvalidValue(format!(
            "trajectory has {} events but the log has {}",
            traj.len(),
            log.len()
        )));
    }
    let expected_reversed = direction == Direction::Reversed;
    if log.reversed != expected_reversed {
        return Err(Error::InvalidValue(format!("{direction:?} run needs a log with reversed = {expected_reversed}")));
    }
    let n = log.len();
    let mut approx = DualState::set(a0.to_vec());
    let mut plain: Vec<Site> = approx.sites().map(<[Site]>::to_vec).unwrap_or_default();
    let mut hit_b = false;
    let mut stayed_equal = true;
    for (i, e) in log.events.iter().enumerate() {
        if e.kind != EventKind::Swap {
            continue;
        }
        let (x, y) = e.sites();
        stir(&mut plain, x, y);
        if let DualState::Set(set) = &mut approx {
            let in_x = set.binary_search(&x).is_ok();
            let in_y = set.binary_search(&y).is_ok();
            if in_x != in_y {
                let (member, other) = if in_x { (x, y) } else { (y, x) };
                if support.contains(other) {
                    hit_b = true;
                    let idx = if expected_reversed { n - 1 - i } else { i };
                    let rec = &traj.records[idx];
                    let slot = if traj.events[idx].x as usize == member { 0 } else { 1 };
                    let occupied = match direction {
                        Direction::Forward => rec.pre[slot],
                        Direction::Reversed => rec.post[slot],
                    };
                    if occupied == 1 {
                        let j = set.binary_search(&member).expect("member");
                        set.remove(j);
                    } else {
                        approx = DualState::Cemetery;
                    }
                } else {
                    stir(set, x, y);
                }
            }
        }
        if stayed_equal && approx.sites() != Some(plain.as_slice()) {
            stayed_equal = false;
        }
    }
    Ok(DualRunRecord { seed: log.seed, final_state: approx, hit_b, stayed_equal })
}

/// CSV rows `seed,final_state,hit_b,stayed_equal`.
pub fn records_csv(records: &[DualRunRecord]) -> String {
    let mut s = String::from("seed,final_state,hit_b,stayed_equal\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.seed, r.final_state.label(), r.hit_b, r.stayed_equal);
    }
    s
}

/// Result of a duality experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// Forward estimate of `P(η_T ≡ 1 on A)` on the shared clocks.
    pub lhs: Estimate,
    /// Dual estimate of `P(η_0 ≡ 1 on A_T)` on the same clocks, reversed.
    pub rhs: Estimate,
    /// The two indicators agreed for every replica.
    pub pathwise_equal: bool,
    pub mismatches: usize,
    /// Forward and dual estimates from independent clock families.
    pub independent_lhs: Estimate,
    pub independent_rhs: Estimate,
}

fn require_dualisable(k: &Kernel) -> Result<()> {
    if k.has_frozen_sites() {
        return Err(Error::UnsupportedBoundary(k.boundary().name().to_string()));
    }
    Ok(())
}

fn check_inputs(mu: &dyn InitialMeasure, a: &CylinderEvent, k: &Kernel) -> Result<()> {
    a.check_window(k.n_sites())?;
    if mu.n_sites() != k.n_sites() {
        return Err(Error::SiteSetMismatch(k.n_sites(), mu.n_sites()));
    }
    require_dualisable(k)
}

/// Forward versus reversed-dual cylinder indicators for one replica.
fn duality_pair(mu: &dyn InitialMeasure, a: &CylinderEvent, k: &Kernel, horizon: f64, seed: u64) -> Result<(u8, u8)> {
    let eta0 = Configuration::for_kernel(k, mu.sample(seed))?;
    let log = sample_event_log(k, horizon, seed)?;
    let eta_t = apply_log(&eta0, k, &log)?;
    let a_t = evolve_dual(&DualState::set(a.sites().to_vec()), &reverse(&log))?;
    Ok((a.indicator(eta_t.bits()), a_t.indicator(&eta0)))
}

/// Forward and dual evaluation of `P(η_T ≡ 1 on A)` for a symmetric kernel.
pub fn duality_check(
    mu: &dyn InitialMeasure,
    a: &CylinderEvent,
    k: &Kernel,
    horizon: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<DualityReport> {
    k.require_symmetric()?;
    check_inputs(mu, a, k)?;
    let shared = replicate(replicas, seed, threads, |_, s| duality_pair(mu, a, k, horizon, s));
    let shared: Vec<(u8, u8)> = shared.into_iter().collect::<Result<_>>()?;
    let mismatches = shared.iter().filter(|(l, r)| l != r).count();
    let lhs_hits = shared.iter().filter(|p| p.0 == 1).count();
    let rhs_hits = shared.iter().filter(|p| p.1 == 1).count();
    // the dual side of a second, independent family of clocks
    let indep = replicate(replicas, mix64(seed ^ INDEPENDENT_SALT), threads, |_, s| duality_pair(mu, a, k, horizon, s));
    let indep: Vec<(u8, u8)> = indep.into_iter().collect::<Result<_>>()?;
    let indep_rhs = indep.iter().filter(|p| p.1 == 1).count();
    Ok(DualityReport {
        lhs: Estimate::from_bernoulli(lhs_hits, replicas),
        rhs: Estimate::from_bernoulli(rhs_hits, replicas),
        pathwise_equal: mismatches == 0,
        mismatches,
        independent_lhs: Estimate::from_bernoulli(lhs_hits, replicas),
        independent_rhs: Estimate::from_bernoulli(indep_rhs, replicas),
    })
}

/// Pathwise check of `{η_T ≡ 1 on Ā_0^T} = {η_0 ≡ 1 on Ā_T^T}` for a
/// quasi-symmetric kernel, together with the divergence frequency of `Ā^T`
/// from `A^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxDualityReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pathwise_equal: bool,
    pub mismatches: usize,
    /// Estimate of `P((N_A^T)^c)`.
    pub divergence: Estimate,
    pub records: Vec<DualRunRecord>,
}

#[allow(clippy::too_many_arguments)]
pub fn approx_duality_check(
    mu: &dyn InitialMeasure,
    a: &CylinderEvent,
    k: &Kernel,
    kbar: &Kernel,
    horizon: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<ApproxDualityReport> {
    k.require_symmetric()?;
    check_inputs(mu, a, kbar)?;
    let support = crate::kernel::support_set(k, kbar)?;
    let runs = replicate(replicas, seed, threads, |_, s| -> Result<(u8, u8, DualRunRecord)> {
        let eta0 = Configuration::for_kernel(kbar, mu.sample(s))?;
        let log = sample_event_log(kbar, horizon, s)?;
        let (eta_t, traj) = apply_log_traced(&eta0, kbar, &log)?;
        let rec = evolve_approx_dual(a.sites(), &reverse(&log), &traj, &support, Direction::Reversed)?;
        Ok((a.indicator(eta_t.bits()), rec.final_state.indicator(&eta0), rec))
    });
    let runs: Vec<(u8, u8, DualRunRecord)> = runs.into_iter().collect::<Result<_>>()?;
    let mismatches = runs.iter().filter(|r| r.0 != r.1).count();
    let lhs = runs.iter().filter(|r| r.0 == 1).count();
    let rhs = runs.iter().filter(|r| r.1 == 1).count();
    let diverged = runs.iter().filter(|r| !r.2.stayed_equal).count();
    Ok(ApproxDualityReport {
        lhs: Estimate::from_bernoulli(lhs, replicas),
        rhs: Estimate::from_bernoulli(rhs, replicas),
        pathwise_equal: mismatches == 0,
        mismatches,
        divergence: Estimate::from_bernoulli(diverged, replicas),
        records: runs.into_iter().map(|r| r.2).collect(),
    })
}

/// Does the stirring dual started from `a0` visit `z` before `horizon`?
/// Clocks are generated lazily, so only the sites the particles visit cost
/// anything.
pub fn dual_hits(clocks: &mut LazyClocks<'_>, a0: &[Site], z: Site, horizon: f64) -> bool {
    let mut pos: Vec<Site> = a0.to_vec();
    if pos.contains(&z) {
        return true;
    }
    let set = clocks.set();
    let mut t = 0.0;
    loop {
        let mut best: Option<(f64, u32)> = None;
        for &p in &pos {
            for &c in set.incident(p) {
                if let Some(s) = clocks.next_after(c, t) {
                    if best.is_none_or(|(b, _)| s < b) {
                        best = Some((s, c));
                    }
                }
            }
        }
        let Some((s, c)) = best else { return false };
        if s >= horizon {
            return false;
        }
        let clock = set.clock(c as usize);
        let (x, y) = (clock.x as usize, clock.y as usize);
        for p in pos.iter_mut() {
            if *p == x {
                *p = y;
            } else if *p == y {
                *p = x;
            }
        }
        if pos.contains(&z) {
            return true;
        }
        t = s;
    }
}

fn check_sites(k: &Kernel, sites: &[Site]) -> Result<()> {
    match sites.iter().find(|&&s| s >= k.n_sites()) {
        Some(&site) => Err(Error::SiteOutOfWindow { site, n_sites: k.n_sites() }),
        None => Ok(()),
    }
}

/// `P(z ∈ A_t for some t ≤ T)` for the stirring dual of a symmetric kernel.
pub fn hitting_probability(
    k: &Kernel,
    a0: &[Site],
    z: Site,
    horizon: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Estimate> {
    k.require_symmetric()?;
    check_sites(k, a0)?;
    check_sites(k, &[z])?;
    let set = ClockSet::new(k, ClockScheme::Stirring);
    let hits = replicate(replicas, seed, threads, |_, s| {
        let mut clocks = LazyClocks::new(&set, s, horizon);
        dual_hits(&mut clocks, a0, z, horizon)
    });
    Ok(Estimate::from_bernoulli(hits.iter().filter(|&&h| h).count(), replicas))
}

/// `P(Y_t = z for some t ≤ T)` for a single continuous-time walk with rates
/// `p(x,y)`, simulated directly without clocks.
pub fn walk_hitting_probability(
    k: &Kernel,
    x0: Site,
    z: Site,
    horizon: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Estimate> {
    check_sites(k, &[x0, z])?;
    let hits = replicate(replicas, seed, threads, |_, s| {
        let mut rng = Streams::new(s).stream(Domain::Walk, 0, 0);
        let (mut x, mut t) = (x0, 0.0);
        loop {
            if x == z {
                return true;
            }
            let exit = k.exit_rate(x);
            if exit <= 0.0 {
                return false;
            }
            t += exp_variate(&mut rng, exit);
            if t >= horizon {
                return false;
            }
            let mut u = rng.random::<f64>() * exit;
            let mut next = x;
            for (y, r) in k.out_edges(x) {
                next = y;
                if u < r {
                    break;
                }
                u -= r;
            }
            x = next;
        }
    });
    Ok(Estimate::from_bernoulli(hits.iter().filter(|&&h| h).count(), replicas))
}
