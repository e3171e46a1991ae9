//! Forward evolution of occupation configurations.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphical::{ClockEvent, EventKind, EventLog};
use crate::kernel::{BoundaryMode, Kernel, Site};
use crate::rng::{exp_variate, Domain, Streams};

/// Occupation map `η: window → {0,1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    bits: Vec<u8>,
    boundary: BoundaryMode,
}

impl Configuration {
    /// Configuration with the given bits; any nonzero entry counts as occupied.
    pub fn from_bits(bits: Vec<u8>, boundary: BoundaryMode) -> Self {
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Self { bits, boundary }
    }

    /// Bits for a kernel's window, with reservoir sites set to their pinned value.
    pub fn for_kernel(k: &Kernel, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != k.n_sites() {
            return Err(Error::SiteSetMismatch(k.n_sites(), bits.len()));
        }
        let mut c = Self::from_bits(bits, k.boundary());
        c.pin_frozen(k);
        Ok(c)
    }

    pub fn empty(n: usize, boundary: BoundaryMode) -> Self {
        Self { bits: vec![0; n], boundary }
    }

    pub fn full(n: usize, boundary: BoundaryMode) -> Self {
        Self { bits: vec![1; n], boundary }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    #[inline]
    pub fn get(&self, site: Site) -> u8 {
        self.bits[site]
    }

    #[inline]
    pub fn set(&mut self, site: Site, value: u8) {
        self.bits[site] = (value != 0) as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn particles(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Occupation string, one character per site.
    pub fn packed(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    /// State index with site `i` as bit `i`; windows of at most 64 sites.
    pub fn index(&self) -> usize {
        self.bits.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i))
    }

    pub fn from_index(index: usize, n: usize, boundary: BoundaryMode) -> Self {
        Self { bits: (0..n).map(|i| ((index >> i) & 1) as u8).collect(), boundary }
    }

    /// Reset reservoir sites to their pinned value.
    pub fn pin_frozen(&mut self, k: &Kernel) {
        if !k.has_frozen_sites() {
            return;
        }
        for s in 0..self.bits.len() {
            if let Some(v) = k.frozen_value(s) {
                self.bits[s] = v;
            }
        }
    }

    /// Apply one clock ring.
    #[inline]
    pub fn apply_event(&mut self, k: &Kernel, kind: EventKind, x: Site, y: Site) {
        match kind {
            EventKind::Swap => self.bits.swap(x, y),
            EventKind::Directed => {
                if self.bits[x] == 1 && self.bits[y] == 0 {
                    self.bits[x] = 0;
                    self.bits[y] = 1;
                }
            }
        }
        if let Some(v) = k.frozen_value(x) {
            self.bits[x] = v;
        }
        if let Some(v) = k.frozen_value(y) {
            self.bits[y] = v;
        }
    }
}

/// A finite set of sites `A`, the event `{η ≡ 1 on A}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CylinderEvent {
    sites: Vec<Site>,
}

impl CylinderEvent {
    /// Sorted, deduplicated site set.
    pub fn new(mut sites: Vec<Site>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        Self { sites }
    }

    pub fn trivial() -> Self {
        Self::default()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: Site) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn check_window(&self, n_sites: usize) -> Result<()> {
        match self.sites.iter().find(|&&s| s >= n_sites) {
            Some(&site) => Err(Error::SiteOutOfWindow { site, n_sites }),
            None => Ok(()),
        }
    }

    /// `f_A(η) = ∏_{x∈A} η(x)` on a raw bit slice.
    #[inline]
    pub fn indicator(&self, bits: &[u8]) -> u8 {
        self.sites.iter().all(|&s| bits[s] == 1) as u8
    }
}

pub fn cylinder_value(eta: &Configuration, a: &CylinderEvent) -> Result<u8> {
    a.check_window(eta.len())?;
    Ok(a.indicator(eta.bits()))
}

fn check_window(eta: &Configuration, k: &Kernel, log: &EventLog) -> Result<()> {
    log.check_fingerprint(k.fingerprint())?;
    if eta.len() != k.n_sites() {
        return Err(Error::SiteSetMismatch(k.n_sites(), eta.len()));
    }
    Ok(())
}

/// Replay `log` (in its own time order) on `eta0`. `k` is the kernel the
/// log was sampled from; its reservoir sites are re-pinned after each event.
pub fn apply_log(eta0: &Configuration, k: &Kernel, log: &EventLog) -> Result<Configuration> {
    check_window(eta0, k, log)?;
    let mut eta = eta0.clone();
    for e in &log.events {
        eta.apply_event(k, e.kind, e.x as usize, e.y as usize);
    }
    Ok(eta)
}

/// Occupations at the two endpoints of one event, before and after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub pre: [u8; 2],
    pub post: [u8; 2],
}

/// Event-exact forward trajectory: the initial state plus one record per
/// event of the log it was produced from.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<ClockEvent>,
    pub records: Vec<EventRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_state(&self) -> Configuration {
        let mut eta = self.initial.clone();
        for (e, r) in self.events.iter().zip(&self.records) {
            eta.set(e.x as usize, r.post[0]);
            eta.set(e.y as usize, r.post[1]);
        }
        eta
    }

    /// Configurations at each requested time (events at times `<= t` applied).
    pub fn checkpoints(&self, times: &[f64]) -> Vec<(f64, Configuration)> {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut out = vec![(0.0, self.initial.clone()); times.len()];
        let mut eta = self.initial.clone();
        let mut next = 0;
        for i in order {
            let t = times[i];
            while next < self.events.len() && self.events[next].time <= t {
                let (e, r) = (&self.events[next], &self.records[next]);
                eta.set(e.x as usize, r.post[0]);
                eta.set(e.y as usize, r.post[1]);
                next += 1;
            }
            out[i] = (t, eta.clone());
        }
        out
    }

    /// CSV rows `time,occupancy` at the requested times.
    pub fn checkpoints_csv(&self, times: &[f64]) -> String {
        let mut s = String::from("time,occupancy\n");
        for (t, eta) in self.checkpoints(times) {
            let _ = writeln!(s, "{t},{}", eta.packed());
        }
        s
    }
}

/// [`apply_log`] that also records the event-exact trajectory.
pub fn apply_log_traced(eta0: &Configuration, k: &Kernel, log: &EventLog) -> Result<(Configuration, Trajectory)> {
    check_window(eta0, k, log)?;
    let mut eta = eta0.clone();
    let mut records = Vec::with_capacity(log.len());
    for e in &log.events {
        let (x, y) = e.sites();
        let pre = [eta.get(x), eta.get(y)];
        eta.apply_event(k, e.kind, x, y);
        records.push(EventRecord { pre, post: [eta.get(x), eta.get(y)] });
    }
    let traj = Trajectory { initial: eta0.clone(), events: log.events.clone(), records };
    Ok((eta, traj))
}

/// Direct continuous-time simulation of the exclusion generator: a particle
/// at `x` attempts `x → y` at rate `p̄(x,y)`, suppressed when `y` is occupied.
pub fn gillespie(eta0: &Configuration, kbar: &Kernel, horizon: f64, seed: u64) -> Result<Configuration> {
    if eta0.len() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(kbar.n_sites(), eta0.len()));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidValue(format!("horizon {horizon}")));
    }
    let mut rng = Streams::new(seed).stream(Domain::Gillespie, 0, 0);
    let mut eta = eta0.clone();
    let edges: Vec<(Site, Site, f64)> = kbar.edges().collect();
    let mut t = 0.0;
    loop {
        let total: f64 = edges
            .iter()
            .filter(|&&(x, y, _)| eta.get(x) == 1 && eta.get(y) == 0)
            .map(|e| e.2)
            .sum();
        if total <= 0.0 {
            return Ok(eta);
        }
        t += exp_variate(&mut rng, total);
        if t >= horizon {
            return Ok(eta);
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = None;
        for &(x, y, r) in &edges {
            if eta.get(x) == 1 && eta.get(y) == 0 {
                chosen = Some((x, y));
                if pick < r {
                    break;
                }
                pick -= r;
            }
        }
        if let Some((x, y)) = chosen {
            eta.apply_event(kbar, EventKind::Directed, x, y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphical::sample_event_log;
    use crate::kernel::{build_kernel, GraphSpec};

    fn edge() -> Kernel {
        build_kernel(&GraphSpec::path(2, 1.0)).unwrap()
    }

    fn one_swap(k: &Kernel) -> EventLog {
        let mut log = sample_event_log(k, 1.0, 0).unwrap();
        log.events = vec![ClockEvent { time: 0.5, forward_time: 0.5, kind: EventKind::Swap, x: 0, y: 1 }];
        log
    }

    #[test]
    fn empty_log_is_identity() {
        let k = edge();
        let mut log = sample_event_log(&k, 1.0, 0).unwrap();
        log.events.clear();
        let eta = Configuration::from_bits(vec![1, 0], BoundaryMode::Reflecting);
        assert_eq!(apply_log(&eta, &k, &log).unwrap(), eta);
    }

    #[test]
    fn single_swap_moves_the_particle() {
        let k = edge();
        let eta = Configuration::from_bits(vec![1, 0], BoundaryMode::Reflecting);
        assert_eq!(apply_log(&eta, &k, &one_swap(&k)).unwrap().bits(), &[0, 1]);
    }

    #[test]
    fn full_edge_is_invariant_under_swaps() {
        let k = edge();
        let eta = Configuration::full(2, BoundaryMode::Reflecting);
        let log = sample_event_log(&k, 50.0, 3).unwrap();
        assert!(!log.is_empty());
        assert_eq!(apply_log(&eta, &k, &log).unwrap(), eta);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let k = edge();
        let other = build_kernel(&GraphSpec::path(2, 0.5)).unwrap();
        let log = sample_event_log(&other, 1.0, 0).unwrap();
        let eta = Configuration::empty(2, BoundaryMode::Reflecting);
        assert!(matches!(apply_log(&eta, &k, &log), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn directed_event_respects_exclusion() {
        let k = Kernel::from_rates(2, &[(0, 1, 1.0)]).unwrap();
        let mut eta = Configuration::from_bits(vec![1, 1], BoundaryMode::Reflecting);
        eta.apply_event(&k, EventKind::Directed, 0, 1);
        assert_eq!(eta.bits(), &[1, 1]);
        let mut eta = Configuration::from_bits(vec![1, 0], BoundaryMode::Reflecting);
        eta.apply_event(&k, EventKind::Directed, 0, 1);
        assert_eq!(eta.bits(), &[0, 1]);
        eta.apply_event(&k, EventKind::Directed, 0, 1);
        assert_eq!(eta.bits(), &[0, 1]);
    }

    #[test]
    fn conservation_on_reflecting_and_periodic_windows() {
        for spec in [GraphSpec::path(9, 0.5), GraphSpec::cycle(9, 0.5)] {
            let k = build_kernel(&spec).unwrap();
            let log = sample_event_log(&k, 30.0, 11).unwrap();
            let eta = Configuration::from_bits(vec![1, 0, 1, 1, 0, 0, 0, 1, 0], k.boundary());
            assert_eq!(apply_log(&eta, &k, &log).unwrap().particles(), eta.particles());
        }
    }

    #[test]
    fn frozen_sites_stay_pinned() {
        let k = build_kernel(&GraphSpec::path(6, 1.0).with_boundary(BoundaryMode::FrozenFull)).unwrap();
        let eta = Configuration::for_kernel(&k, vec![0; 6]).unwrap();
        assert_eq!(eta.bits(), &[1, 0, 0, 0, 0, 1]);
        let log = sample_event_log(&k, 20.0, 5).unwrap();
        let (end, traj) = apply_log_traced(&eta, &k, &log).unwrap();
        assert_eq!(end.get(0), 1);
        assert_eq!(end.get(5), 1);
        assert_eq!(traj.final_state(), end);
    }

    #[test]
    fn cylinder_values() {
        let eta = Configuration::from_bits(vec![1, 1, 0], BoundaryMode::Reflecting);
        assert_eq!(cylinder_value(&eta, &CylinderEvent::trivial()).unwrap(), 1);
        assert_eq!(cylinder_value(&eta, &CylinderEvent::new(vec![1, 0])).unwrap(), 1);
        assert_eq!(cylinder_value(&eta, &CylinderEvent::new(vec![0, 2])).unwrap(), 0);
        let full = Configuration::full(3, BoundaryMode::Reflecting);
        assert_eq!(cylinder_value(&full, &CylinderEvent::new(vec![0, 1, 2])).unwrap(), 1);
        assert!(cylinder_value(&eta, &CylinderEvent::new(vec![3])).is_err());
    }

    #[test]
    fn checkpoints_follow_the_trajectory() {
        let k = build_kernel(&GraphSpec::cycle(5, 1.0)).unwrap();
        let log = sample_event_log(&k, 5.0, 2).unwrap();
        let eta = Configuration::from_bits(vec![1, 1, 0, 0, 0], k.boundary());
        let (end, traj) = apply_log_traced(&eta, &k, &log).unwrap();
        let cps = traj.checkpoints(&[5.0, 0.0]);
        assert_eq!(cps[0].1, end);
        assert_eq!(cps[1].1, eta);
        let csv = traj.checkpoints_csv(&[0.0, 5.0]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with(",11000"));
    }

    #[test]
    fn gillespie_trivial_cases() {
        let k = build_kernel(&GraphSpec::path(4, 1.0)).unwrap();
        let eta = Configuration::from_bits(vec![1, 0, 0, 1], k.boundary());
        assert_eq!(gillespie(&eta, &k, 0.0, 1).unwrap(), eta);
        let full = Configuration::full(4, k.boundary());
        assert_eq!(gillespie(&full, &k, 100.0, 1).unwrap(), full);
    }

    #[test]
    fn gillespie_single_particle_equilibrates_uniformly() {
        let k = build_kernel(&GraphSpec::path(4, 1.0)).unwrap();
        let eta = Configuration::from_bits(vec![1, 0, 0, 0], k.boundary());
        let n = 20_000;
        let mut counts = [0usize; 4];
        for i in 0..n {
            let end = gillespie(&eta, &k, 30.0, i as u64).unwrap();
            counts[end.bits().iter().position(|&b| b == 1).unwrap()] += 1;
        }
        let sd = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn index_round_trips() {
        let eta = Configuration::from_bits(vec![1, 0, 1, 1], BoundaryMode::Reflecting);
        assert_eq!(eta.index(), 0b1101);
        assert_eq!(Configuration::from_index(0b1101, 4, BoundaryMode::Reflecting), eta);
    }
}
