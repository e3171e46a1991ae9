//! Poisson-clock realisations of the sample path.
//!
//! Two clock schemes are available:
//!
//! * [`ClockScheme::Stirring`]: one swap clock per unordered pair at the
//!   symmetric rate `s(x,y) = min(p̄(x,y), p̄(y,x))`, plus a directed clock at
//!   the residual rate `r(x,y) = p̄(x,y) - s(x,y)` wherever it is positive.
//!   This is the construction the duality machinery needs.
//! * [`ClockScheme::Arrows`]: one directed clock per ordered pair at rate
//!   `p̄(x,y)`. Running two configurations on the same arrows is the basic
//!   coupling.
//!
//! Clock times are generated per `(clock, chunk)` from counter-based streams,
//! so a fully materialised [`EventLog`] and the on-demand [`LazyClocks`]
//! describe the same realisation for a given seed.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Site};
use crate::rng::{exp_variate, Domain, Streams};

/// Length of the time chunks clocks are generated in.
pub const CHUNK: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Exchange the occupations of `x` and `y`.
    Swap,
    /// Move a particle from `x` to `y` if `x` is occupied and `y` empty.
    Directed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockScheme {
    Stirring,
    Arrows,
}

/// One ring of one clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockEvent {
    /// Time in the log's own direction.
    pub time: f64,
    /// Time of the same ring in forward time.
    pub forward_time: f64,
    pub kind: EventKind,
    /// For swaps `x < y`.
    pub x: u32,
    pub y: u32,
}

impl ClockEvent {
    pub fn sites(&self) -> (Site, Site) {
        (self.x as usize, self.y as usize)
    }
}

/// Symmetric part and directed residual of a kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDecomposition {
    /// `(x, y, s(x,y))` with `x < y` and `s > 0`.
    pub swaps: Vec<(Site, Site, f64)>,
    /// `(x, y, r(x,y))` with `r > 0`.
    pub directed: Vec<(Site, Site, f64)>,
}

impl RateDecomposition {
    pub fn swap_rate(&self, x: Site, y: Site) -> f64 {
        let (a, b) = (x.min(y), x.max(y));
        self.swaps.iter().find(|&&(p, q, _)| p == a && q == b).map_or(0.0, |e| e.2)
    }

    pub fn residual_rate(&self, x: Site, y: Site) -> f64 {
        self.directed.iter().find(|&&(p, q, _)| p == x && q == y).map_or(0.0, |e| e.2)
    }
}

pub fn decompose_rates(kbar: &Kernel) -> RateDecomposition {
    let mut swaps = Vec::new();
    let mut directed = Vec::new();
    for (x, y, r) in kbar.edges() {
        let back = kbar.rate(y, x);
        let s = r.min(back);
        if x < y && s > 0.0 {
            swaps.push((x, y, s));
        }
        let residual = r - s;
        if residual > 0.0 {
            directed.push((x, y, residual));
        }
    }
    RateDecomposition { swaps, directed }
}

/// A single Poisson clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub kind: EventKind,
    pub x: u32,
    pub y: u32,
    pub rate: f64,
}

impl Clock {
    fn domain(&self) -> Domain {
        match self.kind {
            EventKind::Swap => Domain::Clock,
            EventKind::Directed => Domain::DirectedClock,
        }
    }

    fn stream_id(&self) -> u64 {
        ((self.x as u64) << 32) | self.y as u64
    }

    pub fn other(&self, site: Site) -> Site {
        if self.x as usize == site {
            self.y as usize
        } else {
            self.x as usize
        }
    }
}

/// Ring times of `clock` inside chunk `chunk`, increasing.
pub fn chunk_times(streams: &Streams, clock: &Clock, chunk: u64) -> Vec<f64> {
    let mut rng = streams.stream(clock.domain(), clock.stream_id(), chunk);
    let start = chunk as f64 * CHUNK;
    let end = start + CHUNK;
    let mut out = Vec::new();
    let mut t = start + exp_variate(&mut rng, clock.rate);
    while t < end {
        out.push(t);
        t += exp_variate(&mut rng, clock.rate);
    }
    out
}

/// All clocks of a kernel under a scheme, with per-site incidence.
#[derive(Debug, Clone)]
pub struct ClockSet {
    scheme: ClockScheme,
    n_sites: usize,
    fingerprint: u64,
    clocks: Vec<Clock>,
    incident: Vec<Vec<u32>>,
}

impl ClockSet {
    pub fn new(kbar: &Kernel, scheme: ClockScheme) -> Self {
        let mut clocks = Vec::new();
        match scheme {
            ClockScheme::Stirring => {
                let dec = decompose_rates(kbar);
                for (x, y, rate) in dec.swaps {
                    clocks.push(Clock { kind: EventKind::Swap, x: x as u32, y: y as u32, rate });
                }
                for (x, y, rate) in dec.directed {
                    clocks.push(Clock { kind: EventKind::Directed, x: x as u32, y: y as u32, rate });
                }
            }
            ClockScheme::Arrows => {
                for (x, y, rate) in kbar.edges() {
                    clocks.push(Clock { kind: EventKind::Directed, x: x as u32, y: y as u32, rate });
                }
            }
        }
        let mut incident = vec![Vec::new(); kbar.n_sites()];
        for (i, c) in clocks.iter().enumerate() {
            incident[c.x as usize].push(i as u32);
            incident[c.y as usize].push(i as u32);
        }
        Self { scheme, n_sites: kbar.n_sites(), fingerprint: kbar.fingerprint(), clocks, incident }
    }

    pub fn scheme(&self) -> ClockScheme {
        self.scheme
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn clocks(&self) -> &[Clock] {
        &self.clocks
    }

    pub fn clock(&self, i: usize) -> &Clock {
        &self.clocks[i]
    }

    /// Indices of clocks with `site` as an endpoint.
    pub fn incident(&self, site: Site) -> &[u32] {
        &self.incident[site]
    }

    /// Clock indices touching a site other than via swaps-only filtering.
    pub fn directed_count(&self) -> usize {
        self.clocks.iter().filter(|c| c.kind == EventKind::Directed).count()
    }
}

/// Time-sorted realisation of every clock on `[0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub horizon: f64,
    pub seed: u64,
    pub fingerprint: u64,
    pub scheme: ClockScheme,
    pub reversed: bool,
    /// Number of tie incidents resolved by resampling.
    pub tie_resamples: u32,
    pub events: Vec<ClockEvent>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn directed_events(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Directed).count()
    }

    pub fn check_fingerprint(&self, expected: u64) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch { log: self.fingerprint, expected });
        }
        Ok(())
    }

    /// Debug dump: a header followed by one `time kind x y` record per event.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let scheme = match self.scheme {
            ClockScheme::Stirring => "stirring",
            ClockScheme::Arrows => "arrows",
        };
        let _ = writeln!(s, "# exclusion event log v1");
        let _ = writeln!(s, "horizon {:?}", self.horizon);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "fingerprint {:016x}", self.fingerprint);
        let _ = writeln!(s, "scheme {scheme}");
        let _ = writeln!(s, "reversed {}", self.reversed);
        let _ = writeln!(s, "ties {}", self.tie_resamples);
        let _ = writeln!(s, "events {}", self.events.len());
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Swap => 's',
                EventKind::Directed => 'd',
            };
            let _ = writeln!(s, "{:?} {:?} {kind} {} {}", e.time, e.forward_time, e.x, e.y);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidValue(format!("event log dump: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let rest = line.strip_prefix(key).ok_or_else(|| bad(&format!("expected {key}")))?;
            Ok(rest.trim().to_string())
        };
        let horizon: f64 = header("horizon")?.parse().map_err(|_| bad("horizon"))?;
        let seed: u64 = header("seed")?.parse().map_err(|_| bad("seed"))?;
        let fingerprint = u64::from_str_radix(&header("fingerprint")?, 16).map_err(|_| bad("fingerprint"))?;
        let scheme = match header("scheme")?.as_str() {
            "stirring" => ClockScheme::Stirring,
            "arrows" => ClockScheme::Arrows,
            _ => return Err(bad("scheme")),
        };
        let reversed: bool = header("reversed")?.parse().map_err(|_| bad("reversed"))?;
        let tie_resamples: u32 = header("ties")?.parse().map_err(|_| bad("ties"))?;
        let n: usize = header("events")?.parse().map_err(|_| bad("events"))?;
        let mut events = Vec::with_capacity(n);
        for line in lines.take(n) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad("event record"));
            }
            let kind = match f[2] {
                "s" => EventKind::Swap,
                "d" => EventKind::Directed,
                _ => return Err(bad("event kind")),
            };
            events.push(ClockEvent {
                time: f[0].parse().map_err(|_| bad("time"))?,
                forward_time: f[1].parse().map_err(|_| bad("time"))?,
                kind,
                x: f[3].parse().map_err(|_| bad("site"))?,
                y: f[4].parse().map_err(|_| bad("site"))?,
            });
        }
        if events.len() != n {
            return Err(bad("event count"));
        }
        Ok(Self { horizon, seed, fingerprint, scheme, reversed, tie_resamples, events })
    }
}

/// Stirring-scheme log of `kbar` on `[0, horizon)`.
pub fn sample_event_log(kbar: &Kernel, horizon: f64, seed: u64) -> Result<EventLog> {
    sample_event_log_with(&ClockSet::new(kbar, ClockScheme::Stirring), horizon, seed)
}

pub fn sample_event_log_with(clocks: &ClockSet, horizon: f64, seed: u64) -> Result<EventLog> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidValue(format!("horizon {horizon}")));
    }
    let streams = Streams::new(seed);
    let mut events = Vec::new();
    let n_chunks = (horizon / CHUNK).ceil() as u64;
    for clock in clocks.clocks() {
        for chunk in 0..n_chunks {
            for t in chunk_times(&streams, clock, chunk) {
                if t >= horizon {
                    break;
                }
                events.push(ClockEvent { time: t, forward_time: t, kind: clock.kind, x: clock.x, y: clock.y });
            }
        }
    }
    let tie_resamples = sort_resolving_ties(&mut events, horizon, &streams);
    Ok(EventLog {
        horizon,
        seed,
        fingerprint: clocks.fingerprint(),
        scheme: clocks.scheme(),
        reversed: false,
        tie_resamples,
        events,
    })
}

/// Sort by time; whenever two events share a time, the later one (in sort
/// order) gets a fresh uniform time on `[0, horizon)`. Returns the number of
/// resamples.
pub fn sort_resolving_ties(events: &mut [ClockEvent], horizon: f64, streams: &Streams) -> u32 {
    use rand::Rng;
    let mut resamples = 0u32;
    loop {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let tie = events.windows(2).position(|w| w[0].time == w[1].time);
        match tie {
            None => return resamples,
            Some(i) => {
                let mut rng = streams.stream(Domain::TieBreak, resamples as u64, 0);
                let t = rng.random::<f64>() * horizon;
                events[i + 1].time = t;
                events[i + 1].forward_time = t;
                resamples += 1;
            }
        }
    }
}

/// Time reversal on `[0, T]`: a ring at `t` moves to `T - t` and the order is
/// reversed. Exact involution.
pub fn reverse(log: &EventLog) -> EventLog {
    let reversed = !log.reversed;
    let events = log
        .events
        .iter()
        .rev()
        .map(|e| ClockEvent {
            time: if reversed { log.horizon - e.forward_time } else { e.forward_time },
            ..*e
        })
        .collect();
    EventLog { reversed, events, ..log.clone() }
}

/// On-demand view of the same realisation an [`EventLog`] materialises.
#[derive(Debug)]
pub struct LazyClocks<'a> {
    set: &'a ClockSet,
    streams: Streams,
    horizon: f64,
    cache: HashMap<(u32, u32), Vec<f64>>,
}

impl<'a> LazyClocks<'a> {
    pub fn new(set: &'a ClockSet, seed: u64, horizon: f64) -> Self {
        Self { set, streams: Streams::new(seed), horizon, cache: HashMap::new() }
    }

    pub fn set(&self) -> &'a ClockSet {
        self.set
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn chunk(&mut self, clock: u32, chunk: u32) -> &[f64] {
        let set = self.set;
        let streams = &self.streams;
        self.cache
            .entry((clock, chunk))
            .or_insert_with(|| chunk_times(streams, set.clock(clock as usize), chunk as u64))
    }

    /// Earliest ring of `clock` strictly after `t` and before the horizon.
    pub fn next_after(&mut self, clock: u32, t: f64) -> Option<f64> {
        let horizon = self.horizon;
        let mut chunk = (t / CHUNK).floor().max(0.0) as u32;
        while (chunk as f64) * CHUNK < horizon {
            let times = self.chunk(clock, chunk);
            let i = times.partition_point(|&s| s <= t);
            if let Some(&s) = times.get(i) {
                return (s < horizon).then_some(s);
            }
            chunk += 1;
        }
        None
    }

    /// Latest ring of `clock` strictly before `t`.
    pub fn last_before(&mut self, clock: u32, t: f64) -> Option<f64> {
        let t = t.min(self.horizon);
        if t <= 0.0 {
            return None;
        }
        let mut chunk = ((t / CHUNK).ceil() as u32).saturating_sub(1);
        loop {
            let times = self.chunk(clock, chunk);
            let i = times.partition_point(|&s| s < t);
            if i > 0 {
                return Some(times[i - 1]);
            }
            if chunk == 0 {
                return None;
            }
            chunk -= 1;
        }
    }

    /// Next event among the clocks incident to `site`, strictly after `t`.
    pub fn next_incident(&mut self, site: Site, t: f64) -> Option<(f64, u32)> {
        let set = self.set;
        let mut best: Option<(f64, u32)> = None;
        for &c in set.incident(site) {
            if let Some(s) = self.next_after(c, t) {
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, c));
                }
            }
        }
        best
    }

    /// Latest event among the clocks incident to `site`, strictly before `t`.
    pub fn last_incident(&mut self, site: Site, t: f64) -> Option<(f64, u32)> {
        let set = self.set;
        let mut best: Option<(f64, u32)> = None;
        for &c in set.incident(site) {
            if let Some(s) = self.last_before(c, t) {
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, c));
                }
            }
        }
        best
    }
}
