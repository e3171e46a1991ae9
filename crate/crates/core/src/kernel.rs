//! Transition kernels on finite windows.
//!
//! A [`Kernel`] stores unnormalised jump rates `p(x,y)` in compressed sparse
//! rows. Lattice windows remember their geometry so sites can be addressed by
//! coordinates, and carry a [`BoundaryMode`] that the simulators honour.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a site in its window, dense in `[0, n_sites)`.
pub type Site = usize;

/// How a finite window stands in for the infinite lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Outer layer is a reservoir pinned at 0.
    FrozenEmpty,
    /// Outer layer is a reservoir pinned at 1.
    FrozenFull,
    /// Edges leaving the window are deleted.
    Reflecting,
    /// Opposite faces are identified.
    Periodic,
}

impl BoundaryMode {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryMode::FrozenEmpty => "frozen-empty",
            BoundaryMode::FrozenFull => "frozen-full",
            BoundaryMode::Reflecting => "reflecting",
            BoundaryMode::Periodic => "periodic",
        }
    }

    fn frozen_value(&self) -> Option<u8> {
        match self {
            BoundaryMode::FrozenEmpty => Some(0),
            BoundaryMode::FrozenFull => Some(1),
            _ => None,
        }
    }

    /// Whether the particle number is conserved in the window.
    pub fn conserves_particles(&self) -> bool {
        matches!(self, BoundaryMode::Reflecting | BoundaryMode::Periodic)
    }
}

fn default_boundary() -> BoundaryMode {
    BoundaryMode::Reflecting
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFamily {
    Path,
    Cycle,
    /// Box in Z^d, `sides.len() == d`.
    Box,
    /// Torus Z^d / (sides) Z^d.
    Torus,
    Complete,
    Explicit,
}

/// Recipe for a symmetric nearest-neighbour (or explicit) kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub family: GraphFamily,
    /// Side lengths for lattice families; `[n]` for complete and explicit graphs.
    #[serde(default)]
    pub sides: Vec<usize>,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryMode,
    /// Rate assigned to every directed edge.
    pub base_rate: f64,
    /// Undirected edges for the explicit family.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

impl GraphSpec {
    pub fn path(len: usize, base_rate: f64) -> Self {
        Self::lattice(GraphFamily::Path, vec![len], BoundaryMode::Reflecting, base_rate)
    }

    pub fn cycle(len: usize, base_rate: f64) -> Self {
        Self::lattice(GraphFamily::Cycle, vec![len], BoundaryMode::Periodic, base_rate)
    }

    pub fn lattice_box(sides: Vec<usize>, boundary: BoundaryMode, base_rate: f64) -> Self {
        Self::lattice(GraphFamily::Box, sides, boundary, base_rate)
    }

    pub fn torus(sides: Vec<usize>, base_rate: f64) -> Self {
        Self::lattice(GraphFamily::Torus, sides, BoundaryMode::Periodic, base_rate)
    }

    pub fn complete(n: usize, base_rate: f64) -> Self {
        Self::lattice(GraphFamily::Complete, vec![n], BoundaryMode::Reflecting, base_rate)
    }

    pub fn explicit(n: usize, edges: Vec<[usize; 2]>, base_rate: f64) -> Self {
        Self {
            family: GraphFamily::Explicit,
            sides: vec![n],
            boundary: BoundaryMode::Reflecting,
            base_rate,
            edges,
        }
    }

    pub fn with_boundary(mut self, boundary: BoundaryMode) -> Self {
        self.boundary = boundary;
        self
    }

    fn lattice(family: GraphFamily, sides: Vec<usize>, boundary: BoundaryMode, base_rate: f64) -> Self {
        Self { family, sides, boundary, base_rate, edges: Vec::new() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return Err(Error::InvalidSpec(format!("base_rate must be positive, got {}", self.base_rate)));
        }
        if self.sides.is_empty() {
            return Err(Error::InvalidSpec("sides must be non-empty".into()));
        }
        if let Some(s) = self.sides.iter().find(|&&s| s < 2) {
            return Err(Error::InvalidSpec(format!("side length {s} is below 2")));
        }
        match self.family {
            GraphFamily::Path | GraphFamily::Cycle | GraphFamily::Complete | GraphFamily::Explicit
                if self.sides.len() != 1 =>
            {
                Err(Error::InvalidSpec(format!("{:?} takes exactly one side length", self.family)))
            }
            GraphFamily::Cycle | GraphFamily::Torus if self.boundary != BoundaryMode::Periodic => {
                Err(Error::InvalidSpec("cycle and torus windows are periodic".into()))
            }
            GraphFamily::Path | GraphFamily::Box if self.boundary == BoundaryMode::Periodic => {
                Err(Error::InvalidSpec("use cycle/torus for periodic windows".into()))
            }
            GraphFamily::Complete | GraphFamily::Explicit if self.boundary != BoundaryMode::Reflecting => {
                Err(Error::InvalidSpec("complete and explicit graphs have no boundary layer".into()))
            }
            _ => Ok(()),
        }?;
        if self.family == GraphFamily::Explicit {
            let n = self.sides[0];
            for &[a, b] in &self.edges {
                if a >= n || b >= n || a == b {
                    return Err(Error::InvalidSpec(format!("bad explicit edge ({a},{b})")));
                }
            }
        }
        Ok(())
    }
}

/// Window geometry retained by a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub family: GraphFamily,
    /// Lattice sides (first coordinate varies fastest); `[n]` otherwise.
    pub dims: Vec<usize>,
    pub boundary: BoundaryMode,
}

impl Geometry {
    fn unstructured(n: usize) -> Self {
        Self { family: GraphFamily::Explicit, dims: vec![n], boundary: BoundaryMode::Reflecting }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.family, GraphFamily::Path | GraphFamily::Cycle | GraphFamily::Box | GraphFamily::Torus)
    }

    pub fn periodic(&self) -> bool {
        self.boundary == BoundaryMode::Periodic
    }
}

/// Sparse nonnegative jump rates `p(x,y)` on a finite window.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n_sites: usize,
    geometry: Geometry,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    /// Reservoir sites of a frozen boundary; empty when there are none.
    frozen: Vec<bool>,
    frozen_value: u8,
    interior: Vec<bool>,
    row_sup: f64,
    col_sup: f64,
    irreducible: bool,
    fingerprint: u64,
}

/// Build the symmetric kernel described by `spec`.
pub fn build_kernel(spec: &GraphSpec) -> Result<Kernel> {
    spec.validate()?;
    let rate = spec.base_rate;
    let geometry = Geometry { family: spec.family, dims: spec.sides.clone(), boundary: spec.boundary };
    let mut undirected: BTreeSet<(usize, usize)> = BTreeSet::new();
    let n: usize;
    match spec.family {
        GraphFamily::Complete => {
            n = spec.sides[0];
            for a in 0..n {
                for b in a + 1..n {
                    undirected.insert((a, b));
                }
            }
        }
        GraphFamily::Explicit => {
            n = spec.sides[0];
            for &[a, b] in &spec.edges {
                undirected.insert((a.min(b), a.max(b)));
            }
        }
        _ => {
            let dims = &spec.sides;
            n = dims.iter().product();
            let periodic = spec.boundary == BoundaryMode::Periodic;
            let mut stride = 1usize;
            for (axis, &side) in dims.iter().enumerate() {
                for site in 0..n {
                    let c = (site / stride) % side;
                    let next = if c + 1 < side {
                        Some(site + stride)
                    } else if periodic {
                        Some(site - c * stride)
                    } else {
                        None
                    };
                    if let Some(t) = next {
                        if t != site {
                            undirected.insert((site.min(t), site.max(t)));
                        }
                    }
                }
                let _ = axis;
                stride *= side;
            }
        }
    }
    let mut triples = Vec::with_capacity(undirected.len() * 2);
    for &(a, b) in &undirected {
        triples.push((a, b, rate));
        triples.push((b, a, rate));
    }
    let mut kernel = Kernel::assemble(n, geometry, triples)?;
    if let Some(v) = spec.boundary.frozen_value() {
        kernel.frozen = (0..n).map(|s| !kernel.interior[s]).collect();
        kernel.frozen_value = v;
        kernel.refresh_fingerprint();
    }
    Ok(kernel)
}

impl Kernel {
    /// Kernel from explicit directed rates; duplicate pairs are summed and
    /// zero rates dropped. No geometry is attached.
    pub fn from_rates(n_sites: usize, entries: &[(Site, Site, f64)]) -> Result<Self> {
        Self::assemble(n_sites, Geometry::unstructured(n_sites), entries.to_vec())
    }

    fn assemble(n: usize, geometry: Geometry, mut triples: Vec<(Site, Site, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("empty window".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidSpec("window too large".into()));
        }
        for &(x, y, r) in &triples {
            if x >= n || y >= n {
                return Err(Error::SiteOutOfWindow { site: x.max(y), n_sites: n });
            }
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidSpec(format!("rate p({x},{y})={r} must be finite and >= 0")));
            }
            if x == y {
                return Err(Error::InvalidSpec(format!("self-jump rate at site {x}")));
            }
        }
        triples.sort_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(triples.len());
        let mut rates: Vec<f64> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (x, y, r) in triples {
            if last == Some((x, y)) {
                *rates.last_mut().expect("pushed") += r;
                continue;
            }
            if r == 0.0 {
                continue;
            }
            last = Some((x, y));
            offsets[x + 1] += 1;
            targets.push(y as u32);
            rates.push(r);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let interior = interior_mask(n, &geometry);
        let mut k = Self {
            n_sites: n,
            geometry,
            offsets,
            targets,
            rates,
            frozen: Vec::new(),
            frozen_value: 0,
            interior,
            row_sup: 0.0,
            col_sup: 0.0,
            irreducible: false,
            fingerprint: 0,
        };
        k.refresh_derived();
        Ok(k)
    }

    fn refresh_derived(&mut self) {
        let mut col = vec![0.0; self.n_sites];
        let mut row_sup: f64 = 0.0;
        for x in 0..self.n_sites {
            let mut row = 0.0;
            for (y, r) in self.out_edges(x) {
                row += r;
                col[y] += r;
            }
            row_sup = row_sup.max(row);
        }
        self.row_sup = row_sup;
        self.col_sup = col.into_iter().fold(0.0, f64::max);
        self.irreducible = self.compute_irreducible();
        self.refresh_fingerprint();
    }

    fn refresh_fingerprint(&mut self) {
        let mut h = Sha256::new();
        h.update((self.n_sites as u64).to_le_bytes());
        h.update(self.geometry.boundary.name().as_bytes());
        for x in 0..self.n_sites {
            for (y, r) in self.out_edges(x) {
                h.update((x as u64).to_le_bytes());
                h.update((y as u64).to_le_bytes());
                h.update(r.to_bits().to_le_bytes());
            }
        }
        for (s, &f) in self.frozen.iter().enumerate() {
            if f {
                h.update((s as u64).to_le_bytes());
            }
        }
        h.update([self.frozen_value]);
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        self.fingerprint = u64::from_le_bytes(b);
    }

    fn compute_irreducible(&self) -> bool {
        let reach = |forward: bool| -> usize {
            let mut adj_rev: Vec<Vec<u32>> = Vec::new();
            if !forward {
                adj_rev = vec![Vec::new(); self.n_sites];
                for x in 0..self.n_sites {
                    for (y, _) in self.out_edges(x) {
                        adj_rev[y].push(x as u32);
                    }
                }
            }
            let mut seen = vec![false; self.n_sites];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            let mut count = 1;
            while let Some(x) = queue.pop_front() {
                let next: Vec<usize> = if forward {
                    self.out_edges(x).map(|(y, _)| y).collect()
                } else {
                    adj_rev[x].iter().map(|&y| y as usize).collect()
                };
                for y in next {
                    if !seen[y] {
                        seen[y] = true;
                        count += 1;
                        queue.push_back(y);
                    }
                }
            }
            count
        };
        reach(true) == self.n_sites && reach(false) == self.n_sites
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.geometry.boundary
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn row_sup(&self) -> f64 {
        self.row_sup
    }

    pub fn col_sup(&self) -> f64 {
        self.col_sup
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn n_directed_edges(&self) -> usize {
        self.targets.len()
    }

    /// `(y, p(x,y))` for every `y` with positive rate, in increasing `y`.
    pub fn out_edges(&self, x: Site) -> impl Iterator<Item = (Site, f64)> + '_ {
        let (a, b) = (self.offsets[x], self.offsets[x + 1]);
        self.targets[a..b].iter().zip(&self.rates[a..b]).map(|(&y, &r)| (y as usize, r))
    }

    /// All directed edges `(x, y, p(x,y))` with positive rate.
    pub fn edges(&self) -> impl Iterator<Item = (Site, Site, f64)> + '_ {
        (0..self.n_sites).flat_map(move |x| self.out_edges(x).map(move |(y, r)| (x, y, r)))
    }

    pub fn rate(&self, x: Site, y: Site) -> f64 {
        if x >= self.n_sites || y >= self.n_sites {
            return 0.0;
        }
        let (a, b) = (self.offsets[x], self.offsets[x + 1]);
        match self.targets[a..b].binary_search(&(y as u32)) {
            Ok(i) => self.rates[a + i],
            Err(_) => 0.0,
        }
    }

    /// Total exit rate `p(x) = sum_y p(x,y)`.
    pub fn exit_rate(&self, x: Site) -> f64 {
        self.out_edges(x).map(|(_, r)| r).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetric_pair().is_none()
    }

    /// First pair with `p(x,y) != p(y,x)`, if any.
    pub fn asymmetric_pair(&self) -> Option<(Site, Site, f64, f64)> {
        for (x, y, r) in self.edges() {
            let back = self.rate(y, x);
            if back != r {
                return Some((x, y, r, back));
            }
        }
        None
    }

    pub fn require_symmetric(&self) -> Result<()> {
        match self.asymmetric_pair() {
            None => Ok(()),
            Some((x, y, forward, backward)) => Err(Error::NotSymmetric { x, y, forward, backward }),
        }
    }

    /// Pinned occupation of a reservoir site, `None` for ordinary sites.
    #[inline]
    pub fn frozen_value(&self, site: Site) -> Option<u8> {
        if !self.frozen.is_empty() && self.frozen[site] {
            Some(self.frozen_value)
        } else {
            None
        }
    }

    pub fn has_frozen_sites(&self) -> bool {
        self.frozen.iter().any(|&f| f)
    }

    /// Interior sites are those whose lattice neighbourhood is complete.
    pub fn is_interior(&self, site: Site) -> bool {
        self.interior[site]
    }

    /// Lattice coordinates of a site (first coordinate fastest).
    pub fn coords(&self, site: Site) -> Option<Vec<i64>> {
        if !self.geometry.is_lattice() || site >= self.n_sites {
            return None;
        }
        let mut rest = site;
        Some(
            self.geometry
                .dims
                .iter()
                .map(|&side| {
                    let c = rest % side;
                    rest /= side;
                    c as i64
                })
                .collect(),
        )
    }

    /// Site at lattice coordinates; wraps on periodic windows.
    pub fn site_at(&self, coords: &[i64]) -> Option<Site> {
        if !self.geometry.is_lattice() || coords.len() != self.geometry.dims.len() {
            return None;
        }
        let mut site = 0usize;
        let mut stride = 1usize;
        for (&c, &side) in coords.iter().zip(&self.geometry.dims) {
            let c = if self.geometry.periodic() {
                c.rem_euclid(side as i64)
            } else if c < 0 || c >= side as i64 {
                return None;
            } else {
                c
            };
            site += c as usize * stride;
            stride *= side;
        }
        Some(site)
    }

    /// Central site of a lattice window (`side / 2` in every coordinate).
    pub fn center(&self) -> Option<Site> {
        let c: Vec<i64> = self.geometry.dims.iter().map(|&s| (s / 2) as i64).collect();
        self.site_at(&c)
    }

    /// Graph distance from `sites` to the nearest non-interior site, `None`
    /// when the window has no boundary layer.
    pub fn boundary_distance(&self, sites: &[Site]) -> Option<usize> {
        if self.interior.iter().all(|&i| i) {
            return None;
        }
        let mut dist = vec![usize::MAX; self.n_sites];
        let mut queue = VecDeque::new();
        for &s in sites {
            if s < self.n_sites && dist[s] == usize::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(x) = queue.pop_front() {
            if !self.interior[x] {
                return Some(dist[x]);
            }
            for (y, _) in self.out_edges(x) {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        None
    }
}

fn interior_mask(n: usize, geometry: &Geometry) -> Vec<bool> {
    let lattice_with_faces = geometry.is_lattice() && !geometry.periodic();
    if !lattice_with_faces {
        return vec![true; n];
    }
    (0..n)
        .map(|site| {
            let mut rest = site;
            geometry.dims.iter().all(|&side| {
                let c = rest % side;
                rest /= side;
                c > 0 && c + 1 < side
            })
        })
        .collect()
}

/// Light-cone buffer: number of sites information can plausibly travel in
/// time `horizon` at maximal exit rate `max_exit_rate`.
pub fn light_cone_buffer(max_exit_rate: f64, horizon: f64, factor: f64) -> usize {
    (factor * max_exit_rate * horizon).ceil() as usize
}

/// One modified ordered pair `p̄(x,y) = p(x,y) + eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub x: Site,
    pub y: Site,
    pub eps: f64,
}

/// Finitely many signed rate increments on existing edges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub entries: Vec<PerturbationEntry>,
}

impl Perturbation {
    pub fn single(x: Site, y: Site, eps: f64) -> Self {
        Self { entries: vec![PerturbationEntry { x, y, eps }] }
    }

    pub fn new(entries: Vec<PerturbationEntry>) -> Self {
        Self { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Check every entry against `k` without building anything.
    pub fn validate(&self, k: &Kernel) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            for s in [e.x, e.y] {
                if s >= k.n_sites() {
                    return Err(Error::SiteOutOfWindow { site: s, n_sites: k.n_sites() });
                }
            }
            if !seen.insert((e.x, e.y)) {
                return Err(Error::DuplicatePair { x: e.x, y: e.y });
            }
            if !e.eps.is_finite() {
                return Err(Error::InvalidValue(format!("eps={} at ({},{})", e.eps, e.x, e.y)));
            }
            let p = k.rate(e.x, e.y);
            if p <= 0.0 {
                return Err(Error::NotAnEdge { x: e.x, y: e.y });
            }
            if e.eps <= -p {
                return Err(Error::PerturbationTooNegative { x: e.x, y: e.y, eps: e.eps, neg_rate: -p });
            }
        }
        Ok(())
    }
}

/// `p̄ = p + sum of entries`. The zero pattern of `k` is preserved.
pub fn perturb(k: &Kernel, pert: &Perturbation) -> Result<Kernel> {
    pert.validate(k)?;
    let mut out = k.clone();
    for e in &pert.entries {
        let (a, b) = (out.offsets[e.x], out.offsets[e.x + 1]);
        let i = out.targets[a..b]
            .binary_search(&(e.y as u32))
            .map_err(|_| Error::NotAnEdge { x: e.x, y: e.y })?;
        out.rates[a + i] += e.eps;
    }
    out.refresh_derived();
    Ok(out)
}

/// The set `B` of sites touching a pair where `p` and `p̄` differ.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSupport {
    pub b_sites: BTreeSet<Site>,
}

impl PerturbSupport {
    pub fn contains(&self, site: Site) -> bool {
        self.b_sites.contains(&site)
    }

    pub fn is_empty(&self) -> bool {
        self.b_sites.is_empty()
    }

    pub fn mask(&self, n_sites: usize) -> Vec<bool> {
        let mut m = vec![false; n_sites];
        for &s in &self.b_sites {
            m[s] = true;
        }
        m
    }
}

pub fn support_set(k: &Kernel, kbar: &Kernel) -> Result<PerturbSupport> {
    if k.n_sites() != kbar.n_sites() {
        return Err(Error::SiteSetMismatch(k.n_sites(), kbar.n_sites()));
    }
    let mut b = BTreeSet::new();
    for x in 0..k.n_sites() {
        let mut lhs = k.out_edges(x).peekable();
        let mut rhs = kbar.out_edges(x).peekable();
        loop {
            match (lhs.peek().copied(), rhs.peek().copied()) {
                (None, None) => break,
                (Some((y, r)), None) | (None, Some((y, r))) => {
                    if r != 0.0 {
                        b.insert(x);
                        b.insert(y);
                    }
                    lhs.next();
                    rhs.next();
                }
                (Some((y1, r1)), Some((y2, r2))) => {
                    if y1 == y2 {
                        if r1 != r2 {
                            b.insert(x);
                            b.insert(y1);
                        }
                        lhs.next();
                        rhs.next();
                    } else if y1 < y2 {
                        b.insert(x);
                        b.insert(y1);
                        lhs.next();
                    } else {
                        b.insert(x);
                        b.insert(y2);
                        rhs.next();
                    }
                }
            }
        }
    }
    Ok(PerturbSupport { b_sites: b })
}

/// Outcome of the harmonic check for a marginal profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub max_residual: f64,
    pub worst_site: Option<Site>,
    pub sites_checked: usize,
    /// Rates are divided by the exit rate `p(x)` before the check.
    pub normalization: String,
}

/// `max_x |sum_y (p(x,y)/p(x)) alpha(y) - alpha(x)|` over interior sites.
pub fn harmonic_residual(k: &Kernel, alpha: &[f64]) -> Result<HarmonicReport> {
    if alpha.len() != k.n_sites() {
        return Err(Error::SiteSetMismatch(k.n_sites(), alpha.len()));
    }
    for (site, &value) in alpha.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ProfileOutOfRange { site, value });
        }
    }
    let mut worst = 0.0;
    let mut worst_site = None;
    let mut checked = 0;
    for x in 0..k.n_sites() {
        if !k.is_interior(x) || k.frozen_value(x).is_some() {
            continue;
        }
        let total = k.exit_rate(x);
        if total <= 0.0 {
            continue;
        }
        checked += 1;
        let mean: f64 = k.out_edges(x).map(|(y, r)| r / total * alpha[y]).sum();
        let res = (mean - alpha[x]).abs();
        if worst_site.is_none() || res > worst {
            worst = res;
            worst_site = Some(x);
        }
    }
    Ok(HarmonicReport {
        max_residual: worst,
        worst_site,
        sites_checked: checked,
        normalization: "jump-chain: p(x,y)/p(x)".to_string(),
    })
}
