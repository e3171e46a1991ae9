use thiserror::Error;

/// Errors raised by kernel construction, simulation and the exact oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),

    #[error("perturbation entry ({x},{y}) with eps={eps} violates eps > -p(x,y) = {neg_rate}")]
    PerturbationTooNegative { x: usize, y: usize, eps: f64, neg_rate: f64 },

    #[error("perturbation entry ({x},{y}) is not an edge of the kernel")]
    NotAnEdge { x: usize, y: usize },

    #[error("perturbation lists the pair ({x},{y}) more than once")]
    DuplicatePair { x: usize, y: usize },

    #[error("site {site} is outside the window of {n_sites} sites")]
    SiteOutOfWindow { site: usize, n_sites: usize },

    #[error("kernels are defined on different site sets ({0} vs {1} sites)")]
    SiteSetMismatch(usize, usize),

    #[error("marginal profile value {value} at site {site} is outside [0,1]")]
    ProfileOutOfRange { site: usize, value: f64 },

    #[error("event log fingerprint {log:016x} does not match the kernel/window fingerprint {expected:016x}")]
    FingerprintMismatch { log: u64, expected: u64 },

    #[error("the dual runs on swap clocks only, but the log holds {0} directed events")]
    DirectedEventsInDualLog(usize),

    #[error("initial dual set meets the perturbation support at site {0}")]
    DualMeetsSupport(usize),

    #[error("kernel is not symmetric: p({x},{y})={forward} but p({y},{x})={backward}")]
    NotSymmetric { x: usize, y: usize, forward: f64, backward: f64 },

    #[error("kernel is reducible")]
    Reducible,

    #[error("boundary mode {0} is not supported here")]
    UnsupportedBoundary(String),

    #[error("small time s={s} is outside the table-validity range (must be < {bound})")]
    SmallTimeOutOfRange { s: f64, bound: f64 },

    #[error("operation requires exactly one perturbed pair, found {0}")]
    NotSinglePair(usize),

    #[error("window of {0} sites exceeds the exact-oracle cap of {1}")]
    WindowTooLarge(usize, usize),

    #[error("block with {0} particles is reducible")]
    ReducibleBlock(usize),

    #[error("walk started at site {origin} can reach the window boundary within {steps} steps (boundary distance {distance})")]
    BoundaryReachable { origin: usize, steps: usize, distance: usize },

    #[error("negative or non-finite value: {0}")]
    InvalidValue(String),
}

pub type Result<T> = std::result::Result<T, Error>;
