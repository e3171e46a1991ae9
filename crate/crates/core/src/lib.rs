//! Simulation core for exclusion processes with quasi-symmetric kernels:
//! graphical construction, duals, couplings, invariant-measure checks,
//! random-walk analytics and an exact small-window oracle.

pub mod coupling;
pub mod dual;
pub mod error;
pub mod graphical;
pub mod kernel;
pub mod lineage;
pub mod measures;
pub mod oracle;
pub mod process;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
