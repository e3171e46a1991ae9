//! Replica fan-out and the small amount of sample statistics the estimators need.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::replica_seed;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
}

impl Estimate {
    /// Mean and standard error of the mean (n-1 normalised variance).
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { value: f64::NAN, stderr: f64::NAN, replicas: 0 };
        }
        // fixed summation order keeps results bit-reproducible
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { value: mean, stderr: 0.0, replicas: 1 };
        }
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        let var = ss / (n - 1) as f64;
        Self { value: mean, stderr: (var / n as f64).sqrt(), replicas: n }
    }

    /// Proportion of successes with binomial standard error.
    pub fn from_bernoulli(successes: usize, n: usize) -> Self {
        if n == 0 {
            return Self { value: f64::NAN, stderr: f64::NAN, replicas: 0 };
        }
        let p = successes as f64 / n as f64;
        Self { value: p, stderr: (p * (1.0 - p) / n as f64).sqrt(), replicas: n }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, replicas: 0 }
    }

    /// Scale value and error by a constant.
    pub fn scaled(self, c: f64) -> Self {
        Self { value: self.value * c, stderr: self.stderr * c.abs(), replicas: self.replicas }
    }

    /// Difference of two independent estimates.
    pub fn minus(self, other: Estimate) -> Self {
        Self {
            value: self.value - other.value,
            stderr: combined_stderr(self.stderr, other.stderr),
            replicas: self.replicas.min(other.replicas),
        }
    }

    /// `|self - other| <= k` combined standard errors.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * combined_stderr(self.stderr, other.stderr)
    }

    /// `|self - exact| <= k` standard errors.
    pub fn agrees_with_value(&self, exact: f64, k: f64) -> bool {
        (self.value - exact).abs() <= k * self.stderr
    }
}

pub fn combined_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Run `n` replicas of `f(index, seed)` with per-replica seeds derived from
/// `master`, optionally on a dedicated pool of `threads` workers. Output is in
/// replica order regardless of scheduling.
pub fn replicate<T, F>(n: usize, master: u64, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    let job = || {
        (0..n)
            .into_par_iter()
            .map(|i| f(i, replica_seed(master, i as u64)))
            .collect::<Vec<T>>()
    };
    match threads {
        Some(t) if t > 0 => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(job),
            Err(_) => job(),
        },
        _ => job(),
    }
}
