//! Group-invariance tests built on strategically selected sign-flip subgroups.
//!
//! The crate covers four layers:
//!
//! * [`group`]: the sign-flipping group acting on the rows of a data matrix,
//!   leak computation and subgroup classification.
//! * [`construction`]: oracle (Sylvester–Hadamard), non-positive, nested and
//!   greedy leak-minimizing subgroups.
//! * [`invariance`]: single-hypothesis invariance tests and the single-step
//!   maxT procedure with exact-subgroup or Monte Carlo reference sets.
//! * [`power`] and [`simulation`]: semi-analytic power formulas, relative
//!   efficiency signals and a reproducible power/FWER simulation harness.

pub mod construction;
pub mod data;
pub mod error;
pub mod group;
pub mod invariance;
pub mod power;
pub mod rng;
pub mod simulation;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use group::{SignFlipElement, Subgroup, SubgroupClass, UnitVector};

/// A Monte Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean and standard error of a sample of per-repetition values.
    pub fn from_samples(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Estimate {
                value: 0.0,
                se: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        if count == 1 {
            return Estimate {
                value: mean,
                se: 0.0,
            };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        Estimate {
            value: mean,
            se: (var / count as f64).sqrt(),
        }
    }

    /// Binomial proportion `successes / trials` with standard error `sqrt(f(1-f)/trials)`.
    pub fn from_proportion(successes: usize, trials: usize) -> Self {
        if trials == 0 {
            return Estimate {
                value: 0.0,
                se: 0.0,
            };
        }
        let f = successes as f64 / trials as f64;
        Estimate {
            value: f,
            se: (f * (1.0 - f) / trials as f64).sqrt(),
        }
    }
}
