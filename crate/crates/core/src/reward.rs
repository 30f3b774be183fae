//! Constrained scalar reward.
//!
//! A candidate that meets both the timing and the accuracy constraint scores
//! `alpha * accuracy - beta * unfairness`; anything else scores exactly
//! [`INFEASIBLE_REWARD`]. Both bounds are inclusive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INFEASIBLE_REWARD: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specification {
    pub timing_constraint_ms: f64,
    pub accuracy_constraint: f64,
    #[serde(default)]
    pub device_id: String,
}

impl Specification {
    pub fn new(
        timing_constraint_ms: f64,
        accuracy_constraint: f64,
        device_id: &str,
    ) -> Result<Self> {
        let spec = Specification {
            timing_constraint_ms,
            accuracy_constraint,
            device_id: device_id.to_string(),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.timing_constraint_ms > 0.0) {
            return Err(Error::InvalidConfig(
                "timing constraint must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.accuracy_constraint) {
            return Err(Error::InvalidConfig(
                "accuracy constraint must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn meets_accuracy(&self, accuracy: f64) -> bool {
        accuracy >= self.accuracy_constraint
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl RewardParams {
    pub fn check(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(Error::InvalidConfig(
                "alpha and beta must be non-negative and not both zero".into(),
            ));
        }
        Ok(())
    }

    /// Ungated objective.
    pub fn objective(&self, accuracy: f64, unfair: f64) -> f64 {
        self.alpha * accuracy - self.beta * unfair
    }

    pub fn gated(&self, feasible: bool, accuracy: f64, unfair: f64) -> f64 {
        if feasible {
            self.objective(accuracy, unfair)
        } else {
            INFEASIBLE_REWARD
        }
    }
}

pub fn feasible(accuracy: f64, latency_ms: f64, spec: &Specification) -> bool {
    latency_ms <= spec.timing_constraint_ms && spec.meets_accuracy(accuracy)
}

pub fn reward(
    accuracy: f64,
    unfair: f64,
    latency_ms: f64,
    spec: &Specification,
    params: &RewardParams,
) -> f64 {
    params.gated(feasible(accuracy, latency_ms, spec), accuracy, unfair)
}
