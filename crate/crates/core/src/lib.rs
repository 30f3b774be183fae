//! Fairness- and hardware-aware neural architecture search.
//!
//! A recurrent controller proposes block-based architectures, each is scored
//! by accuracy and group unfairness under a hard latency/accuracy
//! specification, and the controller is trained with Monte Carlo policy
//! gradient. Child-network training is replaced by pluggable evaluators: a
//! deterministic synthetic surrogate, replayed recorded results, or the
//! exhaustive oracle built on either.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod evaluator;
pub mod fairness;
pub mod freezer;
pub mod harness;
pub mod latency;
pub mod reward;
pub mod rng;
pub mod search_space;

pub use error::{Error, Result};
