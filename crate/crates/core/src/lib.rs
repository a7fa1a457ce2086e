//! Entropy production of time-discretized reversible diffusions.
//!
//! Simulates explicit Euler–Maruyama, Milstein and BBK chains, accumulates
//! per-step Gallavotti–Cohen functionals and estimates the stationary
//! entropy production rate `EP(Δt)` with batch-means error bars.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod gc;
pub mod integrate;
pub mod model;
pub mod oracle;
pub mod parallel;

pub use error::{Error, Result};
