//! Conditional adversarial representation balancing for causal inference.
//!
//! The crate trains a generator to mimic the treated population's
//! representation conditioned on shared noise, with a discriminator scoring
//! real against generated representations. At the game's equilibrium the
//! generated and factual representations match in distribution, which is the
//! balancing property treatment-effect estimators need. A discrete
//! distribution oracle verifies the game's closed-form equilibrium theory
//! exactly, and evaluation utilities measure balance and treatment-effect
//! recovery on synthetic benchmarks with known ground truth.

pub mod error;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{CoreError, Result};
