//! Minimal neural-network engine: matrices, dense MLPs, batch losses and
//! finite-difference gradient verification.

pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod mlp;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport, DEFAULT_FD_STEP};
pub use loss::{clamp_prob, BatchLoss, PROB_EPS};
pub use matrix::{kahan_mean, kahan_sum, Matrix};
pub use mlp::{
    mlp_new, GradientSet, HiddenActivation, MlpNetwork, OutputActivation, StepDirection,
};
