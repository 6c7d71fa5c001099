//! Batch loss functions paired with their exact upstream gradients.
//!
//! Each loss maps a network output batch to a scalar and produces the
//! matching `dL/d(output)` matrix for `MlpNetwork::backward`. Probability
//! losses clamp their argument to `[PROB_EPS, 1 - PROB_EPS]` so logs stay
//! finite; where the clamp is active the gradient is exactly zero, which
//! keeps analytic and finite-difference gradients consistent.

use crate::error::{CoreError, Result};
use crate::nn::matrix::{kahan_sum, Matrix};

/// Lower clamp for probabilities inside log losses.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn clamp_active(p: f64) -> bool {
    p <= PROB_EPS || p >= 1.0 - PROB_EPS
}

/// Scalar batch objectives over a network output.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchLoss {
    /// `(1/s) sum 0.5 (y - t)^2` over all entries.
    Quadratic { target: Matrix },
    /// `(1/s) sum y` over all entries; the simplest chain-rule probe.
    MeanOutput,
    /// `-(1/s) sum log p`; real half of the discriminator objective.
    BceReal,
    /// `-(1/s) sum log (1 - p)`; fake half of the discriminator objective.
    BceFake,
    /// `(1/s) sum log (1 - p)`; the generator loss from the minimax game.
    GenSaturating,
    /// `-(1/s) sum log p`; the non-saturating generator substitute.
    GenNonSaturating,
}

impl BatchLoss {
    fn requires_prob_column(&self) -> bool {
        !matches!(self, BatchLoss::Quadratic { .. } | BatchLoss::MeanOutput)
    }

    fn validate(&self, output: &Matrix) -> Result<()> {
        if output.rows() == 0 {
            return Err(CoreError::shape("loss over an empty batch"));
        }
        if self.requires_prob_column() && output.cols() != 1 {
            return Err(CoreError::shape(format!(
                "probability loss expects a single output column, got {}",
                output.cols()
            )));
        }
        if let BatchLoss::Quadratic { target } = self {
            if target.rows() != output.rows() || target.cols() != output.cols() {
                return Err(CoreError::shape(format!(
                    "target is {}x{}, output is {}x{}",
                    target.rows(),
                    target.cols(),
                    output.rows(),
                    output.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, output: &Matrix) -> Result<f64> {
        self.validate(output)?;
        let s = output.rows() as f64;
        let terms: Vec<f64> = match self {
            BatchLoss::Quadratic { target } => output
                .data()
                .iter()
                .zip(target.data())
                .map(|(&y, &t)| 0.5 * (y - t) * (y - t))
                .collect(),
            BatchLoss::MeanOutput => output.data().to_vec(),
            BatchLoss::BceReal | BatchLoss::GenNonSaturating => {
                output.data().iter().map(|&p| -clamp_prob(p).ln()).collect()
            }
            BatchLoss::BceFake => output
                .data()
                .iter()
                .map(|&p| -(1.0 - clamp_prob(p)).ln())
                .collect(),
            BatchLoss::GenSaturating => output
                .data()
                .iter()
                .map(|&p| (1.0 - clamp_prob(p)).ln())
                .collect(),
        };
        Ok(kahan_sum(terms) / s)
    }

    /// `dL/d(output)`, entry by entry, including the `1/s` batch factor.
    pub fn upstream(&self, output: &Matrix) -> Result<Matrix> {
        self.validate(output)?;
        let inv_s = 1.0 / output.rows() as f64;
        let grad: Vec<f64> = match self {
            BatchLoss::Quadratic { target } => output
                .data()
                .iter()
                .zip(target.data())
                .map(|(&y, &t)| inv_s * (y - t))
                .collect(),
            BatchLoss::MeanOutput => vec![inv_s; output.data().len()],
            BatchLoss::BceReal | BatchLoss::GenNonSaturating => output
                .data()
                .iter()
                .map(|&p| if clamp_active(p) { 0.0 } else { -inv_s / p })
                .collect(),
            BatchLoss::BceFake => output
                .data()
                .iter()
                .map(|&p| {
                    if clamp_active(p) {
                        0.0
                    } else {
                        inv_s / (1.0 - p)
                    }
                })
                .collect(),
            BatchLoss::GenSaturating => output
                .data()
                .iter()
                .map(|&p| {
                    if clamp_active(p) {
                        0.0
                    } else {
                        -inv_s / (1.0 - p)
                    }
                })
                .collect(),
        };
        Matrix::new(output.rows(), output.cols(), grad)
    }
}
