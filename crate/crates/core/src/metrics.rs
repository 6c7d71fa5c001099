//! Balance diagnostics on samples and the outcome-prediction step.
//!
//! Balance is measured two ways: discriminator statistics (how far mean
//! scores sit from the 1/2 equilibrium) and an empirical Jensen-Shannon
//! divergence between treated representations and generator outputs, built
//! from shared-range histograms and scored by the exact oracle divergence.
//! The prediction step fits a regression network over (representation,
//! treatment) and turns it into unit-level treatment-effect estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::loss::{clamp_prob, BatchLoss};
use crate::nn::matrix::{kahan_mean, Matrix};
use crate::nn::mlp::{mlp_new, HiddenActivation, MlpNetwork, OutputActivation, StepDirection};
use crate::oracle::{jsd, DiscreteDist};
use crate::seed::derive_seed;
use crate::synth::{sample_minibatch, sample_noise, SyntheticDataset};
use crate::trainer::{d_input, g_input, PhiMap};

/// Most dimensions a joint histogram may span.
pub const JSD_MAX_DIM: usize = 3;

/// Jensen-Shannon divergence between two samples via a joint histogram over
/// their pooled range (padded 1% per dimension), normalized and scored by
/// the exact discrete divergence. Symmetric; zero for identical samples.
pub fn empirical_jsd(samples_a: &Matrix, samples_b: &Matrix, bins_per_dim: usize) -> Result<f64> {
    if samples_a.cols() != samples_b.cols() {
        return Err(CoreError::shape(format!(
            "sample dimensions differ: {} vs {}",
            samples_a.cols(),
            samples_b.cols()
        )));
    }
    let d = samples_a.cols();
    if samples_a.rows() == 0 || samples_b.rows() == 0 {
        return Err(CoreError::usage("both samples must be nonempty"));
    }
    if d == 0 {
        return Err(CoreError::shape("samples have no columns"));
    }
    if d > JSD_MAX_DIM {
        return Err(CoreError::usage(format!(
            "histogram divergence supports at most {JSD_MAX_DIM} dimensions, got {d}; \
             project to the leading dimensions first"
        )));
    }
    if bins_per_dim < 2 {
        return Err(CoreError::usage("need at least 2 bins per dimension"));
    }
    let n_cells = bins_per_dim.pow(d as u32);
    if n_cells > 1_000_000 {
        return Err(CoreError::usage("histogram too fine; reduce bins_per_dim"));
    }

    // Shared bin edges from the pooled per-dimension range.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in [samples_a, samples_b] {
        for i in 0..m.rows() {
            for (j, &x) in m.row(i).iter().enumerate() {
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
    }
    for j in 0..d {
        let range = hi[j] - lo[j];
        let pad = if range > 0.0 { 0.01 * range } else { 0.5 };
        lo[j] -= pad;
        hi[j] += pad;
    }

    let cell_of = |row: &[f64]| -> usize {
        let mut cell = 0usize;
        for (j, &x) in row.iter().enumerate() {
            let frac = (x - lo[j]) / (hi[j] - lo[j]);
            let b = ((frac * bins_per_dim as f64) as usize).min(bins_per_dim - 1);
            cell = cell * bins_per_dim + b;
        }
        cell
    };
    let histogram = |m: &Matrix| -> Vec<f64> {
        let mut counts = vec![0.0; n_cells];
        for i in 0..m.rows() {
            counts[cell_of(m.row(i))] += 1.0;
        }
        counts
    };
    let p = DiscreteDist::from_weights(&histogram(samples_a))?;
    let q = DiscreteDist::from_weights(&histogram(samples_b))?;
    jsd(&p, &q)
}

fn project(m: &Matrix) -> Result<Matrix> {
    if m.cols() <= JSD_MAX_DIM {
        Ok(m.clone())
    } else {
        m.col_block(0, JSD_MAX_DIM)
    }
}

/// Histogram divergence between treated representations and generator
/// outputs on fresh pool draws (projected to the leading dimensions when the
/// representation is wider than the histogram allows).
#[allow(clippy::too_many_arguments)]
pub fn representation_jsd(
    g: &MlpNetwork,
    phi: &PhiMap,
    treat_pool: &Matrix,
    con_pool: &Matrix,
    noise_dim: usize,
    conditional: bool,
    n_samples: usize,
    bins_per_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let treat = sample_minibatch(treat_pool, n_samples, rng)?;
    let phi_t = phi.apply(&treat)?;
    let con = sample_minibatch(con_pool, n_samples, rng)?;
    let w = sample_noise(n_samples, noise_dim, rng)?;
    let fake = g.predict(&g_input(&con, &w, conditional)?)?;
    empirical_jsd(&project(&phi_t)?, &project(&fake)?, bins_per_dim)
}

/// Snapshot of how balanced the game currently is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
    pub value_fn_estimate: f64,
    pub emp_jsd: f64,
    pub n_samples: usize,
}

/// Scores `n_samples` fresh draws: mean discriminator output on both
/// branches, the value-function estimate on those same draws, and the
/// histogram divergence between treated representations and generator
/// outputs.
#[allow(clippy::too_many_arguments)]
pub fn balance_report(
    d: &MlpNetwork,
    g: &MlpNetwork,
    phi: &PhiMap,
    ds: &SyntheticDataset,
    noise_dim: usize,
    conditional: bool,
    n_samples: usize,
    bins_per_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BalanceReport> {
    let treat_pool = ds.treat_pool();
    let con_pool = ds.control_pool();

    let treat = sample_minibatch(&treat_pool, n_samples, rng)?;
    let w_real = sample_noise(n_samples, noise_dim, rng)?;
    let phi_t = phi.apply(&treat)?;
    let p_real = d.predict(&d_input(&phi_t, &w_real, conditional)?)?;

    let con = sample_minibatch(&con_pool, n_samples, rng)?;
    let w_fake = sample_noise(n_samples, noise_dim, rng)?;
    let fake = g.predict(&g_input(&con, &w_fake, conditional)?)?;
    let p_fake = d.predict(&d_input(&fake, &w_fake, conditional)?)?;

    let real_term = kahan_mean(p_real.data().iter().map(|&p| clamp_prob(p).ln()));
    let fake_term = kahan_mean(p_fake.data().iter().map(|&p| (1.0 - clamp_prob(p)).ln()));

    Ok(BalanceReport {
        mean_d_real: kahan_mean(p_real.data().iter().copied()),
        mean_d_fake: kahan_mean(p_fake.data().iter().copied()),
        value_fn_estimate: real_term + fake_term,
        emp_jsd: empirical_jsd(&project(&phi_t)?, &project(&fake)?, bins_per_dim)?,
        n_samples,
    })
}

/// Regression model over `(representation, treatment)`. Inputs are expanded
/// to `(r, t, t*r)` so treatment interactions are linear in the features;
/// the model itself is a single linear layer, which keeps the least-squares
/// objective convex and makes the linear outcome family exactly
/// representable.
#[derive(Debug, Clone, PartialEq)]
pub struct ItePredictor {
    net: MlpNetwork,
    repr_dim: usize,
}

const PREDICTOR_BATCH: usize = 64;
const FIT_INIT_STREAM: u64 = 20;
const FIT_SAMPLE_STREAM: u64 = 21;

impl ItePredictor {
    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn repr_dim(&self) -> usize {
        self.repr_dim
    }

    pub fn predict_outcome(&self, repr_row: &[f64], t: u8) -> Result<f64> {
        if repr_row.len() != self.repr_dim {
            return Err(CoreError::shape(format!(
                "representation has {} entries, predictor expects {}",
                repr_row.len(),
                self.repr_dim
            )));
        }
        let x = feature_row(repr_row, t)?;
        Ok(self.net.predict(&x)?.get(0, 0))
    }

    /// Unit-level effect estimate: predicted outcome under treatment minus
    /// under control.
    pub fn estimate_ite(&self, repr_row: &[f64]) -> Result<f64> {
        Ok(self.predict_outcome(repr_row, 1)? - self.predict_outcome(repr_row, 0)?)
    }

    /// Mean squared prediction error on factual data.
    pub fn mse(&self, reprs: &Matrix, t: &[u8], y: &[f64]) -> Result<f64> {
        let x = features(reprs, t)?;
        let pred = self.net.predict(&x)?;
        Ok(kahan_mean(
            pred.data()
                .iter()
                .zip(y)
                .map(|(&p, &yi)| (p - yi) * (p - yi)),
        ))
    }
}

fn feature_row(repr_row: &[f64], t: u8) -> Result<Matrix> {
    let d = repr_row.len();
    let tv = f64::from(t);
    let mut row = Vec::with_capacity(2 * d + 1);
    row.extend_from_slice(repr_row);
    row.push(tv);
    row.extend(repr_row.iter().map(|&r| tv * r));
    Matrix::new(1, 2 * d + 1, row)
}

fn features(reprs: &Matrix, t: &[u8]) -> Result<Matrix> {
    if reprs.rows() != t.len() {
        return Err(CoreError::shape(
            "representation and treatment lengths differ",
        ));
    }
    let d = reprs.cols();
    let width = 2 * d + 1;
    let mut data = Vec::with_capacity(reprs.rows() * width);
    for (i, &ti) in t.iter().enumerate() {
        let r = reprs.row(i);
        let tv = f64::from(ti);
        data.extend_from_slice(r);
        data.push(tv);
        data.extend(r.iter().map(|&v| tv * v));
    }
    Matrix::new(reprs.rows(), width, data)
}

/// Fits the regression model `(repr, t) -> y` by minibatch SGD on squared
/// error. One epoch draws `ceil(n / batch)` minibatches with replacement.
pub fn fit_outcome_predictor(
    reprs: &Matrix,
    t: &[u8],
    y: &[f64],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ItePredictor> {
    if reprs.rows() != t.len() || t.len() != y.len() {
        return Err(CoreError::shape("input lengths differ"));
    }
    if reprs.rows() == 0 {
        return Err(CoreError::usage("cannot fit on an empty dataset"));
    }
    if !t.contains(&0) || !t.contains(&1) {
        return Err(CoreError::usage(
            "need both treatment arms to estimate effects",
        ));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(CoreError::config("learning rate must be positive"));
    }

    let x = features(reprs, t)?;
    let y_col = Matrix::new(y.len(), 1, y.to_vec())?;
    let mut net = mlp_new(
        &[x.cols(), 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
        derive_seed(seed, FIT_INIT_STREAM),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, FIT_SAMPLE_STREAM));
    let n = x.rows();
    let batch = PREDICTOR_BATCH.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    for _ in 0..epochs {
        for _ in 0..steps_per_epoch {
            let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
            let xb = x.gather_rows(&idx)?;
            let yb = y_col.gather_rows(&idx)?;
            let out = net.forward(&xb)?;
            let loss = BatchLoss::Quadratic { target: yb };
            let upstream = loss.upstream(&out)?;
            let (grads, _) = net.backward(&upstream)?;
            net.sgd_step(&grads, lr, StepDirection::Descend)?;
        }
    }
    Ok(ItePredictor {
        net,
        repr_dim: reprs.cols(),
    })
}

/// Root-mean-squared error of effect estimates against ground truth over
/// every unit in the dataset.
pub fn pehe(pred: &ItePredictor, ds: &SyntheticDataset, phi: &PhiMap) -> Result<f64> {
    let reprs = phi.apply(ds.covariates())?;
    let mut sq = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let est = pred.estimate_ite(reprs.row(i))?;
        let err = est - ds.true_ite(i)?;
        sq.push(err * err);
    }
    Ok(kahan_mean(sq).sqrt())
}
