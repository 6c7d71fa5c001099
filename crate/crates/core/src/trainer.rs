//! The conditional adversarial game and its minibatch training loop.
//!
//! A discriminator D scores representations of treated units against
//! generator outputs built from control units, with a shared noise batch
//! concatenated to the inputs of both networks. Each outer iteration runs N
//! discriminator ascent steps followed by one generator descent step, all by
//! plain SGD. With conditioning disabled the generator reads noise alone and
//! the discriminator reads bare representations, which is the original
//! unconditional game.

use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics;
use crate::nn::loss::{clamp_prob, BatchLoss};
use crate::nn::matrix::{kahan_mean, Matrix};
use crate::nn::mlp::{mlp_new, HiddenActivation, MlpNetwork, OutputActivation, StepDirection};
use crate::seed::derive_seed;
use crate::synth::{sample_minibatch, sample_noise, SyntheticDataset};

const D_INIT_STREAM: u64 = 10;
const G_INIT_STREAM: u64 = 11;
const PHI_INIT_STREAM: u64 = 12;
const TRAIN_STREAM: u64 = 13;
const JSD_LOG_STREAM: u64 = 0x4A53_0000;

/// Hidden-layer shape plus activation, e.g. `16,8:tanh`. Input and output
/// widths come from the role the network plays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub activation: HiddenActivation,
}

impl ArchSpec {
    pub fn new(hidden: Vec<usize>, activation: HiddenActivation) -> Self {
        ArchSpec { hidden, activation }
    }

    /// Parses `"16,8:tanh"`; an empty left side (`":tanh"`) means no hidden
    /// layers.
    pub fn parse(s: &str) -> Result<Self> {
        let (sizes, act) = s.split_once(':').ok_or_else(|| {
            CoreError::config(format!("bad arch spec '{s}' (expected e.g. '16,8:tanh')"))
        })?;
        let hidden = if sizes.trim().is_empty() {
            Vec::new()
        } else {
            sizes
                .split(',')
                .map(|p| {
                    let v: usize = p.trim().parse().map_err(|_| {
                        CoreError::config(format!("bad hidden size '{p}' in arch spec"))
                    })?;
                    if v == 0 {
                        return Err(CoreError::config("hidden sizes must be positive"));
                    }
                    Ok(v)
                })
                .collect::<Result<_>>()?
        };
        Ok(ArchSpec {
            hidden,
            activation: HiddenActivation::parse(act.trim())?,
        })
    }

    pub fn to_spec_string(&self) -> String {
        let sizes = self
            .hidden
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!("{}:{}", sizes, self.activation.name())
    }

    fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLossMode {
    Saturating,
    NonSaturating,
}

impl GenLossMode {
    pub fn name(self) -> &'static str {
        match self {
            GenLossMode::Saturating => "saturating",
            GenLossMode::NonSaturating => "non_saturating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "saturating" => Ok(GenLossMode::Saturating),
            "non_saturating" => Ok(GenLossMode::NonSaturating),
            other => Err(CoreError::config(format!(
                "unknown gen loss mode '{other}' (expected saturating or non_saturating)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    Identity,
    FixedRandom,
    Learned,
}

impl PhiMode {
    pub fn name(self) -> &'static str {
        match self {
            PhiMode::Identity => "identity",
            PhiMode::FixedRandom => "fixed_random",
            PhiMode::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PhiMode::Identity),
            "fixed_random" => Ok(PhiMode::FixedRandom),
            "learned" => Ok(PhiMode::Learned),
            other => Err(CoreError::config(format!(
                "unknown phi mode '{other}' (expected identity, fixed_random or learned)"
            ))),
        }
    }
}

/// Full training configuration; every field has a config-file key of the
/// same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_disc_steps: usize,
    pub minibatch_s: usize,
    pub iterations: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub noise_dim: usize,
    pub repr_dim: usize,
    pub gen_loss_mode: GenLossMode,
    pub phi_mode: PhiMode,
    pub conditional: bool,
    pub seed: u64,
    pub d_arch: ArchSpec,
    pub g_arch: ArchSpec,
    pub phi_arch: ArchSpec,
    /// Log an empirical representation JSD every this many iterations
    /// (0 disables the estimate).
    pub jsd_every: usize,
    pub jsd_bins: usize,
    /// Sample count for value-function and balance estimates.
    pub eval_samples: usize,
}

impl TrainConfig {
    /// Defaults for covariate dimension `d`: one discriminator step per
    /// generator step, minibatch 64, learning rate 0.05, 2000 iterations,
    /// non-saturating generator loss, identity representation.
    pub fn default_for_dim(d: usize) -> Self {
        TrainConfig {
            n_disc_steps: 1,
            minibatch_s: 64,
            iterations: 2000,
            lr_d: 0.05,
            lr_g: 0.05,
            noise_dim: 4,
            repr_dim: d,
            gen_loss_mode: GenLossMode::NonSaturating,
            phi_mode: PhiMode::Identity,
            conditional: true,
            seed: 0,
            d_arch: ArchSpec::new(vec![16], HiddenActivation::Tanh),
            g_arch: ArchSpec::new(vec![16], HiddenActivation::Tanh),
            phi_arch: ArchSpec::new(vec![16], HiddenActivation::Tanh),
            jsd_every: 100,
            jsd_bins: 16,
            eval_samples: 2000,
        }
    }

    /// `iterations` may be zero (a no-op run); every other count must be
    /// positive.
    pub fn validate(&self, data_dim: usize) -> Result<()> {
        if self.n_disc_steps == 0 || self.minibatch_s == 0 {
            return Err(CoreError::config(
                "n_disc_steps and minibatch_s must be at least 1",
            ));
        }
        for (name, lr) in [("lr_d", self.lr_d), ("lr_g", self.lr_g)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(CoreError::config(format!("{name} must be positive")));
            }
        }
        if self.noise_dim == 0 || self.repr_dim == 0 {
            return Err(CoreError::config(
                "noise_dim and repr_dim must be at least 1",
            ));
        }
        if self.phi_mode == PhiMode::Identity && self.repr_dim != data_dim {
            return Err(CoreError::config(format!(
                "identity representation requires repr_dim == data dimension ({} != {data_dim})",
                self.repr_dim
            )));
        }
        if self.jsd_every > 0 && self.jsd_bins < 2 {
            return Err(CoreError::config("jsd_bins must be at least 2"));
        }
        if self.eval_samples == 0 {
            return Err(CoreError::config("eval_samples must be at least 1"));
        }
        Ok(())
    }
}

/// The representation map applied to treated covariates before the
/// discriminator sees them.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiMap {
    Identity { dim: usize },
    Fixed(MlpNetwork),
    Learned(MlpNetwork),
}

impl PhiMap {
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        match self {
            PhiMap::Identity { dim } => {
                if batch.cols() != *dim {
                    return Err(CoreError::shape(format!(
                        "batch has {} cols, identity representation expects {dim}",
                        batch.cols()
                    )));
                }
                Ok(batch.clone())
            }
            PhiMap::Fixed(net) | PhiMap::Learned(net) => net.predict(batch),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PhiMap::Identity { dim } => *dim,
            PhiMap::Fixed(net) | PhiMap::Learned(net) => net.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            PhiMap::Identity { dim } => *dim,
            PhiMap::Fixed(net) | PhiMap::Learned(net) => net.output_dim(),
        }
    }

    pub fn mode(&self) -> PhiMode {
        match self {
            PhiMap::Identity { .. } => PhiMode::Identity,
            PhiMap::Fixed(_) => PhiMode::FixedRandom,
            PhiMap::Learned(_) => PhiMode::Learned,
        }
    }
}

/// Applies the representation map; identity mode returns the batch as is.
pub fn representation(phi: &PhiMap, treat_batch: &Matrix) -> Result<Matrix> {
    phi.apply(treat_batch)
}

/// Discriminator objective as a loss (descending it ascends the game's
/// criterion): `-(1/s) sum [log d_real + log(1 - d_fake)]`.
pub fn disc_loss(d_real: &Matrix, d_fake: &Matrix) -> Result<f64> {
    if d_real.rows() != d_fake.rows() {
        return Err(CoreError::shape(format!(
            "real and fake batches differ in size: {} vs {}",
            d_real.rows(),
            d_fake.rows()
        )));
    }
    Ok(BatchLoss::BceReal.value(d_real)? + BatchLoss::BceFake.value(d_fake)?)
}

/// Generator objective: the minimax term `(1/s) sum log(1 - d_fake)` or the
/// non-saturating substitute `-(1/s) sum log d_fake`. The generator descends
/// either; both decrease as the discriminator is fooled more.
pub fn gen_loss(d_fake: &Matrix, mode: GenLossMode) -> Result<f64> {
    match mode {
        GenLossMode::Saturating => BatchLoss::GenSaturating.value(d_fake),
        GenLossMode::NonSaturating => BatchLoss::GenNonSaturating.value(d_fake),
    }
}

fn gen_loss_kind(mode: GenLossMode) -> BatchLoss {
    match mode {
        GenLossMode::Saturating => BatchLoss::GenSaturating,
        GenLossMode::NonSaturating => BatchLoss::GenNonSaturating,
    }
}

/// Real-branch discriminator input: representation, with noise concatenated
/// when conditioning is on.
pub(crate) fn d_input(repr: &Matrix, noise: &Matrix, conditional: bool) -> Result<Matrix> {
    if conditional {
        repr.hconcat(noise)
    } else {
        Ok(repr.clone())
    }
}

/// Generator input: control covariates with noise concatenated, or noise
/// alone in the unconditional game.
pub(crate) fn g_input(con: &Matrix, noise: &Matrix, conditional: bool) -> Result<Matrix> {
    if conditional {
        con.hconcat(noise)
    } else {
        Ok(noise.clone())
    }
}

/// Monte-Carlo estimate of the game value
/// `E[log D(phi(t)|w)] + E[log(1 - D(G(Con|w)))]` with fresh pool draws and
/// fresh noise for each term.
#[allow(clippy::too_many_arguments)]
pub fn value_function(
    d: &MlpNetwork,
    g: &MlpNetwork,
    phi: &PhiMap,
    treat_pool: &Matrix,
    con_pool: &Matrix,
    noise_dim: usize,
    conditional: bool,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let treat = sample_minibatch(treat_pool, n_samples, rng)?;
    let w_real = sample_noise(n_samples, noise_dim, rng)?;
    let p_real = d.predict(&d_input(&phi.apply(&treat)?, &w_real, conditional)?)?;
    let real_term = kahan_mean(p_real.data().iter().map(|&p| clamp_prob(p).ln()));

    let con = sample_minibatch(con_pool, n_samples, rng)?;
    let w_fake = sample_noise(n_samples, noise_dim, rng)?;
    let fake = g.predict(&g_input(&con, &w_fake, conditional)?)?;
    let p_fake = d.predict(&d_input(&fake, &w_fake, conditional)?)?;
    let fake_term = kahan_mean(p_fake.data().iter().map(|&p| (1.0 - clamp_prob(p)).ln()));
    Ok(real_term + fake_term)
}

/// Per-iteration training record. `value_fn` is the criterion estimate from
/// the iteration's last discriminator minibatch (the negated disc loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub value_fn: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
    pub emp_jsd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, keys in declaration order, no timestamps,
    /// so identical runs serialize byte-identically.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<RunLog> {
        let mut records = Vec::new();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: RunRecord =
                serde_json::from_str(line).map_err(|e| CoreError::parse(i + 1, e.to_string()))?;
            records.push(rec);
        }
        Ok(RunLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunLog> {
        RunLog::from_jsonl(&read_named(path)?)
    }
}

/// Outputs of one discriminator step, including per-row scores so callers
/// can assert pairing and equilibrium properties.
#[derive(Debug, Clone)]
pub struct DiscStepStats {
    pub disc_loss: f64,
    pub d_real: Matrix,
    pub d_fake: Matrix,
}

#[derive(Debug, Clone)]
pub struct GenStepStats {
    pub gen_loss: f64,
    pub d_fake: Matrix,
}

/// Owns the three networks and the training RNG stream.
#[derive(Debug, Clone)]
pub struct AdversarialTrainer {
    pub d: MlpNetwork,
    pub g: MlpNetwork,
    pub phi: PhiMap,
    config: TrainConfig,
    data_dim: usize,
    rng: ChaCha8Rng,
    pub d_updates: usize,
    pub g_updates: usize,
    pub phi_updates: usize,
}

impl AdversarialTrainer {
    /// Builds fresh networks from the config's seed. Discriminator input is
    /// `repr_dim (+ noise_dim)`, generator input `data_dim (+ noise_dim)`
    /// with output `repr_dim`, the representation maps `data_dim` to
    /// `repr_dim`.
    pub fn new(config: &TrainConfig, data_dim: usize) -> Result<Self> {
        config.validate(data_dim)?;
        let noise_extra = if config.conditional {
            config.noise_dim
        } else {
            0
        };
        let d = mlp_new(
            &config.d_arch.layer_sizes(config.repr_dim + noise_extra, 1),
            config.d_arch.activation,
            OutputActivation::Sigmoid,
            derive_seed(config.seed, D_INIT_STREAM),
        )?;
        let g_in = if config.conditional {
            data_dim + config.noise_dim
        } else {
            config.noise_dim
        };
        let g = mlp_new(
            &config.g_arch.layer_sizes(g_in, config.repr_dim),
            config.g_arch.activation,
            OutputActivation::Identity,
            derive_seed(config.seed, G_INIT_STREAM),
        )?;
        let phi = match config.phi_mode {
            PhiMode::Identity => PhiMap::Identity { dim: data_dim },
            PhiMode::FixedRandom | PhiMode::Learned => {
                let net = mlp_new(
                    &config.phi_arch.layer_sizes(data_dim, config.repr_dim),
                    config.phi_arch.activation,
                    OutputActivation::Identity,
                    derive_seed(config.seed, PHI_INIT_STREAM),
                )?;
                if config.phi_mode == PhiMode::Learned {
                    PhiMap::Learned(net)
                } else {
                    PhiMap::Fixed(net)
                }
            }
        };
        Self::from_networks(config, data_dim, d, g, phi)
    }

    /// Resumes from existing networks (e.g. a loaded checkpoint), validating
    /// that their shapes match the config.
    pub fn from_networks(
        config: &TrainConfig,
        data_dim: usize,
        d: MlpNetwork,
        g: MlpNetwork,
        phi: PhiMap,
    ) -> Result<Self> {
        config.validate(data_dim)?;
        let noise_extra = if config.conditional {
            config.noise_dim
        } else {
            0
        };
        if d.input_dim() != config.repr_dim + noise_extra || d.output_dim() != 1 {
            return Err(CoreError::shape(format!(
                "discriminator maps {} -> {}, config expects {} -> 1",
                d.input_dim(),
                d.output_dim(),
                config.repr_dim + noise_extra
            )));
        }
        let g_in = if config.conditional {
            data_dim + config.noise_dim
        } else {
            config.noise_dim
        };
        if g.input_dim() != g_in || g.output_dim() != config.repr_dim {
            return Err(CoreError::shape(format!(
                "generator maps {} -> {}, config expects {g_in} -> {}",
                g.input_dim(),
                g.output_dim(),
                config.repr_dim
            )));
        }
        if phi.input_dim() != data_dim || phi.output_dim() != config.repr_dim {
            return Err(CoreError::shape(format!(
                "representation maps {} -> {}, config expects {data_dim} -> {}",
                phi.input_dim(),
                phi.output_dim(),
                config.repr_dim
            )));
        }
        if phi.mode() != config.phi_mode {
            return Err(CoreError::config(format!(
                "representation mode {} does not match config {}",
                phi.mode().name(),
                config.phi_mode.name()
            )));
        }
        Ok(AdversarialTrainer {
            d,
            g,
            phi,
            config: config.clone(),
            data_dim,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TRAIN_STREAM)),
            d_updates: 0,
            g_updates: 0,
            phi_updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One discriminator ascent: score real representations against
    /// generator outputs under the same noise rows, then step D against the
    /// negated criterion. G and the representation stay frozen.
    pub fn disc_step(
        &mut self,
        treat_batch: &Matrix,
        con_batch: &Matrix,
        noise: &Matrix,
    ) -> Result<DiscStepStats> {
        let s = noise.rows();
        if treat_batch.rows() != s || (self.config.conditional && con_batch.rows() != s) {
            return Err(CoreError::shape("minibatch row counts differ"));
        }
        let conditional = self.config.conditional;
        let phi_t = self.phi.apply(treat_batch)?;
        let real_in = d_input(&phi_t, noise, conditional)?;
        let fake = self.g.predict(&g_input(con_batch, noise, conditional)?)?;
        let fake_in = d_input(&fake, noise, conditional)?;

        // One stacked forward/backward over real rows then fake rows.
        let stacked = real_in.vstack(&fake_in)?;
        let p = self.d.forward(&stacked)?;
        let d_real = p.row_block(0, s)?;
        let d_fake = p.row_block(s, 2 * s)?;
        let loss = disc_loss(&d_real, &d_fake)?;

        let upstream = BatchLoss::BceReal
            .upstream(&d_real)?
            .vstack(&BatchLoss::BceFake.upstream(&d_fake)?)?;
        let (grads, _) = self.d.backward(&upstream)?;
        self.d
            .sgd_step(&grads, self.config.lr_d, StepDirection::Descend)?;
        self.d_updates += 1;
        Ok(DiscStepStats {
            disc_loss: loss,
            d_real,
            d_fake,
        })
    }

    /// One generator descent with D frozen; gradients reach G through the
    /// discriminator's input. In learned mode the representation then takes
    /// a descent step on the real-term criterion using the same noise.
    pub fn gen_step(
        &mut self,
        con_batch: &Matrix,
        treat_batch: Option<&Matrix>,
        noise: &Matrix,
    ) -> Result<GenStepStats> {
        let conditional = self.config.conditional;
        let g_in = g_input(con_batch, noise, conditional)?;
        let fake = self.g.forward(&g_in)?;
        let fake_in = d_input(&fake, noise, conditional)?;
        let p_fake = self.d.forward(&fake_in)?;
        let loss_kind = gen_loss_kind(self.config.gen_loss_mode);
        let loss = loss_kind.value(&p_fake)?;

        let upstream = loss_kind.upstream(&p_fake)?;
        let (_, d_in_grad) = self.d.backward(&upstream)?;
        let fake_grad = if conditional {
            d_in_grad.col_block(0, self.config.repr_dim)?
        } else {
            d_in_grad
        };
        let (g_grads, _) = self.g.backward(&fake_grad)?;
        self.g
            .sgd_step(&g_grads, self.config.lr_g, StepDirection::Descend)?;
        self.g_updates += 1;

        if let PhiMap::Learned(_) = &self.phi {
            let treat = treat_batch.ok_or_else(|| {
                CoreError::usage("learned representation needs a treatment minibatch")
            })?;
            self.phi_step(treat, noise)?;
        }

        Ok(GenStepStats {
            gen_loss: loss,
            d_fake: p_fake,
        })
    }

    /// Descends the representation on `(1/s) sum log D(phi(t)|w)`: the same
    /// real-term criterion D ascends, so the representation moves treated
    /// points toward where D cannot tell them from generated ones.
    fn phi_step(&mut self, treat_batch: &Matrix, noise: &Matrix) -> Result<()> {
        let conditional = self.config.conditional;
        let phi_net = match &mut self.phi {
            PhiMap::Learned(net) => net,
            _ => return Ok(()),
        };
        let phi_t = phi_net.forward(treat_batch)?;
        let real_in = d_input(&phi_t, noise, conditional)?;
        let p_real = self.d.forward(&real_in)?;
        // Gradient of (1/s) sum log p is the negated real-half BCE gradient.
        let upstream = BatchLoss::BceReal.upstream(&p_real)?.map(|v| -v);
        let (_, d_in_grad) = self.d.backward(&upstream)?;
        let repr_grad = if conditional {
            d_in_grad.col_block(0, self.config.repr_dim)?
        } else {
            d_in_grad
        };
        let (phi_grads, _) = phi_net.backward(&repr_grad)?;
        phi_net.sgd_step(&phi_grads, self.config.lr_g, StepDirection::Descend)?;
        self.phi_updates += 1;
        Ok(())
    }

    /// Runs the adversarial game for `config.iterations` outer loops: N
    /// discriminator steps (sampling control rows, treatment rows, then
    /// noise), then one
    /// generator step (control rows, treatment rows when the representation
    /// is learned, then noise). Aborts the moment any loss or parameter goes
    /// non-finite, naming the iteration.
    pub fn train(&mut self, ds: &SyntheticDataset) -> Result<RunLog> {
        if ds.dim() != self.data_dim {
            return Err(CoreError::shape(format!(
                "dataset has dimension {}, trainer was built for {}",
                ds.dim(),
                self.data_dim
            )));
        }
        let treat_pool = ds.treat_pool();
        let con_pool = ds.control_pool();
        let s = self.config.minibatch_s;
        let mut log = RunLog::default();

        for iter in 0..self.config.iterations {
            let mut last_disc: Option<DiscStepStats> = None;
            for _ in 0..self.config.n_disc_steps {
                let con = sample_minibatch(&con_pool, s, &mut self.rng)?;
                let treat = sample_minibatch(&treat_pool, s, &mut self.rng)?;
                let noise = sample_noise(s, self.config.noise_dim, &mut self.rng)?;
                last_disc = Some(self.disc_step(&treat, &con, &noise)?);
            }
            let disc_stats = last_disc.expect("n_disc_steps >= 1");

            let con = sample_minibatch(&con_pool, s, &mut self.rng)?;
            let treat = if self.config.phi_mode == PhiMode::Learned {
                Some(sample_minibatch(&treat_pool, s, &mut self.rng)?)
            } else {
                None
            };
            let noise = sample_noise(s, self.config.noise_dim, &mut self.rng)?;
            let gen_stats = self.gen_step(&con, treat.as_ref(), &noise)?;

            let emp_jsd = if self.config.jsd_every > 0 && iter % self.config.jsd_every == 0 {
                let mut jsd_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.config.seed,
                    JSD_LOG_STREAM + iter as u64,
                ));
                Some(metrics::representation_jsd(
                    &self.g,
                    &self.phi,
                    &treat_pool,
                    &con_pool,
                    self.config.noise_dim,
                    self.config.conditional,
                    self.config.eval_samples,
                    self.config.jsd_bins,
                    &mut jsd_rng,
                )?)
            } else {
                None
            };

            let record = RunRecord {
                iter,
                disc_loss: disc_stats.disc_loss,
                gen_loss: gen_stats.gen_loss,
                value_fn: -disc_stats.disc_loss,
                mean_d_real: kahan_mean(disc_stats.d_real.data().iter().copied()),
                mean_d_fake: kahan_mean(disc_stats.d_fake.data().iter().copied()),
                emp_jsd,
            };
            self.check_finite(iter, &record)?;
            log.records.push(record);
        }
        Ok(log)
    }

    fn check_finite(&self, iteration: usize, record: &RunRecord) -> Result<()> {
        if !record.disc_loss.is_finite() {
            return Err(CoreError::Diverged {
                iteration,
                what: "discriminator loss is non-finite".into(),
            });
        }
        if !record.gen_loss.is_finite() {
            return Err(CoreError::Diverged {
                iteration,
                what: "generator loss is non-finite".into(),
            });
        }
        let nets: [(&str, Option<&MlpNetwork>); 3] = [
            ("discriminator", Some(&self.d)),
            ("generator", Some(&self.g)),
            (
                "representation",
                match &self.phi {
                    PhiMap::Identity { .. } => None,
                    PhiMap::Fixed(net) | PhiMap::Learned(net) => Some(net),
                },
            ),
        ];
        for (name, net) in nets {
            if let Some(net) = net {
                let finite = net.weights().iter().all(Matrix::is_finite)
                    && net.biases().iter().all(|b| b.iter().all(|v| v.is_finite()));
                if !finite {
                    return Err(CoreError::Diverged {
                        iteration,
                        what: format!("{name} parameters became non-finite"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Writes `d.ckpt`, `g.ckpt` and `phi.ckpt` into `dir`.
pub fn save_checkpoint(d: &MlpNetwork, g: &MlpNetwork, phi: &PhiMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("d.ckpt"), d.to_text_block())?;
    fs::write(dir.join("g.ckpt"), g.to_text_block())?;
    let phi_text = match phi {
        PhiMap::Identity { dim } => format!("identity {dim}\n"),
        PhiMap::Fixed(net) => format!("fixed\n{}", net.to_text_block()),
        PhiMap::Learned(net) => format!("learned\n{}", net.to_text_block()),
    };
    fs::write(dir.join("phi.ckpt"), phi_text)?;
    Ok(())
}

/// Loads the three checkpoint files back; exact inverse of
/// `save_checkpoint`.
pub fn load_checkpoint(dir: &Path) -> Result<(MlpNetwork, MlpNetwork, PhiMap)> {
    let read_net = |name: &str| -> Result<MlpNetwork> {
        let text = read_named(&dir.join(name))?;
        let lines: Vec<&str> = text.lines().collect();
        let (net, consumed) = MlpNetwork::from_text_lines(&lines, 1)?;
        if consumed != lines.len() {
            return Err(CoreError::parse(consumed + 1, "trailing content"));
        }
        Ok(net)
    };
    let d = read_net("d.ckpt")?;
    let g = read_net("g.ckpt")?;

    let phi_path = dir.join("phi.ckpt");
    let text = read_named(&phi_path)?;
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines
        .first()
        .ok_or_else(|| CoreError::parse(1, "empty representation checkpoint"))?
        .split_whitespace()
        .collect();
    let phi = match header.as_slice() {
        ["identity", dim] => {
            let dim: usize = dim
                .parse()
                .map_err(|_| CoreError::parse(1, format!("bad dimension '{dim}'")))?;
            if lines.len() > 1 {
                return Err(CoreError::parse(2, "trailing content"));
            }
            PhiMap::Identity { dim }
        }
        ["fixed"] | ["learned"] => {
            let (net, consumed) = MlpNetwork::from_text_lines(&lines[1..], 2)?;
            if consumed + 1 != lines.len() {
                return Err(CoreError::parse(consumed + 2, "trailing content"));
            }
            if header[0] == "fixed" {
                PhiMap::Fixed(net)
            } else {
                PhiMap::Learned(net)
            }
        }
        _ => {
            return Err(CoreError::parse(
                1,
                format!("bad representation header '{}'", lines[0]),
            ))
        }
    };
    Ok((d, g, phi))
}

fn read_named(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| CoreError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, OutcomeSpec};

    const LN4: f64 = 1.3862943611198906;

    fn small_config() -> TrainConfig {
        let mut c = TrainConfig::default_for_dim(2);
        c.minibatch_s = 8;
        c.iterations = 3;
        c.eval_samples = 64;
        c.jsd_every = 0;
        c.d_arch = ArchSpec::new(vec![8], HiddenActivation::Tanh);
        c.g_arch = ArchSpec::new(vec![8], HiddenActivation::Tanh);
        c.phi_arch = ArchSpec::new(vec![8], HiddenActivation::Tanh);
        c
    }

    fn small_dataset(seed: u64) -> SyntheticDataset {
        gen_synthetic(30, 30, 2, 1.0, OutcomeSpec::Linear, 0.0, seed).unwrap()
    }

    #[test]
    fn arch_spec_parses_sizes_and_activation() {
        let a = ArchSpec::parse("16,8:tanh").unwrap();
        assert_eq!(a.hidden, vec![16, 8]);
        assert_eq!(a.activation, HiddenActivation::Tanh);
        assert_eq!(a.to_spec_string(), "16,8:tanh");

        let b = ArchSpec::parse(":relu").unwrap();
        assert!(b.hidden.is_empty());
        assert_eq!(ArchSpec::parse(&b.to_spec_string()).unwrap(), b);

        assert!(ArchSpec::parse("16").is_err());
        assert!(ArchSpec::parse("0:tanh").is_err());
        assert!(ArchSpec::parse("a:tanh").is_err());
        assert!(ArchSpec::parse("16:swish").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        type Tweak = (Box<dyn Fn(&mut TrainConfig)>, &'static str);
        let base = small_config();
        let cases: Vec<Tweak> = vec![
            (Box::new(|c| c.minibatch_s = 0), "zero minibatch"),
            (Box::new(|c| c.n_disc_steps = 0), "zero disc steps"),
            (Box::new(|c| c.lr_d = 0.0), "zero lr"),
            (Box::new(|c| c.lr_g = -0.1), "negative lr"),
            (Box::new(|c| c.noise_dim = 0), "zero noise dim"),
            (Box::new(|c| c.repr_dim = 3), "identity dim mismatch"),
            (Box::new(|c| c.eval_samples = 0), "zero eval samples"),
            (
                Box::new(|c| {
                    c.jsd_every = 10;
                    c.jsd_bins = 1;
                }),
                "one bin",
            ),
        ];
        for (tweak, what) in cases {
            let mut c = base.clone();
            tweak(&mut c);
            assert!(
                matches!(c.validate(2), Err(CoreError::Config(_))),
                "{what} should be rejected"
            );
        }
        assert!(base.validate(2).is_ok());
        let mut zero_iter = base;
        zero_iter.iterations = 0;
        assert!(zero_iter.validate(2).is_ok());
    }

    #[test]
    fn trainer_wires_network_shapes_from_config() {
        let c = small_config();
        let t = AdversarialTrainer::new(&c, 2).unwrap();
        assert_eq!(t.d.input_dim(), c.repr_dim + c.noise_dim);
        assert_eq!(t.d.output_dim(), 1);
        assert_eq!(t.g.input_dim(), 2 + c.noise_dim);
        assert_eq!(t.g.output_dim(), c.repr_dim);

        let mut uc = small_config();
        uc.conditional = false;
        let t = AdversarialTrainer::new(&uc, 2).unwrap();
        assert_eq!(t.d.input_dim(), uc.repr_dim);
        assert_eq!(t.g.input_dim(), uc.noise_dim);
    }

    #[test]
    fn disc_loss_at_half_is_exactly_log_four() {
        let half = Matrix::new(4, 1, vec![0.5; 4]).unwrap();
        assert_eq!(disc_loss(&half, &half).unwrap(), LN4);
        assert_eq!(disc_loss(&half, &half).unwrap(), 4.0f64.ln());
    }

    #[test]
    fn disc_loss_rewards_a_perfect_discriminator() {
        let ones = Matrix::new(3, 1, vec![1.0; 3]).unwrap();
        let zeros = Matrix::new(3, 1, vec![0.0; 3]).unwrap();
        let v = disc_loss(&ones, &zeros).unwrap();
        assert!(v.abs() < 1e-5, "near-zero loss, got {v}");

        // Confidently wrong on both branches pays the clamped worst case.
        let worst = disc_loss(&zeros, &ones).unwrap();
        assert!((worst - 2.0 * -(1e-7f64).ln()).abs() < 1e-5);
    }

    #[test]
    fn disc_loss_rejects_mismatched_batches() {
        let a = Matrix::new(3, 1, vec![0.5; 3]).unwrap();
        let b = Matrix::new(2, 1, vec![0.5; 2]).unwrap();
        assert!(matches!(disc_loss(&a, &b), Err(CoreError::Shape(_))));
    }

    #[test]
    fn gen_loss_hand_values_at_half() {
        let half = Matrix::new(5, 1, vec![0.5; 5]).unwrap();
        assert_eq!(
            gen_loss(&half, GenLossMode::NonSaturating).unwrap(),
            std::f64::consts::LN_2
        );
        assert_eq!(
            gen_loss(&half, GenLossMode::Saturating).unwrap(),
            -std::f64::consts::LN_2
        );
    }

    #[test]
    fn schedule_runs_n_disc_steps_per_generator_step() {
        let mut c = small_config();
        c.n_disc_steps = 3;
        c.iterations = 5;
        let ds = small_dataset(1);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let log = t.train(&ds).unwrap();
        assert_eq!(t.d_updates, 15);
        assert_eq!(t.g_updates, 5);
        assert_eq!(t.phi_updates, 0);
        assert_eq!(log.len(), 5);
    }

    #[test]
    fn learned_representation_steps_alongside_the_generator() {
        let mut c = small_config();
        c.phi_mode = PhiMode::Learned;
        c.repr_dim = 3;
        c.iterations = 3;
        let ds = small_dataset(2);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let init_phi = t.phi.clone();
        t.train(&ds).unwrap();
        assert_eq!(t.phi_updates, 3);
        assert_ne!(t.phi, init_phi);
    }

    #[test]
    fn disc_step_ascends_the_criterion_on_its_own_minibatch() {
        let mut c = small_config();
        c.lr_d = 1e-4;
        let ds = small_dataset(3);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let treat = sample_minibatch(&ds.treat_pool(), 8, &mut rng).unwrap();
        let con = sample_minibatch(&ds.control_pool(), 8, &mut rng).unwrap();
        let noise = sample_noise(8, c.noise_dim, &mut rng).unwrap();

        let before = t.disc_step(&treat, &con, &noise).unwrap();
        // Re-score the same minibatch with the updated discriminator.
        let phi_t = t.phi.apply(&treat).unwrap();
        let real =
            t.d.predict(&d_input(&phi_t, &noise, true).unwrap())
                .unwrap();
        let fake = t.g.predict(&g_input(&con, &noise, true).unwrap()).unwrap();
        let fake_scores = t.d.predict(&d_input(&fake, &noise, true).unwrap()).unwrap();
        let after_loss = disc_loss(&real, &fake_scores).unwrap();
        assert!(
            -after_loss > -before.disc_loss,
            "criterion should rise: {} -> {}",
            -before.disc_loss,
            -after_loss
        );
    }

    #[test]
    fn gen_step_descends_its_loss_on_its_own_minibatch() {
        let mut c = small_config();
        c.lr_g = 1e-4;
        let ds = small_dataset(4);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let con = sample_minibatch(&ds.control_pool(), 8, &mut rng).unwrap();
        let noise = sample_noise(8, c.noise_dim, &mut rng).unwrap();

        let before = t.gen_step(&con, None, &noise).unwrap();
        let fake = t.g.predict(&g_input(&con, &noise, true).unwrap()).unwrap();
        let p_fake = t.d.predict(&d_input(&fake, &noise, true).unwrap()).unwrap();
        let after_loss = gen_loss(&p_fake, c.gen_loss_mode).unwrap();
        assert!(
            after_loss < before.gen_loss,
            "loss should fall: {} -> {}",
            before.gen_loss,
            after_loss
        );
    }

    #[test]
    fn both_branches_see_identical_noise_rows() {
        // A discriminator reading only the noise columns must score paired
        // real and fake rows identically.
        let mut c = small_config();
        c.noise_dim = 2;
        let ds = small_dataset(5);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        t.d = MlpNetwork::from_parts(
            vec![4, 1],
            vec![Matrix::new(1, 4, vec![0.0, 0.0, 1.0, 0.5]).unwrap()],
            vec![vec![0.3]],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let treat = sample_minibatch(&ds.treat_pool(), 8, &mut rng).unwrap();
        let con = sample_minibatch(&ds.control_pool(), 8, &mut rng).unwrap();
        let noise = sample_noise(8, 2, &mut rng).unwrap();
        let stats = t.disc_step(&treat, &con, &noise).unwrap();
        assert_eq!(stats.d_real.data(), stats.d_fake.data());
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let mut c = small_config();
        c.iterations = 4;
        c.jsd_every = 2;
        c.jsd_bins = 4;
        let ds = small_dataset(6);
        let mut t1 = AdversarialTrainer::new(&c, 2).unwrap();
        let mut t2 = AdversarialTrainer::new(&c, 2).unwrap();
        let log1 = t1.train(&ds).unwrap();
        let log2 = t2.train(&ds).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(log1.to_jsonl(), log2.to_jsonl());
        assert_eq!(t1.d, t2.d);
        assert_eq!(t1.g, t2.g);
    }

    #[test]
    fn zero_iterations_leaves_networks_untouched() {
        let mut c = small_config();
        c.iterations = 0;
        let ds = small_dataset(7);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let fresh = AdversarialTrainer::new(&c, 2).unwrap();
        let log = t.train(&ds).unwrap();
        assert!(log.is_empty());
        assert_eq!(t.d, fresh.d);
        assert_eq!(t.g, fresh.g);
    }

    #[test]
    fn constant_half_discriminator_sits_at_the_equilibrium_value() {
        let c = small_config();
        let ds = small_dataset(10);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        t.d.zero_params();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let treat = sample_minibatch(&ds.treat_pool(), 16, &mut rng).unwrap();
        let noise = sample_noise(16, c.noise_dim, &mut rng).unwrap();
        let real =
            t.d.predict(&d_input(&t.phi.apply(&treat).unwrap(), &noise, true).unwrap())
                .unwrap();
        assert!(real.data().iter().all(|&p| p == 0.5));
        assert_eq!(disc_loss(&real, &real).unwrap(), LN4);

        let mut vrng = ChaCha8Rng::seed_from_u64(12);
        let v = value_function(
            &t.d,
            &t.g,
            &t.phi,
            &ds.treat_pool(),
            &ds.control_pool(),
            c.noise_dim,
            true,
            200,
            &mut vrng,
        )
        .unwrap();
        assert_eq!(v, -LN4);
    }

    #[test]
    fn exploding_learning_rate_aborts_naming_the_iteration() {
        let mut c = small_config();
        c.lr_d = 1e308;
        c.lr_g = 1e308;
        c.iterations = 50;
        c.d_arch = ArchSpec::new(vec![8], HiddenActivation::Relu);
        c.g_arch = ArchSpec::new(vec![8], HiddenActivation::Relu);
        let ds = small_dataset(8);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        match t.train(&ds) {
            Err(CoreError::Diverged { iteration, .. }) => assert!(iteration < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoints_round_trip_every_representation_mode() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [PhiMode::Identity, PhiMode::FixedRandom, PhiMode::Learned] {
            let mut c = small_config();
            c.phi_mode = mode;
            if mode != PhiMode::Identity {
                c.repr_dim = 3;
            }
            let t = AdversarialTrainer::new(&c, 2).unwrap();
            let sub = dir.path().join(mode.name());
            save_checkpoint(&t.d, &t.g, &t.phi, &sub).unwrap();
            let (d, g, phi) = load_checkpoint(&sub).unwrap();
            assert_eq!(d, t.d);
            assert_eq!(g, t.g);
            assert_eq!(phi, t.phi);

            // A loaded checkpoint can seed a trainer under the same config.
            let resumed = AdversarialTrainer::from_networks(&c, 2, d, g, phi).unwrap();
            assert_eq!(resumed.d, t.d);
        }
    }

    #[test]
    fn checkpoint_with_bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config();
        let t = AdversarialTrainer::new(&c, 2).unwrap();
        save_checkpoint(&t.d, &t.g, &t.phi, dir.path()).unwrap();
        fs::write(dir.path().join("phi.ckpt"), "banana 3\n").unwrap();
        match load_checkpoint(dir.path()) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_checkpoint_file_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_checkpoint(dir.path()) {
            Err(CoreError::Io(e)) => assert!(e.to_string().contains("d.ckpt")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn resume_rejects_networks_that_do_not_match_the_config() {
        let c = small_config();
        let t = AdversarialTrainer::new(&c, 2).unwrap();

        let mut wrong_dim = c.clone();
        wrong_dim.noise_dim = 7;
        assert!(matches!(
            AdversarialTrainer::from_networks(
                &wrong_dim,
                2,
                t.d.clone(),
                t.g.clone(),
                t.phi.clone()
            ),
            Err(CoreError::Shape(_))
        ));

        let mut wrong_mode = c.clone();
        wrong_mode.phi_mode = PhiMode::Learned;
        wrong_mode.repr_dim = 2;
        let phi_net = mlp_new(
            &[2, 4, 2],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
            3,
        )
        .unwrap();
        assert!(matches!(
            AdversarialTrainer::from_networks(
                &wrong_mode,
                2,
                t.d.clone(),
                t.g.clone(),
                PhiMap::Fixed(phi_net)
            ),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn unconditional_game_trains_with_finite_losses() {
        let mut c = small_config();
        c.conditional = false;
        c.iterations = 5;
        let ds = small_dataset(9);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let log = t.train(&ds).unwrap();
        assert_eq!(log.len(), 5);
        for r in &log.records {
            assert!(r.disc_loss.is_finite() && r.gen_loss.is_finite());
            assert!((0.0..=1.0).contains(&r.mean_d_real));
            assert!((0.0..=1.0).contains(&r.mean_d_fake));
        }
    }

    #[test]
    fn runlog_jsonl_round_trips_and_keeps_null_fields() {
        let log = RunLog {
            records: vec![
                RunRecord {
                    iter: 0,
                    disc_loss: LN4,
                    gen_loss: 0.7,
                    value_fn: -LN4,
                    mean_d_real: 0.5,
                    mean_d_fake: 0.5,
                    emp_jsd: Some(0.01),
                },
                RunRecord {
                    iter: 1,
                    disc_loss: 1.0,
                    gen_loss: 0.6,
                    value_fn: -1.0,
                    mean_d_real: 0.4,
                    mean_d_fake: 0.6,
                    emp_jsd: None,
                },
            ],
        };
        let text = log.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("{\"iter\":0,\"disc_loss\":"));
        assert!(lines[1].contains("\"emp_jsd\":null"));
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);

        match RunLog::from_jsonl("{\"iter\":0}\nnot json\n") {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn logged_value_fn_is_the_negated_disc_loss() {
        let mut c = small_config();
        c.iterations = 2;
        let ds = small_dataset(13);
        let mut t = AdversarialTrainer::new(&c, 2).unwrap();
        let log = t.train(&ds).unwrap();
        for r in &log.records {
            assert_eq!(r.value_fn, -r.disc_loss);
        }
    }
}
