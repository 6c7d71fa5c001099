//! `cbalance`: reproducible adversarial-balancing runs from the command
//! line. Exit codes are a stable contract: 0 success, 1 runtime or
//! verification failure, 2 usage or configuration error.

mod checks;
mod commands;
mod manifest;
mod run_config;

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

use cbalance_core::CoreError;

#[derive(Parser)]
#[command(
    name = "cbalance",
    version,
    about = "Adversarial representation balancing toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// One value exists per process; the size spread between variants is moot.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic treatment/control dataset CSV.
    GenData(GenDataArgs),
    /// Train the adversarial balancer and persist run artifacts.
    Train(TrainArgs),
    /// Re-evaluate a finished run directory on a dataset.
    Eval(EvalArgs),
    /// Verify equilibrium theory against exact discrete oracles.
    OracleCheck(OracleCheckArgs),
    /// Verify backpropagation against central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of treated units.
    #[arg(long)]
    pub n_treat: usize,
    /// Number of control units.
    #[arg(long)]
    pub n_con: usize,
    /// Covariate dimension.
    #[arg(long)]
    pub dim: usize,
    /// Mean shift of the treated covariate distribution.
    #[arg(long)]
    pub shift: f64,
    /// Outcome family: linear or quadratic.
    #[arg(long, default_value = "linear")]
    pub outcome: String,
    /// Observation noise on the factual outcome.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// RNG seed (falls back to CBALANCE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset CSV produced by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create (manifest, checkpoints, logs, report).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Flat key=value config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_disc_steps: Option<usize>,
    #[arg(long)]
    pub minibatch_s: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub noise_dim: Option<usize>,
    #[arg(long)]
    pub repr_dim: Option<usize>,
    /// saturating or non_saturating.
    #[arg(long)]
    pub gen_loss_mode: Option<String>,
    /// identity, fixed_random or learned.
    #[arg(long)]
    pub phi_mode: Option<String>,
    /// Condition both networks on shared noise (true) or play the
    /// unconditional game (false).
    #[arg(long)]
    pub conditional: Option<bool>,
    /// RNG seed (falls back to config file, CBALANCE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Discriminator architecture, e.g. 16,8:tanh.
    #[arg(long)]
    pub d_arch: Option<String>,
    /// Generator architecture, e.g. 16,8:tanh.
    #[arg(long)]
    pub g_arch: Option<String>,
    /// Representation architecture (fixed_random/learned modes).
    #[arg(long)]
    pub phi_arch: Option<String>,
    #[arg(long)]
    pub jsd_every: Option<usize>,
    #[arg(long)]
    pub jsd_bins: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Run directory written by train.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Dataset CSV to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args)]
pub struct OracleCheckArgs {
    /// Random trials for the identity and discriminator checks.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Largest random support size.
    #[arg(long, default_value_t = 16)]
    pub support_max: usize,
    /// RNG seed (falls back to CBALANCE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simplex grid resolution for the global-minimum search.
    #[arg(long, default_value_t = 100)]
    pub grid_steps: usize,
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Number of randomized networks to check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// RNG seed (falls back to CBALANCE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test hook: corrupt the named analytic gradient (e.g. w0[0,0])
    /// before comparing, to prove the checker catches it.
    #[arg(long, hide = true)]
    pub fault: Option<String>,
    /// Test hook: size of the injected gradient fault.
    #[arg(long, hide = true, default_value_t = 1e-3)]
    pub fault_delta: f64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::cmd_gen_data(&args),
        Command::Train(args) => commands::cmd_train(&args),
        Command::Eval(args) => commands::cmd_eval(&args),
        Command::OracleCheck(args) => checks::cmd_oracle_check(&args),
        Command::GradCheck(args) => checks::cmd_grad_check(&args),
    };
    match result {
        Ok(code) => process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            process::exit(exit_code_for(&err));
        }
    }
}

/// Usage and configuration mistakes exit 2; anything that went wrong at
/// runtime (I/O, parsing artifacts, divergence) exits 1.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Usage(_) | CoreError::Config(_) => 2,
                _ => 1,
            };
        }
    }
    1
}
