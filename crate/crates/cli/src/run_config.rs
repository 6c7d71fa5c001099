//! Training configuration resolution: defaults, then config file, then
//! flags, with CBALANCE_SEED as the seed of last resort.

use std::fs;
use std::path::Path;

use anyhow::Result;

use cbalance_core::trainer::{ArchSpec, GenLossMode, PhiMode, TrainConfig};
use cbalance_core::CoreError;

use crate::TrainArgs;

pub const SEED_ENV: &str = "CBALANCE_SEED";

/// Explicit flag first, then the environment variable, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    seed_from_env().map(|opt| opt.unwrap_or(0))
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let parsed = v.trim().parse().map_err(|_| {
                CoreError::config(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))
            })?;
            Ok(Some(parsed))
        }
        Err(_) => Ok(None),
    }
}

/// Builds the effective config for a dataset of dimension `data_dim`:
/// defaults, overlaid by the config file (if any), overlaid by flags. The
/// seed falls back to CBALANCE_SEED only when neither flags nor file set it.
pub fn resolve_train_config(args: &TrainArgs, data_dim: usize) -> Result<TrainConfig> {
    let mut config = TrainConfig::default_for_dim(data_dim);
    let mut seed_from_file = false;
    if let Some(path) = &args.config {
        seed_from_file = apply_config_file(&mut config, path)?;
    }

    if let Some(s) = args.seed {
        config.seed = s;
    } else if !seed_from_file {
        if let Some(s) = seed_from_env()? {
            config.seed = s;
        }
    }

    macro_rules! copy_flag {
        ($field:ident) => {
            if let Some(v) = args.$field {
                config.$field = v;
            }
        };
    }
    copy_flag!(n_disc_steps);
    copy_flag!(minibatch_s);
    copy_flag!(iterations);
    copy_flag!(lr_d);
    copy_flag!(lr_g);
    copy_flag!(noise_dim);
    copy_flag!(repr_dim);
    copy_flag!(conditional);
    copy_flag!(jsd_every);
    copy_flag!(jsd_bins);
    copy_flag!(eval_samples);
    if let Some(v) = &args.gen_loss_mode {
        config.gen_loss_mode = GenLossMode::parse(v)?;
    }
    if let Some(v) = &args.phi_mode {
        config.phi_mode = PhiMode::parse(v)?;
    }
    if let Some(v) = &args.d_arch {
        config.d_arch = ArchSpec::parse(v)?;
    }
    if let Some(v) = &args.g_arch {
        config.g_arch = ArchSpec::parse(v)?;
    }
    if let Some(v) = &args.phi_arch {
        config.phi_arch = ArchSpec::parse(v)?;
    }
    Ok(config)
}

/// Applies `key = value` lines (# comments, blank lines allowed); keys match
/// TrainConfig field names exactly. Returns whether the file set the seed.
pub fn apply_config_file(config: &mut TrainConfig, path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| {
        CoreError::config(format!("cannot read config file {}: {e}", path.display()))
    })?;
    let mut seed_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CoreError::config(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                i + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(config, key, value).map_err(|e| {
            let msg = match e {
                CoreError::Config(m) => m,
                other => other.to_string(),
            };
            CoreError::config(format!("{}:{}: {msg}", path.display(), i + 1))
        })?;
        if key == "seed" {
            seed_set = true;
        }
    }
    Ok(seed_set)
}

fn apply_key(config: &mut TrainConfig, key: &str, value: &str) -> cbalance_core::Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> cbalance_core::Result<T> {
        value
            .parse()
            .map_err(|_| CoreError::config(format!("bad value '{value}' for {key}")))
    }
    match key {
        "n_disc_steps" => config.n_disc_steps = num(key, value)?,
        "minibatch_s" => config.minibatch_s = num(key, value)?,
        "iterations" => config.iterations = num(key, value)?,
        "lr_d" => config.lr_d = num(key, value)?,
        "lr_g" => config.lr_g = num(key, value)?,
        "noise_dim" => config.noise_dim = num(key, value)?,
        "repr_dim" => config.repr_dim = num(key, value)?,
        "gen_loss_mode" => config.gen_loss_mode = GenLossMode::parse(value)?,
        "phi_mode" => config.phi_mode = PhiMode::parse(value)?,
        "conditional" => config.conditional = num(key, value)?,
        "seed" => config.seed = num(key, value)?,
        "d_arch" => config.d_arch = ArchSpec::parse(value)?,
        "g_arch" => config.g_arch = ArchSpec::parse(value)?,
        "phi_arch" => config.phi_arch = ArchSpec::parse(value)?,
        "jsd_every" => config.jsd_every = num(key, value)?,
        "jsd_bins" => config.jsd_bins = num(key, value)?,
        "eval_samples" => config.eval_samples = num(key, value)?,
        other => {
            return Err(CoreError::config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}
