//! oracle-check and grad-check: machine-verifiable evidence that the
//! implementation matches the closed-form theory and that backpropagation
//! matches finite differences.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbalance_core::nn::{
    grad_check_with_fault, mlp_new, BatchLoss, HiddenActivation, MlpNetwork, OutputActivation,
    DEFAULT_FD_STEP,
};
use cbalance_core::oracle::{
    brute_force_min_h, jsd_identity_residual, optimal_discriminator, scalar_maximizer,
    scalar_maximizer_grid, DiscreteDist,
};
use cbalance_core::seed::derive_seed;
use cbalance_core::synth::sample_noise;

use crate::run_config::resolve_seed;
use crate::{GradCheckArgs, OracleCheckArgs};

/// Identity and equal-distribution checks hold to near machine precision.
const EXACT_TOL: f64 = 1e-12;
/// A 100_001-point grid has spacing 1e-5; the analytic maximizer must land
/// within one spacing of the grid argmax.
const SCALAR_TOL: f64 = 1e-5;
const SCALAR_GRID_POINTS: usize = 100_001;
/// Backprop vs central differences at the default step.
const GRAD_TOL: f64 = 1e-4;

const LN4: f64 = 1.3862943611198906;

struct CheckRow {
    check: &'static str,
    trials: usize,
    max_residual: f64,
    pass: bool,
}

fn random_dist(k: usize, rng: &mut ChaCha8Rng) -> DiscreteDist {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(1e-6..1.0)).collect();
    DiscreteDist::from_weights(&w).expect("positive weights")
}

pub fn cmd_oracle_check(args: &OracleCheckArgs) -> Result<i32> {
    if args.support_max < 2 {
        anyhow::bail!(cbalance_core::CoreError::usage(
            "support-max must be at least 2"
        ));
    }
    if args.grid_steps < 10 {
        anyhow::bail!(cbalance_core::CoreError::usage(
            "grid-steps must be at least 10"
        ));
    }
    let seed = resolve_seed(args.seed)?;
    let t = args.trials;
    let mut rows = Vec::new();

    // Value of the best discriminator response equals -log4 + twice the
    // Jensen-Shannon divergence, for random pairs on a shared support.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut worst = 0.0f64;
        for _ in 0..t {
            let k = rng.random_range(2..=args.support_max);
            let p = random_dist(k, &mut rng);
            let q = random_dist(k, &mut rng);
            worst = worst.max(jsd_identity_residual(&p, &q)?);
        }
        rows.push(CheckRow {
            check: "jsd_identity",
            trials: t,
            max_residual: worst,
            pass: worst < EXACT_TOL,
        });
    }

    // The ratio discriminator is exactly one half when the two
    // distributions coincide.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let mut worst = 0.0f64;
        for _ in 0..t {
            let k = rng.random_range(2..=args.support_max);
            let p = random_dist(k, &mut rng);
            for d in optimal_discriminator(&p, &p)? {
                worst = worst.max((d - 0.5).abs());
            }
        }
        rows.push(CheckRow {
            check: "dstar_at_equality",
            trials: t,
            max_residual: worst,
            pass: worst < EXACT_TOL,
        });
    }

    // Closed-form pointwise maximizer vs a dense grid search.
    {
        let trials = t.min(200);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let m = rng.random_range(1e-3..1.0);
            let n = rng.random_range(1e-3..1.0);
            let diff =
                (scalar_maximizer(m, n)? - scalar_maximizer_grid(m, n, SCALAR_GRID_POINTS)?).abs();
            worst = worst.max(diff);
        }
        rows.push(CheckRow {
            check: "scalar_maximizer",
            trials,
            max_residual: worst,
            pass: worst <= SCALAR_TOL,
        });
    }

    // Exhaustive simplex search: the minimum sits at the data distribution
    // (within one grid step) with value -log4 up to the grid's resolution.
    for (check, k, cap) in [
        ("global_min_k2", 2usize, 50usize),
        ("global_min_k3", 3, 20),
        ("global_min_k4", 4, 5),
    ] {
        let trials = t.min(cap);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10 + k as u64));
        let step = 1.0 / args.grid_steps as f64;
        // Bound: moving each coordinate by at most one step changes the
        // value by at most 2*ln2 per unit of total variation.
        let value_tol = k as f64 * std::f64::consts::LN_2 * step;
        let mut worst = 0.0f64;
        let mut pass = true;
        for _ in 0..trials {
            let p = random_dist(k, &mut rng);
            let min = brute_force_min_h(&p, args.grid_steps)?;
            let dist = min
                .argmin
                .probs()
                .iter()
                .zip(p.probs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            worst = worst.max(dist);
            pass = pass
                && dist <= step + EXACT_TOL
                && min.min_value + LN4 <= value_tol + EXACT_TOL
                && min.min_value + LN4 >= -EXACT_TOL;
        }
        rows.push(CheckRow {
            check,
            trials,
            max_residual: worst,
            pass,
        });
    }

    println!("check,trials,max_residual,pass");
    let mut all_pass = true;
    for r in &rows {
        println!("{},{},{:.3e},{}", r.check, r.trials, r.max_residual, r.pass);
        all_pass &= r.pass;
    }
    if all_pass {
        Ok(0)
    } else {
        let failing: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check).collect();
        eprintln!("oracle check failed: {}", failing.join(", "));
        Ok(1)
    }
}

/// Every hidden activation combined with every loss that its output
/// activation supports.
fn combos() -> Vec<(HiddenActivation, OutputActivation, &'static str)> {
    let mut all = Vec::new();
    for hidden in [HiddenActivation::Relu, HiddenActivation::Tanh] {
        for loss in [
            "real_log_loss",
            "fake_log_loss",
            "saturating_gen_loss",
            "non_saturating_gen_loss",
            "mean_output",
        ] {
            all.push((hidden, OutputActivation::Sigmoid, loss));
        }
        for loss in ["quadratic", "mean_output"] {
            all.push((hidden, OutputActivation::Identity, loss));
        }
    }
    all
}

fn build_loss(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> BatchLoss {
    match name {
        "real_log_loss" => BatchLoss::BceReal,
        "fake_log_loss" => BatchLoss::BceFake,
        "saturating_gen_loss" => BatchLoss::GenSaturating,
        "non_saturating_gen_loss" => BatchLoss::GenNonSaturating,
        "mean_output" => BatchLoss::MeanOutput,
        "quadratic" => BatchLoss::Quadratic {
            target: sample_noise(rows, cols, rng).expect("target shape"),
        },
        other => unreachable!("unknown loss {other}"),
    }
}

/// Draws an input batch; for piecewise-linear hidden units the batch is
/// redrawn until every hidden pre-activation sits clear of the kink, where
/// central differences would straddle a non-differentiable point.
fn draw_input(
    net: &MlpNetwork,
    rows: usize,
    needs_margin: bool,
    rng: &mut ChaCha8Rng,
) -> cbalance_core::Result<cbalance_core::nn::Matrix> {
    let mut input = sample_noise(rows, net.input_dim(), rng)?;
    if needs_margin {
        for _ in 0..200 {
            if net.hidden_preactivation_margin(&input)? > 1e-3 {
                break;
            }
            input = sample_noise(rows, net.input_dim(), rng)?;
        }
    }
    Ok(input)
}

pub fn cmd_grad_check(args: &GradCheckArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let combos = combos();

    let mut worst = 0.0f64;
    let mut worst_desc = String::from("none");
    for trial in 0..args.trials {
        let (hidden_act, out_act, loss_name) = combos[trial % combos.len()];
        let input_dim = rng.random_range(2..=4);
        let n_hidden = rng.random_range(1..=2);
        let hidden: Vec<usize> = (0..n_hidden).map(|_| rng.random_range(3..=6)).collect();
        let out_cols = match (out_act, loss_name) {
            (OutputActivation::Sigmoid, _) => 1,
            (_, "quadratic") => rng.random_range(1..=2),
            _ => rng.random_range(1..=3),
        };
        let mut sizes = vec![input_dim];
        sizes.extend(&hidden);
        sizes.push(out_cols);
        let net = mlp_new(&sizes, hidden_act, out_act, rng.random())?;

        let rows = rng.random_range(3..=6);
        let input = draw_input(&net, rows, hidden_act == HiddenActivation::Relu, &mut rng)?;
        let loss = build_loss(loss_name, rows, out_cols, &mut rng);

        let fault = if trial == 0 {
            args.fault.as_deref().map(|name| (name, args.fault_delta))
        } else {
            None
        };
        let report = grad_check_with_fault(&net, &loss, &input, DEFAULT_FD_STEP, fault)?;
        if report.max_rel_error > worst {
            worst = report.max_rel_error;
            worst_desc = format!(
                "{} ({:?} hidden, {:?} output, {loss_name}, sizes {sizes:?})",
                report.worst_param, hidden_act, out_act
            );
        }
    }

    println!(
        "grad check: {} nets, max relative error {worst:.3e} at {worst_desc}",
        args.trials
    );
    if worst < GRAD_TOL {
        println!("PASS (tolerance {GRAD_TOL:.0e})");
        Ok(0)
    } else {
        println!("FAIL (tolerance {GRAD_TOL:.0e})");
        Ok(1)
    }
}
