//! Central finite-difference verification of analytic gradients.
//!
//! Every weight and bias is perturbed by `+/- step` in turn, the batch loss
//! is re-evaluated through a pure forward pass, and the two-sided slope is
//! compared against the gradient from `backward`. The relative error uses a
//! denominator floor of 1 so near-zero gradients are compared absolutely.

use crate::error::{CoreError, Result};
use crate::nn::loss::BatchLoss;
use crate::nn::matrix::Matrix;
use crate::nn::mlp::MlpNetwork;

/// Default perturbation: truncation and roundoff error are both far below
/// the comparison tolerances at this step size.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter where the maximum occurred, e.g. `w0[2,1]` or `b1[0]`.
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub n_params: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compares backpropagated gradients with central finite differences.
pub fn grad_check(
    net: &MlpNetwork,
    loss: &BatchLoss,
    input: &Matrix,
    step: f64,
) -> Result<GradCheckReport> {
    grad_check_with_fault(net, loss, input, step, None)
}

/// Like `grad_check`, but optionally adds `delta` to one named analytic
/// gradient entry before comparing. A correct checker must then report a
/// large error at exactly that parameter; this exercises the harness itself.
pub fn grad_check_with_fault(
    net: &MlpNetwork,
    loss: &BatchLoss,
    input: &Matrix,
    step: f64,
    fault: Option<(&str, f64)>,
) -> Result<GradCheckReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(CoreError::config("finite-difference step must be positive"));
    }

    let mut work = net.clone();
    let output = work.forward(input)?;
    let upstream = loss.upstream(&output)?;
    let (mut grads, _) = work.backward(&upstream)?;

    if let Some((name, delta)) = fault {
        apply_fault(&mut grads.weights, &mut grads.biases, name, delta)?;
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        n_params: 0,
    };

    let n_layers = work.n_layers();
    for l in 0..n_layers {
        let (rows, cols) = (work.weights()[l].rows(), work.weights()[l].cols());
        for r in 0..rows {
            for c in 0..cols {
                let analytic = grads.weights[l].get(r, c);
                let numeric = fd_weight(&mut work, loss, input, step, l, r, c)?;
                record(&mut report, format!("w{l}[{r},{c}]"), analytic, numeric);
            }
        }
        for i in 0..work.biases()[l].len() {
            let analytic = grads.biases[l][i];
            let numeric = fd_bias(&mut work, loss, input, step, l, i)?;
            record(&mut report, format!("b{l}[{i}]"), analytic, numeric);
        }
    }
    Ok(report)
}

fn record(report: &mut GradCheckReport, name: String, analytic: f64, numeric: f64) {
    report.n_params += 1;
    let err = rel_error(analytic, numeric);
    if err >= report.max_rel_error {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
    }
}

fn fd_weight(
    net: &mut MlpNetwork,
    loss: &BatchLoss,
    input: &Matrix,
    step: f64,
    l: usize,
    r: usize,
    c: usize,
) -> Result<f64> {
    let orig = net.weights()[l].get(r, c);
    net.weights_mut()[l].set(r, c, orig + step);
    let plus = loss.value(&net.predict(input)?)?;
    net.weights_mut()[l].set(r, c, orig - step);
    let minus = loss.value(&net.predict(input)?)?;
    net.weights_mut()[l].set(r, c, orig);
    Ok((plus - minus) / (2.0 * step))
}

fn fd_bias(
    net: &mut MlpNetwork,
    loss: &BatchLoss,
    input: &Matrix,
    step: f64,
    l: usize,
    i: usize,
) -> Result<f64> {
    let orig = net.biases()[l][i];
    net.biases_mut()[l][i] = orig + step;
    let plus = loss.value(&net.predict(input)?)?;
    net.biases_mut()[l][i] = orig - step;
    let minus = loss.value(&net.predict(input)?)?;
    net.biases_mut()[l][i] = orig;
    Ok((plus - minus) / (2.0 * step))
}

fn apply_fault(
    weights: &mut [Matrix],
    biases: &mut [Vec<f64>],
    name: &str,
    delta: f64,
) -> Result<()> {
    let parse = || -> Option<(char, usize, Vec<usize>)> {
        let kind = name.chars().next()?;
        let rest = &name[1..];
        let bracket = rest.find('[')?;
        let layer: usize = rest[..bracket].parse().ok()?;
        let idx_str = rest[bracket + 1..].strip_suffix(']')?;
        let idx: Vec<usize> = idx_str
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<Vec<usize>>>()?;
        Some((kind, layer, idx))
    };
    let bad = || CoreError::usage(format!("no parameter named '{name}'"));
    match parse() {
        Some(('w', l, idx)) if idx.len() == 2 => {
            let w = weights.get_mut(l).ok_or_else(bad)?;
            if idx[0] >= w.rows() || idx[1] >= w.cols() {
                return Err(bad());
            }
            let v = w.get(idx[0], idx[1]) + delta;
            w.set(idx[0], idx[1], v);
            Ok(())
        }
        Some(('b', l, idx)) if idx.len() == 1 => {
            let b = biases.get_mut(l).ok_or_else(bad)?;
            let slot = b.get_mut(idx[0]).ok_or_else(bad)?;
            *slot += delta;
            Ok(())
        }
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{mlp_new, HiddenActivation, OutputActivation};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn linear_net_quadratic_loss_is_near_exact() {
        let net = mlp_new(
            &[3, 1],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
            11,
        )
        .unwrap();
        let input = random_batch(4, 3, 1);
        let target = random_batch(4, 1, 2);
        let loss = BatchLoss::Quadratic { target };
        let report = grad_check(&net, &loss, &input, DEFAULT_FD_STEP).unwrap();
        assert!(
            report.max_rel_error < 1e-7,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
        assert_eq!(report.n_params, 4);
    }

    #[test]
    fn deep_tanh_sigmoid_net_all_probability_losses() {
        let net = mlp_new(
            &[4, 8, 6, 1],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
            21,
        )
        .unwrap();
        let input = random_batch(8, 4, 3);
        for loss in [
            BatchLoss::BceReal,
            BatchLoss::BceFake,
            BatchLoss::GenSaturating,
            BatchLoss::GenNonSaturating,
        ] {
            let report = grad_check(&net, &loss, &input, DEFAULT_FD_STEP).unwrap();
            assert!(
                report.max_rel_error < 1e-6,
                "{loss:?}: max rel error {} at {}",
                report.max_rel_error,
                report.worst_param
            );
        }
    }

    #[test]
    fn relu_net_checks_cleanly_away_from_the_kink() {
        let net = mlp_new(
            &[3, 10, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
            5,
        )
        .unwrap();
        let mut seed = 100;
        let input = loop {
            let candidate = random_batch(6, 3, seed);
            if net.hidden_preactivation_margin(&candidate).unwrap() > 1e-3 {
                break candidate;
            }
            seed += 1;
        };
        let report = grad_check(&net, &BatchLoss::BceReal, &input, DEFAULT_FD_STEP).unwrap();
        assert!(
            report.max_rel_error < 1e-5,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn injected_fault_is_detected_at_the_right_parameter() {
        let net = mlp_new(
            &[2, 3, 1],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
            8,
        )
        .unwrap();
        let input = random_batch(5, 2, 4);
        let clean = grad_check(&net, &BatchLoss::BceReal, &input, DEFAULT_FD_STEP).unwrap();
        let faulty = grad_check_with_fault(
            &net,
            &BatchLoss::BceReal,
            &input,
            DEFAULT_FD_STEP,
            Some(("w0[1,0]", 0.5)),
        )
        .unwrap();
        assert!(faulty.max_rel_error > 0.01);
        assert!(faulty.max_rel_error > 100.0 * clean.max_rel_error);
        assert_eq!(faulty.worst_param, "w0[1,0]");
    }

    #[test]
    fn fault_on_unknown_parameter_is_a_usage_error() {
        let net = mlp_new(
            &[2, 1],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
            8,
        )
        .unwrap();
        let input = random_batch(2, 2, 4);
        for name in ["w5[0,0]", "b0[9]", "q0[0]", "w0[0]", "nonsense"] {
            let res = grad_check_with_fault(
                &net,
                &BatchLoss::BceReal,
                &input,
                DEFAULT_FD_STEP,
                Some((name, 0.5)),
            );
            assert!(matches!(res, Err(CoreError::Usage(_))), "name {name}");
        }
    }

    #[test]
    fn non_positive_step_is_a_config_error() {
        let net = mlp_new(
            &[2, 1],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
            8,
        )
        .unwrap();
        let input = random_batch(2, 2, 4);
        for step in [0.0, -1e-5, f64::NAN] {
            assert!(matches!(
                grad_check(&net, &BatchLoss::MeanOutput, &input, step),
                Err(CoreError::Config(_))
            ));
        }
    }
}
