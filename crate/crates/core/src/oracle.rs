//! Exact finite-support verification of the adversarial game's equilibrium
//! theory.
//!
//! Over discrete distributions every quantity in the minimax analysis has a
//! closed form: the optimal discriminator is a pointwise ratio, the maximized
//! value functional decomposes into `-log 4 + 2 * JSD`, and the global
//! minimum sits exactly at `p_g = p_data`. This module computes those
//! quantities directly so the identities can be checked to 1e-12 and the
//! minimum located by exhaustive simplex enumeration.
//!
//! Conventions: natural log everywhere; `0 * log 0 = 0`; KL returns infinity
//! on absolute-continuity failure. JSD never hits the infinite branch because
//! the mixture dominates both arguments.

use crate::error::{CoreError, Result};
use crate::nn::matrix::kahan_sum;

/// `|sum(probs) - 1|` must stay within this bound.
pub const DIST_SUM_TOL: f64 = 1e-12;

/// Probability vector over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CoreError::shape("distribution over empty support"));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(CoreError::config(
                "probabilities must be finite and nonnegative",
            ));
        }
        let sum = kahan_sum(probs.iter().copied());
        if (sum - 1.0).abs() > DIST_SUM_TOL {
            return Err(CoreError::config(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalizes nonnegative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::shape("distribution over empty support"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(CoreError::config("weights must be finite and nonnegative"));
        }
        let total = kahan_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(CoreError::config("weights sum to zero"));
        }
        DiscreteDist::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        DiscreteDist::new(vec![1.0 / k as f64; k.max(1)])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(CoreError::shape(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// Kullback-Leibler divergence in nats; infinity when `p` puts mass where
/// `q` has none.
pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    check_same_support(p, q)?;
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(pi * (pi / qi).ln());
    }
    Ok(kahan_sum(terms))
}

/// Jensen-Shannon divergence in nats: `(KL(p||m) + KL(q||m)) / 2` with `m`
/// the equal mixture. Always finite, symmetric, in `[0, log 2]`.
pub fn jsd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    check_same_support(p, q)?;
    let m = DiscreteDist::new(
        p.probs()
            .iter()
            .zip(q.probs())
            .map(|(&pi, &qi)| 0.5 * (pi + qi))
            .collect(),
    )?;
    Ok(0.5 * kl(p, &m)? + 0.5 * kl(q, &m)?)
}

/// Pointwise best response of the discriminator:
/// `D*_i = p_data_i / (p_data_i + p_g_i)`, 0.5 where both masses vanish.
pub fn optimal_discriminator(p_data: &DiscreteDist, p_g: &DiscreteDist) -> Result<Vec<f64>> {
    check_same_support(p_data, p_g)?;
    Ok(p_data
        .probs()
        .iter()
        .zip(p_g.probs())
        .map(|(&pd, &pg)| if pd + pg == 0.0 { 0.5 } else { pd / (pd + pg) })
        .collect())
}

/// The generator's criterion after maximizing out the discriminator:
/// `sum_i [p_data_i log D*_i + p_g_i log(1 - D*_i)]` with `0 log 0 = 0`.
///
/// `1 - D*_i` is computed as `p_g_i / (p_data_i + p_g_i)` directly, which is
/// exact at equal masses and keeps the identity checks at 1e-12.
pub fn h_of_g(p_data: &DiscreteDist, p_g: &DiscreteDist) -> Result<f64> {
    check_same_support(p_data, p_g)?;
    let mut terms = Vec::with_capacity(2 * p_data.len());
    for (&pd, &pg) in p_data.probs().iter().zip(p_g.probs()) {
        let total = pd + pg;
        if pd > 0.0 {
            terms.push(pd * (pd / total).ln());
        }
        if pg > 0.0 {
            terms.push(pg * (pg / total).ln());
        }
    }
    Ok(kahan_sum(terms))
}

/// Residual of the closed-form identity
/// `h_of_g(p_data, p_g) = -log 4 + 2 * jsd(p_data, p_g)`; zero in exact
/// arithmetic for every pair of distributions.
pub fn jsd_identity_residual(p_data: &DiscreteDist, p_g: &DiscreteDist) -> Result<f64> {
    let lhs = h_of_g(p_data, p_g)?;
    let rhs = -(4.0f64.ln()) + 2.0 * jsd(p_data, p_g)?;
    Ok((lhs - rhs).abs())
}

/// Argmax over `[0, 1]` of `f -> m log f + n log(1 - f)`: the closed form
/// `m / (m + n)`, defined for nonnegative `(m, n) != (0, 0)`.
pub fn scalar_maximizer(m: f64, n: f64) -> Result<f64> {
    if !m.is_finite() || !n.is_finite() || m < 0.0 || n < 0.0 {
        return Err(CoreError::usage(
            "coefficients must be finite and nonnegative",
        ));
    }
    if m == 0.0 && n == 0.0 {
        return Err(CoreError::usage("coefficients must not both be zero"));
    }
    Ok(m / (m + n))
}

/// Grid argmax of the same objective over `grid_points` evenly spaced
/// interior points, plus the boundary points where the objective stays
/// finite under the `0 log 0 = 0` convention.
pub fn scalar_maximizer_grid(m: f64, n: f64, grid_points: usize) -> Result<f64> {
    scalar_maximizer(m, n)?;
    if grid_points < 2 {
        return Err(CoreError::usage("need at least 2 grid points"));
    }
    let objective = |f: f64| -> f64 {
        let real = if m == 0.0 { 0.0 } else { m * f.ln() };
        let fake = if n == 0.0 { 0.0 } else { n * (1.0 - f).ln() };
        real + fake
    };
    let mut best_f = f64::NAN;
    let mut best_v = f64::NEG_INFINITY;
    let mut consider = |f: f64| {
        let v = objective(f);
        if v > best_v {
            best_v = v;
            best_f = f;
        }
    };
    if m == 0.0 {
        consider(0.0);
    }
    if n == 0.0 {
        consider(1.0);
    }
    for i in 1..grid_points {
        consider(i as f64 / grid_points as f64);
    }
    Ok(best_f)
}

/// Result of exhaustive simplex minimization of `h_of_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub argmin: DiscreteDist,
    pub min_value: f64,
    pub n_evaluated: usize,
}

/// Rounds `p` onto the grid of distributions with components that are
/// multiples of `1/grid_steps`, by largest remainder.
pub fn nearest_grid_point(p: &DiscreteDist, grid_steps: usize) -> Result<DiscreteDist> {
    if grid_steps == 0 {
        return Err(CoreError::usage("grid_steps must be positive"));
    }
    let g = grid_steps as f64;
    let mut counts: Vec<usize> = p
        .probs()
        .iter()
        .map(|&pi| (pi * g).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = p
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &pi)| (i, pi * g - (pi * g).floor()))
        .collect();
    let assigned: usize = counts.iter().sum();
    let missing = grid_steps.saturating_sub(assigned);
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(missing) {
        counts[i] += 1;
    }
    DiscreteDist::new(counts.iter().map(|&c| c as f64 / g).collect())
}

/// Enumerates every distribution on the `1/grid_steps` simplex grid and
/// returns the minimizer of `h_of_g(p_data, .)`. Ties break to the
/// lexicographically smallest grid point. The theory predicts the argmin
/// lands within one grid step of `p_data` with value near `-log 4`.
pub fn brute_force_min_h(p_data: &DiscreteDist, grid_steps: usize) -> Result<GridMinimum> {
    let k = p_data.len();
    if k > 4 {
        return Err(CoreError::usage(format!(
            "support size {k} too large for exhaustive enumeration (max 4)"
        )));
    }
    if grid_steps < 10 {
        return Err(CoreError::usage("grid_steps must be at least 10"));
    }
    let g = grid_steps as f64;
    let mut counts = vec![0usize; k];
    let mut best: Option<GridMinimum> = None;
    let mut n_evaluated = 0usize;

    // Lexicographic enumeration of compositions of grid_steps into k parts;
    // strict improvement keeps the first (lexicographically smallest) argmin.
    fn walk(
        counts: &mut Vec<usize>,
        pos: usize,
        remaining: usize,
        g: f64,
        p_data: &DiscreteDist,
        best: &mut Option<GridMinimum>,
        n_evaluated: &mut usize,
    ) -> Result<()> {
        if pos == counts.len() - 1 {
            counts[pos] = remaining;
            let q = DiscreteDist::new(counts.iter().map(|&c| c as f64 / g).collect())?;
            let value = h_of_g(p_data, &q)?;
            *n_evaluated += 1;
            let improves = best.as_ref().is_none_or(|b| value < b.min_value);
            if improves {
                *best = Some(GridMinimum {
                    argmin: q,
                    min_value: value,
                    n_evaluated: 0,
                });
            }
            return Ok(());
        }
        for c in 0..=remaining {
            counts[pos] = c;
            walk(counts, pos + 1, remaining - c, g, p_data, best, n_evaluated)?;
        }
        Ok(())
    }

    walk(
        &mut counts,
        0,
        grid_steps,
        g,
        p_data,
        &mut best,
        &mut n_evaluated,
    )?;
    let mut result = best.expect("grid is nonempty");
    result.n_evaluated = n_evaluated;
    Ok(result)
}
