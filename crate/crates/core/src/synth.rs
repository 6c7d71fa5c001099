//! Synthetic potential-outcomes data with a controllable covariate-shift
//! knob.
//!
//! Control units draw covariates from a standard normal; treated units get a
//! mean offset of `shift` on every coordinate, which manufactures exactly
//! the treated/control dissimilarity the adversarial trainer is supposed to
//! remove in representation space. Both potential outcomes are computed
//! noise-free from the covariates so treatment-effect estimates can be
//! scored against exact ground truth; observation noise lands on the factual
//! outcome only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::matrix::Matrix;
use crate::seed::derive_seed;

/// Noise minibatch: shape `(s, noise_dim)`, i.i.d. standard normal entries.
pub type NoiseBatch = Matrix;

const COV_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Ground-truth outcome surfaces with analytically known treatment effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// `Y_t(x) = (1 + t) x1`, so the true effect is `x1`.
    Linear,
    /// `Y_0(x) = x1^2`, `Y_1(x) = x1^2 + 1 + x2`, so the effect is `1 + x2`.
    Quadratic,
}

impl OutcomeSpec {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeSpec::Linear => "linear",
            OutcomeSpec::Quadratic => "quadratic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(OutcomeSpec::Linear),
            "quadratic" => Ok(OutcomeSpec::Quadratic),
            other => Err(CoreError::config(format!(
                "unknown outcome spec '{other}' (expected linear or quadratic)"
            ))),
        }
    }

    fn potential_outcomes(self, x: &[f64]) -> (f64, f64) {
        match self {
            OutcomeSpec::Linear => (x[0], 2.0 * x[0]),
            OutcomeSpec::Quadratic => {
                let base = x[0] * x[0];
                (base, base + 1.0 + x[1])
            }
        }
    }
}

/// Treatment/control sample with hidden ground-truth potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    covariates: Matrix,
    treatment: Vec<u8>,
    y_factual: Vec<f64>,
    y0_true: Vec<f64>,
    y1_true: Vec<f64>,
    shift: f64,
    seed: u64,
}

impl SyntheticDataset {
    /// Validates lengths, finiteness and that both arms are present. The
    /// factual outcome is not forced to equal a potential outcome: with
    /// observation noise it differs by construction (it matches exactly at
    /// `noise_sd = 0`).
    pub fn from_parts(
        covariates: Matrix,
        treatment: Vec<u8>,
        y_factual: Vec<f64>,
        y0_true: Vec<f64>,
        y1_true: Vec<f64>,
        shift: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = covariates.rows();
        if n == 0 || covariates.cols() == 0 {
            return Err(CoreError::config("dataset must be nonempty"));
        }
        if treatment.len() != n || y_factual.len() != n || y0_true.len() != n || y1_true.len() != n
        {
            return Err(CoreError::shape("dataset column lengths differ"));
        }
        if treatment.iter().any(|&t| t > 1) {
            return Err(CoreError::config("treatment indicators must be 0 or 1"));
        }
        if !treatment.contains(&0) || !treatment.contains(&1) {
            return Err(CoreError::config(
                "dataset must contain both treated and control units",
            ));
        }
        if !covariates.is_finite() {
            return Err(CoreError::config("covariates must be finite"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&y_factual) || !finite(&y0_true) || !finite(&y1_true) {
            return Err(CoreError::config("outcomes must be finite"));
        }
        Ok(SyntheticDataset {
            covariates,
            treatment,
            y_factual,
            y0_true,
            y1_true,
            shift,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn y_factual(&self) -> &[f64] {
        &self.y_factual
    }

    pub fn y0_true(&self) -> &[f64] {
        &self.y0_true
    }

    pub fn y1_true(&self) -> &[f64] {
        &self.y1_true
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Covariate rows of treated units.
    pub fn treat_pool(&self) -> Matrix {
        self.pool(1)
    }

    /// Covariate rows of control units (the game's input data pool).
    pub fn control_pool(&self) -> Matrix {
        self.pool(0)
    }

    fn pool(&self, arm: u8) -> Matrix {
        let idx: Vec<usize> = self
            .treatment
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == arm)
            .map(|(i, _)| i)
            .collect();
        self.covariates
            .gather_rows(&idx)
            .expect("indices from enumerate are in range")
    }

    /// Unit-level ground-truth effect `y1_true[i] - y0_true[i]`.
    pub fn true_ite(&self, i: usize) -> Result<f64> {
        if i >= self.n() {
            return Err(CoreError::usage(format!(
                "row index {i} out of range for {} rows",
                self.n()
            )));
        }
        Ok(self.y1_true[i] - self.y0_true[i])
    }
}

/// Generates `n_con` control + `n_treat` treated units (in that row order).
/// Covariates and observation noise come from independent seed-derived
/// streams, so changing `noise_sd` never perturbs the covariates or the
/// ground-truth outcomes.
pub fn gen_synthetic(
    n_treat: usize,
    n_con: usize,
    d: usize,
    shift: f64,
    outcome_spec: OutcomeSpec,
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_treat < 2 || n_con < 2 {
        return Err(CoreError::config(
            "need at least 2 units in each of the treated and control arms",
        ));
    }
    if d == 0 {
        return Err(CoreError::config("covariate dimension must be positive"));
    }
    if outcome_spec == OutcomeSpec::Quadratic && d < 2 {
        return Err(CoreError::config(
            "quadratic outcomes use the second covariate; need d >= 2",
        ));
    }
    if !shift.is_finite() || !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(CoreError::config(
            "shift must be finite and noise_sd finite and nonnegative",
        ));
    }

    let mut cov_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, COV_STREAM));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));

    let n = n_con + n_treat;
    let mut data = Vec::with_capacity(n * d);
    let mut treatment = Vec::with_capacity(n);
    for row in 0..n {
        let treated = row >= n_con;
        treatment.push(u8::from(treated));
        let offset = if treated { shift } else { 0.0 };
        for _ in 0..d {
            let z: f64 = cov_rng.sample(StandardNormal);
            data.push(offset + z);
        }
    }
    let covariates = Matrix::new(n, d, data)?;

    let mut y_factual = Vec::with_capacity(n);
    let mut y0_true = Vec::with_capacity(n);
    let mut y1_true = Vec::with_capacity(n);
    for (i, &ti) in treatment.iter().enumerate() {
        let (y0, y1) = outcome_spec.potential_outcomes(covariates.row(i));
        let selected = if ti == 1 { y1 } else { y0 };
        let z: f64 = noise_rng.sample(StandardNormal);
        y_factual.push(selected + noise_sd * z);
        y0_true.push(y0);
        y1_true.push(y1);
    }

    SyntheticDataset::from_parts(
        covariates, treatment, y_factual, y0_true, y1_true, shift, seed,
    )
}

/// `s` rows drawn uniformly with replacement from `pool`.
pub fn sample_minibatch(pool: &Matrix, s: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if pool.rows() == 0 {
        return Err(CoreError::usage("cannot sample from an empty pool"));
    }
    if s == 0 {
        return Err(CoreError::usage("minibatch size must be at least 1"));
    }
    let idx: Vec<usize> = (0..s).map(|_| rng.random_range(0..pool.rows())).collect();
    pool.gather_rows(&idx)
}

/// `(s, noise_dim)` matrix of i.i.d. standard normal draws.
pub fn sample_noise(s: usize, noise_dim: usize, rng: &mut impl Rng) -> Result<NoiseBatch> {
    if s == 0 || noise_dim == 0 {
        return Err(CoreError::usage("noise batch dimensions must be positive"));
    }
    let data = (0..s * noise_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::new(s, noise_dim, data)
}

/// Writes the dataset as CSV: header `x1,...,xd,t,y,y0_true,y1_true`, one
/// row per unit, floats at 17 significant digits, LF line endings.
pub fn save_dataset(ds: &SyntheticDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 1..=ds.dim() {
        let _ = write!(out, "x{j},");
    }
    out.push_str("t,y,y0_true,y1_true\n");
    for i in 0..ds.n() {
        for &x in ds.covariates.row(i) {
            let _ = write!(out, "{x:.16e},");
        }
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            ds.treatment[i], ds.y_factual[i], ds.y0_true[i], ds.y1_true[i]
        );
    }
    fs::write(path, out).map_err(|e| named_io(path, e))?;
    Ok(())
}

/// Embeds the path in an I/O error so CLI messages name the file.
fn named_io(path: &Path, e: std::io::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Reads a dataset CSV written by `save_dataset`. Round-trips are exact at
/// 64-bit precision. Errors name the offending line or column.
pub fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    let content = fs::read_to_string(path).map_err(|e| named_io(path, e))?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::parse(1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();

    let d = cols.iter().take_while(|c| c.starts_with('x')).count();
    for (j, expected) in (1..=d).map(|j| (j, format!("x{j}"))) {
        if cols[j - 1] != expected {
            return Err(CoreError::parse(
                1,
                format!("expected column '{expected}', found '{}'", cols[j - 1]),
            ));
        }
    }
    if d == 0 {
        return Err(CoreError::parse(1, "missing column 'x1'"));
    }
    for (offset, name) in ["t", "y", "y0_true", "y1_true"].iter().enumerate() {
        match cols.get(d + offset) {
            Some(c) if c == name => {}
            _ => return Err(CoreError::parse(1, format!("missing column '{name}'"))),
        }
    }
    if cols.len() != d + 4 {
        return Err(CoreError::parse(
            1,
            "unexpected extra columns after 'y1_true'",
        ));
    }

    let mut data = Vec::new();
    let mut treatment = Vec::new();
    let (mut y_factual, mut y0_true, mut y1_true) = (Vec::new(), Vec::new(), Vec::new());
    let mut n_lines = 1;
    for (idx, line) in lines {
        let line_no = idx + 1;
        n_lines = line_no;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 4 {
            return Err(CoreError::parse(
                line_no,
                format!("expected {} fields, found {}", d + 4, fields.len()),
            ));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| CoreError::parse(line_no, format!("bad value '{s}'")))
        };
        for f in &fields[..d] {
            data.push(parse_f(f)?);
        }
        treatment.push(match fields[d] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(CoreError::parse(
                    line_no,
                    format!("treatment must be 0 or 1, found '{other}'"),
                ))
            }
        });
        y_factual.push(parse_f(fields[d + 1])?);
        y0_true.push(parse_f(fields[d + 2])?);
        y1_true.push(parse_f(fields[d + 3])?);
    }
    if treatment.is_empty() {
        return Err(CoreError::parse(n_lines, "no data rows"));
    }

    let n = treatment.len();
    let covariates =
        Matrix::new(n, d, data).map_err(|e| CoreError::parse(n_lines, e.to_string()))?;
    SyntheticDataset::from_parts(covariates, treatment, y_factual, y0_true, y1_true, 0.0, 0)
        .map_err(|e| CoreError::parse(n_lines, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::kahan_mean;

    fn col_mean(m: &Matrix, j: usize) -> f64 {
        kahan_mean((0..m.rows()).map(|i| m.get(i, j)))
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(50, 50, 3, 1.0, OutcomeSpec::Linear, 0.1, 7).unwrap();
        let b = gen_synthetic(50, 50, 3, 1.0, OutcomeSpec::Linear, 0.1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_moves_treated_mean() {
        let ds = gen_synthetic(10_000, 10_000, 1, 2.0, OutcomeSpec::Linear, 0.0, 3).unwrap();
        let diff = col_mean(&ds.treat_pool(), 0) - col_mean(&ds.control_pool(), 0);
        assert!((1.9..=2.1).contains(&diff), "diff {diff}");
    }

    #[test]
    fn zero_shift_pools_match_in_mean() {
        let ds = gen_synthetic(10_000, 10_000, 2, 0.0, OutcomeSpec::Linear, 0.0, 11).unwrap();
        for j in 0..2 {
            let diff = col_mean(&ds.treat_pool(), j) - col_mean(&ds.control_pool(), j);
            assert!(diff.abs() < 0.1, "coordinate {j}: diff {diff}");
        }
    }

    #[test]
    fn factual_outcome_matches_potential_outcome_without_noise() {
        let ds = gen_synthetic(100, 100, 2, 1.5, OutcomeSpec::Quadratic, 0.0, 5).unwrap();
        for i in 0..ds.n() {
            let expected = if ds.treatment()[i] == 1 {
                ds.y1_true()[i]
            } else {
                ds.y0_true()[i]
            };
            assert_eq!(ds.y_factual()[i], expected);
        }
    }

    #[test]
    fn ground_truth_is_independent_of_observation_noise() {
        let quiet = gen_synthetic(200, 200, 2, 1.0, OutcomeSpec::Quadratic, 0.0, 9).unwrap();
        let noisy = gen_synthetic(200, 200, 2, 1.0, OutcomeSpec::Quadratic, 2.5, 9).unwrap();
        assert_eq!(quiet.covariates(), noisy.covariates());
        assert_eq!(quiet.y0_true(), noisy.y0_true());
        assert_eq!(quiet.y1_true(), noisy.y1_true());
        assert_ne!(quiet.y_factual(), noisy.y_factual());
    }

    #[test]
    fn linear_effect_is_first_covariate() {
        let ds = gen_synthetic(20, 20, 2, 0.5, OutcomeSpec::Linear, 0.0, 1).unwrap();
        for i in 0..ds.n() {
            assert_eq!(ds.true_ite(i).unwrap(), ds.covariates().get(i, 0));
        }
    }

    #[test]
    fn quadratic_effect_at_origin_is_one() {
        let covariates = Matrix::new(2, 2, vec![0.0, 0.0, 1.0, 3.0]).unwrap();
        let ds = SyntheticDataset::from_parts(
            covariates,
            vec![0, 1],
            vec![0.0, 5.0],
            vec![0.0, 1.0],
            vec![1.0, 5.0],
            0.0,
            0,
        )
        .unwrap();
        assert_eq!(ds.true_ite(0).unwrap(), 1.0);
        assert_eq!(ds.true_ite(1).unwrap(), 4.0);
        assert!(ds.true_ite(2).is_err());
    }

    #[test]
    fn generation_preconditions() {
        assert!(gen_synthetic(1, 50, 2, 0.0, OutcomeSpec::Linear, 0.0, 0).is_err());
        assert!(gen_synthetic(50, 0, 2, 0.0, OutcomeSpec::Linear, 0.0, 0).is_err());
        assert!(gen_synthetic(50, 50, 0, 0.0, OutcomeSpec::Linear, 0.0, 0).is_err());
        assert!(gen_synthetic(50, 50, 1, 0.0, OutcomeSpec::Quadratic, 0.0, 0).is_err());
        assert!(gen_synthetic(50, 50, 2, 0.0, OutcomeSpec::Linear, -0.1, 0).is_err());
    }

    #[test]
    fn minibatch_from_single_row_pool_repeats_it() {
        let pool = Matrix::new(1, 2, vec![3.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_minibatch(&pool, 4, &mut rng).unwrap();
        assert_eq!(batch.rows(), 4);
        for i in 0..4 {
            assert_eq!(batch.row(i), pool.row(0));
        }
    }

    #[test]
    fn minibatch_usage_errors() {
        let pool = Matrix::new(1, 1, vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_minibatch(&pool, 0, &mut rng),
            Err(CoreError::Usage(_))
        ));
        let empty = Matrix::zeros(0, 1);
        assert!(matches!(
            sample_minibatch(&empty, 1, &mut rng),
            Err(CoreError::Usage(_))
        ));
    }

    #[test]
    fn minibatch_two_point_pool_is_roughly_balanced() {
        let pool = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = sample_minibatch(&pool, 10_000, &mut rng).unwrap();
        let frac_b = kahan_mean(batch.data().iter().copied());
        assert!((0.45..=0.55).contains(&frac_b), "fraction {frac_b}");
    }

    #[test]
    fn noise_moments_are_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = sample_noise(10_000, 1, &mut rng).unwrap();
        let mean = kahan_mean(noise.data().iter().copied());
        let var = kahan_mean(noise.data().iter().map(|&z| (z - mean) * (z - mean)));
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.95..=1.05).contains(&var.sqrt()), "sd {}", var.sqrt());
    }

    #[test]
    fn noise_shape_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let na = sample_noise(5, 3, &mut a).unwrap();
        let nb = sample_noise(5, 3, &mut b).unwrap();
        assert_eq!(na, nb);
        assert_eq!((na.rows(), na.cols()), (5, 3));
        assert!(sample_noise(0, 3, &mut a).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gen_synthetic(30, 40, 3, 1.7, OutcomeSpec::Quadratic, 0.3, 21).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.covariates(), ds.covariates());
        assert_eq!(loaded.treatment(), ds.treatment());
        assert_eq!(loaded.y_factual(), ds.y_factual());
        assert_eq!(loaded.y0_true(), ds.y0_true());
        assert_eq!(loaded.y1_true(), ds.y1_true());
    }

    #[test]
    fn csv_header_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gen_synthetic(500, 500, 2, 2.0, OutcomeSpec::Linear, 0.0, 1).unwrap();
        save_dataset(&ds, &path).unwrap();
        let content = fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 1001);
        assert!(content.starts_with("x1,x2,t,y,y0_true,y1_true\n"));
        assert!(!content.contains('\r'));
    }

    #[test]
    fn load_errors_name_missing_columns_and_lines() {
        let dir = tempfile::tempdir().unwrap();

        let p1 = dir.path().join("missing.csv");
        fs::write(&p1, "x1,t,y,y0_true\n1.0,0,1.0,1.0\n").unwrap();
        match load_dataset(&p1) {
            Err(CoreError::Parse { line: 1, msg }) => assert!(msg.contains("y1_true")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let p2 = dir.path().join("empty.csv");
        fs::write(&p2, "x1,t,y,y0_true,y1_true\n").unwrap();
        match load_dataset(&p2) {
            Err(CoreError::Parse { msg, .. }) => assert!(msg.contains("no data rows")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let p3 = dir.path().join("short_row.csv");
        fs::write(
            &p3,
            "x1,t,y,y0_true,y1_true\n1.0,0,1.0,1.0,1.0\n2.0,1,2.0\n",
        )
        .unwrap();
        match load_dataset(&p3) {
            Err(CoreError::Parse { line: 3, msg }) => assert!(msg.contains("fields")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let p4 = dir.path().join("bad_t.csv");
        fs::write(&p4, "x1,t,y,y0_true,y1_true\n1.0,2,1.0,1.0,1.0\n").unwrap();
        assert!(matches!(
            load_dataset(&p4),
            Err(CoreError::Parse { line: 2, .. })
        ));
    }
}
