//! Dense row-major matrix, the sole numeric container for batches, weights
//! and gradients.

use crate::error::{CoreError, Result};

/// A dense 2-D array of `f64` in row-major order.
///
/// Invariant: `data.len() == rows * cols`. Entries may be non-finite so an
/// exploding computation can flow to the trainer's divergence guard instead
/// of failing mid-pass; boundaries that must reject non-finite input
/// (datasets, checkpoints) check `is_finite` explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating the shape.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(CoreError::shape("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(n, d, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other^T` where `other` has shape `(m, cols)`; result `(rows, m)`.
    ///
    /// This is the layout used by layer forward passes: activations `(s, in)`
    /// times weights `(out, in)` gives `(s, out)`.
    pub fn mul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CoreError::shape(format!(
                "inner dims differ: {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                let mut sum = 0.0;
                for k in 0..self.cols {
                    sum += a[k] * b[k];
                }
                out.data[i * out.cols + j] = sum;
            }
        }
        Ok(out)
    }

    /// Column-wise concatenation: `[self | other]`, same row count.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(CoreError::shape(format!(
                "row counts differ: {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix::new(self.rows, cols, data)
    }

    /// Row-wise stacking: `[self; other]`, same column count.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CoreError::shape(format!(
                "column counts differ: {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix::new(self.rows + other.rows, self.cols, data)
    }

    /// Copies the column block `[from, to)` into a new matrix.
    pub fn col_block(&self, from: usize, to: usize) -> Result<Matrix> {
        if from > to || to > self.cols {
            return Err(CoreError::shape(format!(
                "column block {}..{} out of range for {} cols",
                from, to, self.cols
            )));
        }
        let cols = to - from;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[from..to]);
        }
        Matrix::new(self.rows, cols, data)
    }

    /// Copies the row block `[from, to)` into a new matrix.
    pub fn row_block(&self, from: usize, to: usize) -> Result<Matrix> {
        if from > to || to > self.rows {
            return Err(CoreError::shape(format!(
                "row block {}..{} out of range for {} rows",
                from, to, self.rows
            )));
        }
        let data = self.data[from * self.cols..to * self.cols].to_vec();
        Matrix::new(to - from, self.cols, data)
    }

    /// Gathers rows by index (duplicates allowed) into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(CoreError::usage(format!(
                    "row index {} out of range for {} rows",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean of each column.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        if self.rows == 0 {
            return means;
        }
        for r in 0..self.rows {
            for (c, m) in means.iter_mut().enumerate() {
                *m += self.get(r, c);
            }
        }
        for m in &mut means {
            *m /= self.rows as f64;
        }
        means
    }
}

/// Compensated (Kahan) summation; keeps mean-of-constant exact and batch
/// means stable to ~1 ulp.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

pub fn kahan_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    let mut n = 0usize;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Matrix::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn non_finite_entries_are_carried_and_reported() {
        let m = Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(!m.is_finite());
        assert!(Matrix::new(1, 2, vec![1.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn mul_transposed_hand_value() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]] (as rows of b^T columns)
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::new(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        // a * b^T = [[1*5+2*6, 1*7+2*8], [3*5+4*6, 3*7+4*8]]
        let c = a.mul_transposed(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn concat_and_blocks_roundtrip() {
        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.hconcat(&b).unwrap();
        assert_eq!(c.cols(), 3);
        assert_eq!(c.col_block(0, 1).unwrap(), a);
        assert_eq!(c.col_block(1, 3).unwrap(), b);

        let d = a.vstack(&a).unwrap();
        assert_eq!(d.rows(), 4);
        assert_eq!(d.row_block(2, 4).unwrap(), a);
    }

    #[test]
    fn gather_rows_duplicates() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = a.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(g.data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        assert!(a.gather_rows(&[2]).is_err());
    }

    #[test]
    fn kahan_mean_of_constant_is_exact() {
        let l = 0.5_f64.ln();
        for n in [3, 64, 100, 1000, 10_000] {
            let xs = vec![l; n];
            assert_eq!(kahan_mean(xs), l, "n = {n}");
        }
    }
}
