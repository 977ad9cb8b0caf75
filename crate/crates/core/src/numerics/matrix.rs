//! Row-major dense matrix with f32 storage and f64 accumulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix. `data.len() == rows * cols` always holds; public
/// kernels keep every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Row count below which matmul stays single-threaded.
const PAR_ROW_THRESHOLD: usize = 64;

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Standard product `self * b`. Accumulates each output element in f64
    /// with a fixed reduction order, so results are deterministic and
    /// independent of the rayon worker count.
    pub fn matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, b.cols);
        let cols = b.cols;
        let inner = self.cols;
        let work = |(i, out_row): (usize, &mut [f32])| {
            let a_row = self.row(i);
            let mut acc = vec![0.0f64; cols];
            for (k, &a) in a_row.iter().enumerate().take(inner) {
                if a == 0.0 {
                    continue;
                }
                let a = a as f64;
                let b_row = b.row(k);
                for (j, &bv) in b_row.iter().enumerate() {
                    acc[j] += a * bv as f64;
                }
            }
            for (o, &v) in out_row.iter_mut().zip(acc.iter()) {
                *o = v as f32;
            }
        };
        if self.rows >= PAR_ROW_THRESHOLD {
            out.data
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| work((i, row)));
        } else {
            for (i, row) in out.data.chunks_mut(cols).enumerate() {
                work((i, row));
            }
        }
        Ok(out)
    }

    /// `self * b^T`: rows of `b` are dotted against rows of `self`. This is
    /// the cache-friendly form for `Q K^T` and torch-layout linear weights.
    pub fn matmul_transb(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.cols {
            return Err(Error::Shape(format!(
                "matmul_transb {}x{} * ({}x{})^T",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, b.rows);
        let out_cols = b.rows;
        let work = |(i, out_row): (usize, &mut [f32])| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = b.row(j);
                let mut acc = 0.0f64;
                for (x, y) in a_row.iter().zip(b_row.iter()) {
                    acc += *x as f64 * *y as f64;
                }
                *o = acc as f32;
            }
        };
        if self.rows >= PAR_ROW_THRESHOLD {
            out.data
                .par_chunks_mut(out_cols)
                .enumerate()
                .for_each(|(i, row)| work((i, row)));
        } else {
            for (i, row) in out.data.chunks_mut(out_cols).enumerate() {
                work((i, row));
            }
        }
        Ok(out)
    }

    /// Torch-layout linear: weights are (out, in), applied as `x W^T + b`.
    pub fn linear(&self, weight: &DenseMatrix, bias: Option<&[f32]>) -> Result<DenseMatrix> {
        let mut out = self.matmul_transb(weight)?;
        if let Some(bias) = bias {
            if bias.len() != out.cols {
                return Err(Error::Shape(format!(
                    "bias length {} vs {} outputs",
                    bias.len(),
                    out.cols
                )));
            }
            for r in 0..out.rows {
                for (o, &b) in out.row_mut(r).iter_mut().zip(bias.iter()) {
                    *o += b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("add_assign shape mismatch".into()));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Copy of the square block `[r0..r0+n) x [c0..c0+n)`.
    pub fn sub_square(&self, r0: usize, c0: usize, n: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let src = &self.row(r0 + i)[c0..c0 + n];
            out.row_mut(i).copy_from_slice(src);
        }
        out
    }

    /// Copy of the row range `[r0..r0+count)`.
    pub fn sub_rows(&self, r0: usize, count: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(count, self.cols);
        for i in 0..count {
            out.row_mut(i).copy_from_slice(self.row(r0 + i));
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&v| v as f64).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(i).iter()) {
                *s += v as f64;
            }
        }
        sums
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f32 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite values in {what}")))
        }
    }

    /// Max row-sum deviation from 1; the row-stochastic contract check.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.row_sums()
            .iter()
            .fold(0.0f64, |m, s| m.max((s - 1.0).abs()))
    }

    /// Entrywise mean of a set of equally shaped matrices.
    pub fn mean_of(mats: &[DenseMatrix]) -> Result<DenseMatrix> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Parameter("mean_of: empty input".into()))?;
        let mut acc = vec![0.0f64; first.data.len()];
        for m in mats {
            if m.rows != first.rows || m.cols != first.cols {
                return Err(Error::Shape("mean_of shape mismatch".into()));
            }
            for (a, &v) in acc.iter_mut().zip(m.data.iter()) {
                *a += v as f64;
            }
        }
        let inv = 1.0 / mats.len() as f64;
        Ok(DenseMatrix {
            rows: first.rows,
            cols: first.cols,
            data: acc.iter().map(|&v| (v * inv) as f32).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix_is_matrix() {
        let m = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let id = DenseMatrix::identity(3);
        let out = id.matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn hand_evaluated_product() {
        let a = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseMatrix::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn zero_times_matrix_is_zero() {
        let z = DenseMatrix::zeros(2, 3);
        let m = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f32);
        let out = z.matmul(&m).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_transb_matches_explicit_transpose() {
        let a = DenseMatrix::from_fn(3, 4, |i, j| (i as f32 + 1.0) * 0.3 - j as f32 * 0.7);
        let b = DenseMatrix::from_fn(5, 4, |i, j| (i * j) as f32 * 0.11 - 0.2);
        let via_t = a.matmul(&b.transpose()).unwrap();
        let direct = a.matmul_transb(&b).unwrap();
        assert!(via_t.max_abs_diff(&direct) < 1e-6);
    }

    /// Naive triple-loop oracle, independent of the production reduction.
    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0f64;
                for k in 0..a.cols() {
                    acc += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
                out.set(i, j, acc as f32);
            }
        }
        out
    }

    #[test]
    fn matmul_agrees_with_naive_oracle() {
        let mut seed = 0x2545F491u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 40) as f32 / 16777216.0 - 0.5
        };
        for &(m, k, n) in &[(5usize, 7usize, 3usize), (64, 64, 64), (33, 17, 29)] {
            let a = DenseMatrix::from_fn(m, k, |_, _| next());
            let b = DenseMatrix::from_fn(k, n, |_, _| next());
            let fast = a.matmul(&b).unwrap();
            let slow = naive_matmul(&a, &b);
            let scale = slow.max_abs().max(1.0);
            assert!(fast.max_abs_diff(&slow) / scale < 1e-5);
        }
    }
}
