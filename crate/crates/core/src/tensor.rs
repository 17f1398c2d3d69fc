//! Dense row-major matrices and the deterministic multiply kernels that
//! emulate a matrix unit with BF16 inputs and FP32 accumulation.
//!
//! Every kernel accumulates in ascending inner index, one product at a time,
//! so results are bit-reproducible across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp_bits::{is_bf16_representable, round_bf16};

/// Nominal precision of a matrix's contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Fp32,
    /// Every element is a BF16 value widened to FP32.
    Bf16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    precision: Precision,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data, precision: Precision::Fp32 })
    }

    /// Builds a BF16-tagged matrix; fails if any element is not exactly
    /// representable in BF16.
    pub fn new_bf16(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if let Some(x) = data.iter().find(|x| !is_bf16_representable(**x)) {
            return Err(Error::Domain(format!("{x:e} is not representable in BF16")));
        }
        let mut m = Self::new(rows, cols, data)?;
        m.precision = Precision::Bf16;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols], precision: Precision::Fp32 }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Convenience constructor from nested rows; all rows must be equally long.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rounds every element to BF16 and tags the result accordingly.
    pub fn to_bf16(&self) -> Matrix {
        if self.precision == Precision::Bf16 {
            return self.clone();
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| round_bf16(x)).collect(),
            precision: Precision::Bf16,
        }
    }

    /// Copy of rows `start..end`, keeping the precision tag.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Matrix> {
        if start > end || end > self.rows {
            return Err(Error::Dimension(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.rows
            )));
        }
        Ok(Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
            precision: self.precision,
        })
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data, precision: self.precision }
    }

    /// Elementwise map; the result is tagged FP32.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
            precision: Precision::Fp32,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        self.precision = Precision::Fp32;
        &mut self.data
    }
}

fn product_shape(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<(usize, usize, usize)> {
    let (k_b, n) = if transpose_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if a.cols != k_b {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}{}x{}",
            a.rows,
            a.cols,
            if transpose_b { "transposed " } else { "" },
            k_b,
            n
        )));
    }
    Ok((a.rows, a.cols, n))
}

// out[i][j] = sum_k a[i][k] * b[k][j], summed in ascending k. The i-k-j loop
// order keeps that per-element order while streaming rows of `b`.
fn multiply_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    out
}

fn multiply(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<Matrix> {
    let (m, k, n) = product_shape(a, b, transpose_b)?;
    let data = if transpose_b {
        multiply_kernel(&a.data, &b.transpose().data, m, k, n)
    } else {
        multiply_kernel(&a.data, &b.data, m, k, n)
    };
    Matrix::new(m, n, data)
}

/// Plain FP32 product `a * b` (or `a * b^T`).
pub fn matmul_fp32(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<Matrix> {
    multiply(a, b, transpose_b)
}

/// Matrix-unit product: both operands rounded to BF16, products formed
/// exactly in FP32 and accumulated in FP32.
pub fn matmul_mixed(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<Matrix> {
    product_shape(a, b, transpose_b)?;
    multiply(&a.to_bf16(), &b.to_bf16(), transpose_b)
}

/// Added to the reference norm so all-zero references do not divide by zero.
pub const FROBENIUS_EPSILON: f64 = 1e-10;

/// `||a - b||_F / (||b||_F + 1e-10)`, accumulated in f64.
pub fn rel_frobenius_error(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = f64::from(x) - f64::from(y);
        diff += d * d;
        norm += f64::from(y) * f64::from(y);
    }
    Ok(diff.sqrt() / (norm.sqrt() + FROBENIUS_EPSILON))
}

/// One online-softmax update over a block of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxStep {
    /// `exp(s*scale - new_max)` row by row.
    pub p: Matrix,
    pub new_max: Vec<f32>,
    pub new_sum: Vec<f32>,
    /// `exp(prev_max - new_max)`; zero when `prev_max` is `-inf`.
    pub m_up: Vec<f32>,
    /// False if any logit was NaN or infinite.
    pub finite: bool,
}

/// Running-max/running-sum update for one block of raw scores.
///
/// `prev_max = -inf` marks the first block; `exp(-inf) = 0` makes the
/// previous contribution vanish without special-casing.
pub fn row_softmax_stats(
    s: &Matrix,
    prev_max: &[f32],
    prev_sum: &[f32],
    scale: f32,
) -> Result<SoftmaxStep> {
    if prev_max.len() != s.rows || prev_sum.len() != s.rows {
        return Err(Error::Dimension(format!(
            "softmax state has {}/{} rows, block has {}",
            prev_max.len(),
            prev_sum.len(),
            s.rows
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("softmax scale must be positive, got {scale}")));
    }
    let cols = s.cols;
    let mut p = Vec::with_capacity(s.data.len());
    let mut new_max = Vec::with_capacity(s.rows);
    let mut new_sum = Vec::with_capacity(s.rows);
    let mut m_up = Vec::with_capacity(s.rows);
    let mut finite = true;
    let mut scaled = vec![0.0f32; cols];

    for r in 0..s.rows {
        for (dst, &x) in scaled.iter_mut().zip(s.row(r)) {
            finite &= x.is_finite();
            *dst = x * scale;
        }
        let block_max = scaled.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let m = prev_max[r].max(block_max);
        let up = (prev_max[r] - m).exp();
        let mut row_sum = 0.0f32;
        for &x in &scaled {
            let e = (x - m).exp();
            row_sum += e;
            p.push(e);
        }
        new_max.push(m);
        m_up.push(up);
        new_sum.push(prev_sum[r] * up + row_sum);
    }

    Ok(SoftmaxStep { p: Matrix::new(s.rows, cols, p)?, new_max, new_sum, m_up, finite })
}
