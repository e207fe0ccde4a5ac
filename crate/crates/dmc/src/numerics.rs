//! Numerically stable scalar and vector kernels.
//!
//! Every log-sum-exp is evaluated as `m + ln Σ exp(x - m)` with `m` the
//! maximum, so inputs with `|z·x|` far beyond the `exp` overflow point are
//! handled without loss.

use crate::error::{DmcError, Result};

/// Norms below this value mark a vector as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Smoothing magnitude `z` for the log-sum-exp surrogates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    z: f64,
}

impl SmoothingConfig {
    pub fn new(z: f64) -> Result<Self> {
        check_z(z)?;
        Ok(Self { z })
    }

    pub fn z(&self) -> f64 {
        self.z
    }
}

fn check_z(z: f64) -> Result<()> {
    if !(z.is_finite() && z > 0.0) {
        return Err(DmcError::InvalidArgument(format!(
            "smoothing magnitude must be positive and finite, got {z}"
        )));
    }
    Ok(())
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(DmcError::InvalidArgument("empty sequence".into()));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(DmcError::InvalidArgument(format!(
            "non-finite value {} at position {pos}",
            values[pos]
        )));
    }
    Ok(())
}

/// `ln Σ exp(x_j)` with max subtraction. Input must be non-empty and finite.
fn log_sum_exp(scaled: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Smooth maximum `(1/z)·ln Σ exp(z·x_j)`.
///
/// Bounded by `max ≤ result ≤ max + ln(k)/z` for `k` values.
pub fn smooth_max(values: &[f64], z: f64) -> Result<f64> {
    check_values(values)?;
    check_z(z)?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    Ok(log_sum_exp(values.iter().map(|&v| z * v)) / z)
}

/// Smooth minimum `-(1/z)·ln Σ exp(-z·x_j)`.
///
/// Bounded by `min - ln(k)/z ≤ result ≤ min` for `k` values.
pub fn smooth_min(values: &[f64], z: f64) -> Result<f64> {
    check_values(values)?;
    check_z(z)?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    Ok(-log_sum_exp(values.iter().map(|&v| -z * v)) / z)
}

/// Softmax of a finite, non-empty sequence.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    check_values(values)?;
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax over a finite, non-empty slice, overwriting it.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in values.iter_mut() {
        *v *= inv;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity `⟨a,b⟩/(‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DmcError::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if !(na >= NORM_EPS) || !(nb >= NORM_EPS) {
        return Err(DmcError::DegenerateVector(format!(
            "cosine operand norms {na:e} and {nb:e}"
        )));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Scales `v` to unit length.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= NORM_EPS) {
        return Err(DmcError::DegenerateVector(format!(
            "cannot normalize vector with norm {n:e}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DmcError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DmcError::Shape("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `out += selfᵀ · y`.
    pub fn add_matvec_t(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
    }

    /// `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (w, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
