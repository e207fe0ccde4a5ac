//! Patch encoders mapping raw grids to feature sets.
//!
//! A grid is cut into non-overlapping `ph × pw` patches read row-major. Each
//! patch is flattened in `(row, col, channel)` order, mapped linearly to
//! dimension `n` and passed through an odd bounded nonlinearity.

use rand::Rng;

use crate::clustering::{FeatureSet, Modality};
use crate::error::{DmcError, Result};
use crate::grid::RawGrid;
use crate::numerics::Matrix;

/// Elementwise activation applied after the linear patch map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    /// `tanh(x)`.
    Tanh,
    /// `x³ / (1 + |x|³)`: flat near zero, saturating at ±1.
    RationalCubic,
    /// `x`, for tests that need a linear encoder.
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::RationalCubic => {
                let c = x * x * x;
                c / (1.0 + c.abs())
            }
            Nonlinearity::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::RationalCubic => {
                let q = 1.0 + (x * x * x).abs();
                3.0 * x * x / (q * q)
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::RationalCubic => "cubic",
            Nonlinearity::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Nonlinearity::Tanh),
            "cubic" => Some(Nonlinearity::RationalCubic),
            "identity" => Some(Nonlinearity::Identity),
            _ => None,
        }
    }
}

/// Weights of one patch encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub patch: (usize, usize),
    pub channels: usize,
    /// `n × (ph·pw·channels)`.
    pub weight: Matrix,
    /// Length `n`.
    pub bias: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

/// Gradients with the same shapes as [`EncoderParams`] weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        Self {
            weight: Matrix::zeros(params.weight.rows(), params.weight.cols()),
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl EncoderParams {
    pub fn new(
        patch: (usize, usize),
        channels: usize,
        weight: Matrix,
        bias: Vec<f64>,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        if patch.0 == 0 || patch.1 == 0 || channels == 0 {
            return Err(DmcError::Shape("patch size and channel count must be positive".into()));
        }
        let fan_in = patch.0 * patch.1 * channels;
        if weight.cols() != fan_in {
            return Err(DmcError::Shape(format!(
                "encoder weight has {} columns but a patch holds {fan_in} values",
                weight.cols()
            )));
        }
        if bias.len() != weight.rows() {
            return Err(DmcError::Shape(format!(
                "encoder bias has length {} but weight has {} rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            patch,
            channels,
            weight,
            bias,
            nonlinearity,
        })
    }

    /// Weight entries uniform in `[-a, a]` with `a = sqrt(1/fan_in)`; zero bias.
    pub fn init<R: Rng + ?Sized>(
        n: usize,
        patch: (usize, usize),
        channels: usize,
        nonlinearity: Nonlinearity,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = patch.0 * patch.1 * channels;
        let a = (1.0 / fan_in as f64).sqrt();
        let data = (0..n * fan_in).map(|_| rng.random_range(-a..=a)).collect();
        Self::new(
            patch,
            channels,
            Matrix::from_vec(n, fan_in, data)?,
            vec![0.0; n],
            nonlinearity,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }
}

/// Flattened patches of `grid` in row-major patch order, plus the patch grid shape.
pub fn extract_patches(grid: &RawGrid, patch: (usize, usize)) -> Result<(Vec<Vec<f64>>, (usize, usize))> {
    let (ph, pw) = patch;
    if ph == 0 || pw == 0 || grid.height() % ph != 0 || grid.width() % pw != 0 {
        return Err(DmcError::Shape(format!(
            "grid {}x{} is not divisible into {ph}x{pw} patches",
            grid.height(),
            grid.width()
        )));
    }
    let rows = grid.height() / ph;
    let cols = grid.width() / pw;
    let ch = grid.channels();
    let mut patches = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut v = Vec::with_capacity(ph * pw * ch);
            for dy in 0..ph {
                let start = grid.index(pr * ph + dy, pc * pw, 0);
                v.extend_from_slice(&grid.values()[start..start + pw * ch]);
            }
            patches.push(v);
        }
    }
    Ok((patches, (rows, cols)))
}

fn checked_patches(grid: &RawGrid, params: &EncoderParams) -> Result<(Vec<Vec<f64>>, (usize, usize))> {
    if grid.channels() != params.channels {
        return Err(DmcError::Shape(format!(
            "grid has {} channels but the encoder expects {}",
            grid.channels(),
            params.channels
        )));
    }
    extract_patches(grid, params.patch)
}

fn pre_activation(params: &EncoderParams, patch: &[f64]) -> Vec<f64> {
    let mut a = params.weight.matvec(patch);
    for (x, b) in a.iter_mut().zip(&params.bias) {
        *x += b;
    }
    a
}

/// Encodes a grid into one feature vector per patch.
pub fn encode(grid: &RawGrid, params: &EncoderParams, modality: Modality) -> Result<FeatureSet> {
    let (patches, shape) = checked_patches(grid, params)?;
    let f = params.nonlinearity;
    let vectors = patches
        .iter()
        .map(|x| pre_activation(params, x).into_iter().map(|a| f.apply(a)).collect())
        .collect();
    FeatureSet::new(vectors, shape, modality)
}

/// Gradient of a scalar with respect to the encoder parameters, given its
/// gradient `upstream` with respect to the encoded features of `grid`.
pub fn encoder_backward(upstream: &[Vec<f64>], params: &EncoderParams, grid: &RawGrid) -> Result<EncoderGrads> {
    let (patches, _) = checked_patches(grid, params)?;
    if upstream.len() != patches.len() {
        return Err(DmcError::Shape(format!(
            "{} upstream gradients for {} patches",
            upstream.len(),
            patches.len()
        )));
    }
    let n = params.feature_dim();
    let mut grads = EncoderGrads::zeros(params);
    for (x, g) in patches.iter().zip(upstream) {
        if g.len() != n {
            return Err(DmcError::Shape(format!(
                "upstream gradient has length {} but features have dimension {n}",
                g.len()
            )));
        }
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let ga: Vec<f64> = pre_activation(params, x)
            .iter()
            .zip(g)
            .map(|(&a, &gv)| gv * params.nonlinearity.derivative(a))
            .collect();
        grads.weight.add_outer(&ga, x);
        for (b, v) in grads.bias.iter_mut().zip(&ga) {
            *b += v;
        }
    }
    Ok(grads)
}
