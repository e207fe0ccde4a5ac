//! Raw input grids and binary masks.

use crate::error::{DmcError, Result};

/// A `height × width × channels` grid of values in `[-1, 1]`, stored row-major
/// with the channel index fastest.
///
/// Visual grids use three channels. Audio grids are time-frames × frequency
/// bins with one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

pub type RawVisualGrid = RawGrid;
pub type RawAudioGrid = RawGrid;

impl RawGrid {
    /// Builds a grid, clipping every value into `[-1, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, mut values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DmcError::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(DmcError::Shape(format!(
                "{} values for a {height}x{width}x{channels} grid",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DmcError::InvalidArgument(format!(
                "non-finite grid value at position {pos}"
            )));
        }
        for v in values.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }
}

/// A `rows × cols` boolean grid stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(DmcError::Shape(format!(
                "{} cells for a {rows}x{cols} mask",
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
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

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn intersects(&self, other: &BinaryGrid) -> bool {
        self.cells.iter().zip(&other.cells).any(|(&a, &b)| a && b)
    }

    /// Cell-wise union. Shapes must match.
    pub fn union(&self, other: &BinaryGrid) -> Result<BinaryGrid> {
        if self.shape() != other.shape() {
            return Err(DmcError::Shape(format!(
                "mask shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a || b).collect();
        Ok(BinaryGrid {
            rows: self.rows,
            cols: self.cols,
            cells,
        })
    }
}
