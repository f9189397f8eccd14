use crate::error::{Error, Result};

/// Row-major 2-D grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::InvalidArgument(format!(
                "grid {rows}x{cols} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(row, col)` of the largest value; the first in row-major order wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::tensor::argmax(&self.data);
        (i / self.cols, i % self.cols)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Min-max rescale into `[0, 1]`; a constant grid becomes all zeros.
    /// Returns the `(min, max)` that were applied.
    pub fn normalized(&self) -> (Self, (f64, f64)) {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        let g = if span > 0.0 {
            self.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        } else {
            self.map(|_| 0.0)
        };
        (g, (lo, hi))
    }

    /// Bilinear interpolation with corner alignment: the four corner
    /// samples map onto the four corners of the target.
    pub fn upsampled(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::InvalidArgument(format!(
                "cannot upsample {}x{} to smaller {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        if (rows, cols) == self.dims() {
            return Ok(self.clone());
        }
        let coord = |i: usize, out: usize, src: usize| -> (usize, usize, f64) {
            if out <= 1 || src <= 1 {
                return (0, 0, 0.0);
            }
            let s = i as f64 * (src - 1) as f64 / (out - 1) as f64;
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        };
        let (lo, hi) = (self.min(), self.max());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (y0, y1, fy) = coord(r, rows, self.rows);
            for c in 0..cols {
                let (x0, x1, fx) = coord(c, cols, self.cols);
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.clamp(lo, hi));
            }
        }
        Ok(Self { rows, cols, data })
    }
}
