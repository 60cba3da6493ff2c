//! Real-valued image grids and DC-centered frequency grids.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Row-major real grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "grid buffer",
                expected: vec![rows, cols],
                found: vec![data.len()],
            });
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_l2_error(&self, reference: &Grid) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        diff.sqrt() / reference.l2_norm()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Checks that the grid is `n x n`.
    pub fn expect_square(&self, n: usize) -> Result<()> {
        if self.rows != n || self.cols != n {
            return Err(Error::GridMismatch {
                expected: n,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Bilinear sample at fractional `(row, col)`; `None` outside the grid.
    pub fn bilinear(&self, row: f64, col: f64) -> Option<f64> {
        if !(row >= 0.0 && col >= 0.0) {
            return None;
        }
        let (r0, c0) = (row.floor() as usize, col.floor() as usize);
        if r0 >= self.rows || c0 >= self.cols {
            return None;
        }
        let (fr, fc) = (row - r0 as f64, col - c0 as f64);
        let r1 = if r0 + 1 < self.rows {
            r0 + 1
        } else if fr == 0.0 {
            r0
        } else {
            return None;
        };
        let c1 = if c0 + 1 < self.cols {
            c0 + 1
        } else if fc == 0.0 {
            c0
        } else {
            return None;
        };
        let v00 = self[(r0, c0)];
        let v01 = self[(r0, c1)];
        let v10 = self[(r1, c0)];
        let v11 = self[(r1, c1)];
        Some((1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) + fr * ((1.0 - fc) * v10 + fc * v11))
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Object phase in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap(pub Grid);

/// Normalized detector intensity (unit plane wave has intensity 1).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap(pub Grid);

impl PhaseMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.is_finite() {
            return Err(Error::Degenerate("phase map contains non-finite values"));
        }
        Ok(PhaseMap(grid))
    }

    pub fn zeros(n: usize) -> Self {
        PhaseMap(Grid::zeros(n, n))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    /// Largest absolute phase excursion.
    pub fn max_abs(&self) -> f64 {
        self.0.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl IntensityMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.as_slice().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Degenerate(
                "intensity must be finite and non-negative",
            ));
        }
        Ok(IntensityMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

/// Frequency-domain grid with DC at the center sample `(n/2, n/2)`.
///
/// Centered index `j` corresponds to signed frequency index `j - n/2`, i.e.
/// frequency `(j - n/2) * spacing` in cycles/m. Transform-native index `k`
/// maps to centered index `(k + n/2) mod n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferGrid<T> {
    n: usize,
    spacing: f64,
    values: Vec<T>,
}

impl<T: Copy> TransferGrid<T> {
    /// Builds a centered grid by evaluating `f(u, v)` at every sample, where
    /// `u` runs along columns and `v` along rows.
    pub fn from_fn(n: usize, spacing: f64, mut f: impl FnMut(f64, f64) -> T) -> Self {
        let half = (n / 2) as isize;
        let mut values = Vec::with_capacity(n * n);
        for r in 0..n {
            let v = (r as isize - half) as f64 * spacing;
            for c in 0..n {
                let u = (c as isize - half) as f64 * spacing;
                values.push(f(u, v));
            }
        }
        TransferGrid { n, spacing, values }
    }

    pub fn from_centered(n: usize, spacing: f64, values: Vec<T>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch {
                context: "transfer grid",
                expected: vec![n, n],
                found: vec![values.len()],
            });
        }
        Ok(TransferGrid { n, spacing, values })
    }

    /// Rebuilds a centered grid from a transform-native buffer.
    pub fn from_native(n: usize, spacing: f64, native: &[T]) -> Self {
        let mut values = native.to_vec();
        for r in 0..n {
            for c in 0..n {
                values[centered_index(r, n) * n + centered_index(c, n)] = native[r * n + c];
            }
        }
        TransferGrid { n, spacing, values }
    }

    /// Copy in transform-native layout (DC at index 0).
    pub fn to_native(&self) -> Vec<T> {
        let n = self.n;
        let mut out = self.values.clone();
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = self.values[centered_index(r, n) * n + centered_index(c, n)];
            }
        }
        out
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> TransferGrid<U> {
        TransferGrid {
            n: self.n,
            spacing: self.spacing,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at centered `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> T {
        self.values[row * self.n + col]
    }

    /// Center sample index (DC).
    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Signed frequency `(u, v)` of centered sample `(row, col)`.
    pub fn frequency(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.n / 2) as isize;
        (
            (col as isize - half) as f64 * self.spacing,
            (row as isize - half) as f64 * self.spacing,
        )
    }
}

/// Centered position of transform-native index `k` on an axis of length `n`.
#[inline]
pub fn centered_index(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}
