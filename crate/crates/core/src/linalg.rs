//! Minimal dense linear algebra for the graph encoder.
//!
//! The encoder needs little more than matrix–vector products and gradient
//! accumulation over small fixed shapes (384→128 projections, 128→32 heads),
//! so a row-major `Mat` over `Vec<f64>` keeps the forward and backward
//! passes transparent and the crate `no_std`-friendly.

use alloc::vec;
use alloc::vec::Vec;

use crate::num;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `y = A x` (rows × cols) · (cols) → (rows).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            y[r] = dot(self.row(r), x);
        }
        y
    }

    /// `y = Aᵀ x` (rows × cols)ᵀ · (rows) → (cols).
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(&mut y, self.row(r), x[r]);
        }
        y
    }

    /// `self += scale · u vᵀ` — rank-one gradient accumulation.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let ur = u[r] * scale;
            axpy(self.row_mut(r), v, ur);
        }
    }
}

// Four independent accumulators let the compiler keep the FMA pipeline
// full; a single serial accumulator halves throughput on these hot paths.
#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let n = u.len();
    let chunks = n / 4;
    let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let base = i * 4;
        a0 += u[base] * v[base];
        a1 += u[base + 1] * v[base + 1];
        a2 += u[base + 2] * v[base + 2];
        a3 += u[base + 3] * v[base + 3];
    }
    let mut acc = (a0 + a1) + (a2 + a3);
    for i in chunks * 4..n {
        acc += u[i] * v[i];
    }
    acc
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    num::sqrt(dot(u, u))
}

/// `y += scale · x`.
#[inline]
pub fn axpy(y: &mut [f64], x: &[f64], scale: f64) {
    debug_assert_eq!(y.len(), x.len());
    let n = y.len();
    let chunks = n / 4;
    for i in 0..chunks {
        let base = i * 4;
        y[base] += scale * x[base];
        y[base + 1] += scale * x[base + 1];
        y[base + 2] += scale * x[base + 2];
        y[base + 3] += scale * x[base + 3];
    }
    for i in chunks * 4..n {
        y[i] += scale * x[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_example() {
        // A = [[1, 2, 3], [4, 5, 6]]
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn add_outer_accumulates() {
        let mut g = Mat::zeros(2, 2);
        g.add_outer(&[1.0, 2.0], &[3.0, 4.0], 0.5);
        assert_eq!(g.data, vec![1.5, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn norm_of_unit_vector() {
        assert!((norm(&[0.6, 0.8]) - 1.0).abs() < 1e-15);
    }
}
