//! Template-shaped vectors: `k` channels on an `m x n` pixel grid.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;

/// A `k`-channel `m x n` array flattened in the crate-wide dense order.
///
/// The flat index of channel `p` at pixel `(u, v)` (row `u`, column `v`) is
/// `(v*m + u)*k + p`: channels are fastest, then rows within a column, then
/// columns. Every dense matrix, solver vector and detector file in this
/// crate uses the same order, so the `k x k` channel block of one pixel is
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    k: usize,
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl Template {
    pub fn zeros(k: usize, m: usize, n: usize) -> Self {
        assert!(k >= 1 && m >= 1 && n >= 1);
        Template {
            k,
            m,
            n,
            data: vec![0.0; k * m * n],
        }
    }

    /// Wraps a flat vector already in dense order.
    pub fn from_flat(k: usize, m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * m * n {
            return Err(Error::Shape(format!(
                "flat data has {} entries, expected {}*{}*{} = {}",
                data.len(),
                k,
                m,
                n,
                k * m * n
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("template entries must be finite".into()));
        }
        Ok(Template { k, m, n, data })
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, p: usize, u: usize, v: usize) -> usize {
        debug_assert!(p < self.k && u < self.m && v < self.n);
        (v * self.m + u) * self.k + p
    }

    #[inline]
    pub fn get(&self, p: usize, u: usize, v: usize) -> f64 {
        self.data[self.index(p, u, v)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, u: usize, v: usize, value: f64) {
        let i = self.index(p, u, v);
        self.data[i] = value;
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

    pub fn same_shape(&self, other: &Template) -> bool {
        self.k == other.k && self.m == other.m && self.n == other.n
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Copies channel `p` into a zero-padded `ph x pw` complex grid
    /// (row-major), with pixel `(u, v)` at grid position `(u, v)`.
    pub fn scatter_channel(&self, p: usize, ph: usize, pw: usize, out: &mut [Complex64]) {
        assert!(ph >= self.m && pw >= self.n && out.len() == ph * pw);
        out.fill(Complex64::default());
        for v in 0..self.n {
            for u in 0..self.m {
                out[u * pw + v] = Complex64::new(self.get(p, u, v), 0.0);
            }
        }
    }

    /// Reads channel `p` back from the top-left `m x n` corner of a
    /// row-major `ph x pw` complex grid, keeping the real part.
    pub fn gather_channel(&mut self, p: usize, ph: usize, pw: usize, grid: &[Complex64]) {
        assert!(ph >= self.m && pw >= self.n && grid.len() == ph * pw);
        for v in 0..self.n {
            for u in 0..self.m {
                self.set(p, u, v, grid[u * pw + v].re);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_order_is_channel_fastest_then_rows() {
        // k=2, m=3, n=2: index (p,u,v) = (v*3+u)*2+p
        let mut t = Template::zeros(2, 3, 2);
        t.set(1, 2, 0, 5.0);
        assert_eq!(t.as_slice()[2 * 2 + 1], 5.0);
        t.set(0, 0, 1, 7.0);
        assert_eq!(t.as_slice()[(1 * 3) * 2], 7.0);
    }

    #[test]
    fn from_flat_rejects_bad_shapes_and_nan() {
        assert!(Template::from_flat(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Template::from_flat(1, 2, 2, vec![0.0, 1.0, f64::NAN, 2.0]).is_err());
    }

    #[test]
    fn scatter_gather_round_trip() {
        let mut t = Template::zeros(1, 2, 3);
        for u in 0..2 {
            for v in 0..3 {
                t.set(0, u, v, (u * 3 + v) as f64);
            }
        }
        let mut grid = vec![Complex64::default(); 4 * 5];
        t.scatter_channel(0, 4, 5, &mut grid);
        assert_eq!(grid[1 * 5 + 2].re, 5.0);
        let mut back = Template::zeros(1, 2, 3);
        back.gather_channel(0, 4, 5, &grid);
        assert_eq!(back, t);
    }
}
