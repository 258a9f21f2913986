//! The block two-level Toeplitz covariance operator, applied implicitly.
//!
//! Under stationarity the covariance of two template pixels depends only on
//! their relative displacement, `S[(u,v,p),(i,j,q)] = g_pq[i-u, j-v]`, so
//! the full `kmn x kmn` matrix never needs to be formed: multiplying by `S`
//! is a sum of two-dimensional cross-correlations of the input channels
//! with the covariance slices, evaluated exactly on a zero-padded FFT grid.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::fft::{good_size, FftGrid};
use crate::solvers::LinearOperator;
use crate::stats::StationaryStats;
use crate::template::Template;
use rustfft::num_complex::Complex64;

/// Dense materialization guard: `k*m*n` above this is refused.
pub const DENSE_GUARD: usize = 20_000;

/// Implicit `(S + lambda I)` for a `k`-channel `m x n` template.
///
/// The Fourier transforms of the `k^2` covariance slices are taken once at
/// construction; each matvec then costs `2k` transforms of the padded grid
/// plus `k^2` pointwise products.
pub struct ToeplitzOperator {
    stats: StationaryStats,
    m: usize,
    n: usize,
    lambda: f64,
    pad_h: usize,
    pad_w: usize,
    grid: FftGrid,
    /// `k^2` spectra of the wrapped slice arrays, `(p*k + q)` major
    slice_fft: Vec<Vec<Complex64>>,
}

impl ToeplitzOperator {
    /// Builds the operator for `m x n` templates from gathered statistics.
    pub fn from_stats(
        stats: &StationaryStats,
        m: usize,
        n: usize,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Value(format!(
                "regularizer must be non-negative, got {lambda}"
            )));
        }
        stats.require_extent(m, n)?;
        let cropped = stats.crop(m, n)?;
        let k = cropped.channels();
        let pad_h = good_size(2 * m - 1);
        let pad_w = good_size(2 * n - 1);
        let grid = FftGrid::new(pad_h, pad_w);

        let mut slice_fft = Vec::with_capacity(k * k);
        for p in 0..k {
            for q in 0..k {
                let mut buf = vec![Complex64::default(); pad_h * pad_w];
                for du in -(m as i64 - 1)..=(m as i64 - 1) {
                    for dv in -(n as i64 - 1)..=(n as i64 - 1) {
                        let a = du.rem_euclid(pad_h as i64) as usize;
                        let b = dv.rem_euclid(pad_w as i64) as usize;
                        buf[a * pad_w + b] = Complex64::new(cropped.g(p, q, du, dv), 0.0);
                    }
                }
                grid.forward(&mut buf);
                slice_fft.push(buf);
            }
        }
        Ok(ToeplitzOperator {
            stats: cropped,
            m,
            n,
            lambda,
            pad_h,
            pad_w,
            grid,
            slice_fft,
        })
    }

    pub fn channels(&self) -> usize {
        self.stats.channels()
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The statistics slice array this operator applies (cropped).
    pub fn stats(&self) -> &StationaryStats {
        &self.stats
    }

    fn check_shape(&self, x: &Template) -> Result<()> {
        if x.channels() != self.channels() || x.rows() != self.m || x.cols() != self.n {
            return Err(Error::Shape(format!(
                "operator is {}x{}x{}, vector is {}x{}x{}",
                self.channels(),
                self.m,
                self.n,
                x.channels(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Applies `(S + lambda I) x` via padded FFT cross-correlations.
    pub fn matvec(&self, x: &Template) -> Result<Template> {
        self.check_shape(x)?;
        let k = self.channels();
        let cells = self.pad_h * self.pad_w;

        let mut spectra = Vec::with_capacity(k);
        for q in 0..k {
            let mut buf = vec![Complex64::default(); cells];
            x.scatter_channel(q, self.pad_h, self.pad_w, &mut buf);
            self.grid.forward(&mut buf);
            spectra.push(buf);
        }

        let mut out = Template::zeros(k, self.m, self.n);
        let mut acc = vec![Complex64::default(); cells];
        for p in 0..k {
            acc.fill(Complex64::default());
            for (q, xq) in spectra.iter().enumerate() {
                let slice = &self.slice_fft[p * k + q];
                for ((a, s), x) in acc.iter_mut().zip(slice).zip(xq) {
                    *a += s.conj() * x;
                }
            }
            self.grid.inverse(&mut acc);
            out.gather_channel(p, self.pad_h, self.pad_w, &acc);
        }
        if self.lambda != 0.0 {
            for (o, xi) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += self.lambda * xi;
            }
        }
        Ok(out)
    }

    /// Materializes `S + lambda I` as a dense matrix in the crate-wide index
    /// order (`row = (v*m + u)*k + p`). Oracle and Cholesky path only;
    /// refuses systems above [`DENSE_GUARD`].
    ///
    /// Entries above and below the diagonal are written from the same float,
    /// so the result is symmetric bit-for-bit.
    pub fn densify(&self) -> Result<Matrix> {
        let k = self.channels();
        let dim = k * self.m * self.n;
        if dim > DENSE_GUARD {
            return Err(Error::SizeGuard {
                size: dim,
                limit: DENSE_GUARD,
            });
        }
        let mut matrix = Matrix::zeros(dim);
        for row in 0..dim {
            let p = row % k;
            let pix = row / k;
            let u = (pix % self.m) as i64;
            let v = (pix / self.m) as i64;
            for col in row..dim {
                let q = col % k;
                let pix = col / k;
                let i = (pix % self.m) as i64;
                let j = (pix / self.m) as i64;
                let mut value = self.stats.g(p, q, i - u, j - v);
                if row == col {
                    value += self.lambda;
                }
                matrix.set(row, col, value);
                matrix.set(col, row, value);
            }
        }
        Ok(matrix)
    }
}

impl LinearOperator for ToeplitzOperator {
    fn dim(&self) -> usize {
        self.channels() * self.m * self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let t = Template::from_flat(self.channels(), self.m, self.n, x.to_vec())
            .expect("operator applied to malformed vector");
        let z = self.matvec(&t).expect("shape checked above");
        out.copy_from_slice(z.as_slice());
    }
}
