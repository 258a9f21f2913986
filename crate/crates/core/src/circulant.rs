//! Block two-level circulant covariances: closed-form solves via per-pixel
//! Fourier blocks, the Frobenius-nearest projection of a Toeplitz
//! covariance, and the correlation-filter window accumulation path.
//!
//! A matrix with entries `S[(u,v,p),(i,j,q)] = h_pq[(i-u) mod m, (j-v) mod n]`
//! is block-diagonalised by transforming each channel independently: in the
//! Fourier domain the system splits into one `k x k` Hermitian block
//! `S_hat[u,v] = (conj(h_hat_pq[u,v]))_pq` per frequency bin. Factorising
//! those blocks once makes every subsequent solve a handful of transforms
//! and `d` tiny triangular solves.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::fft::FftGrid;
use crate::solvers::Preconditioner;
use crate::stats::StationaryStats;
use crate::template::Template;
use crate::toeplitz::DENSE_GUARD;
use rustfft::num_complex::Complex64;

/// A block two-level circulant covariance defined by the spatial array
/// `h_pq[du, dv]`, `du in [0, m)`, `dv in [0, n)`, plus a ridge `lambda`
/// that is added per Fourier block (equivalently, to the spatial diagonal)
/// wherever the matrix is applied or factorized.
#[derive(Debug, Clone)]
pub struct CirculantCovariance {
    k: usize,
    m: usize,
    n: usize,
    lambda: f64,
    /// index `((p*k + q)*m + du)*n + dv`
    h: Vec<f64>,
}

impl CirculantCovariance {
    /// Wraps a defining array, checking the Hermitian structure
    /// `h_pq[du,dv] == h_qp[(-du) mod m, (-dv) mod n]` to 1e-12.
    pub fn from_parts(k: usize, m: usize, n: usize, h: Vec<f64>, lambda: f64) -> Result<Self> {
        if k < 1 || m < 1 || n < 1 {
            return Err(Error::Shape(format!(
                "circulant dimensions must be positive, got k={k}, m={m}, n={n}"
            )));
        }
        if h.len() != k * k * m * n {
            return Err(Error::Shape(format!(
                "defining array has {} entries, expected {}",
                h.len(),
                k * k * m * n
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Value(format!(
                "regularizer must be non-negative, got {lambda}"
            )));
        }
        if !h.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("circulant entries must be finite".into()));
        }
        let cov = CirculantCovariance { k, m, n, lambda, h };
        for p in 0..k {
            for q in 0..k {
                for du in 0..m {
                    for dv in 0..n {
                        let a = cov.h(p, q, du, dv);
                        let b = cov.h(q, p, (m - du) % m, (n - dv) % n);
                        if (a - b).abs() > 1e-12 {
                            return Err(Error::Value(format!(
                                "circulant Hermitian structure violated at \
                                 (p={p}, q={q}, du={du}, dv={dv}): {a} vs {b}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(cov)
    }

    /// The Frobenius-nearest block two-level circulant matrix to the
    /// Toeplitz covariance held in `stats`, for `m x n` templates.
    ///
    /// Each entry is the convex combination of the Toeplitz covariances of
    /// the two modulo-complement displacements per axis,
    /// weighted by how often periodic extension observes each:
    /// `alpha = (du mod m)/m`, `beta = (dv mod n)/n`.
    pub fn project_from_toeplitz(
        stats: &StationaryStats,
        m: usize,
        n: usize,
        lambda: f64,
    ) -> Result<Self> {
        stats.require_extent(m, n)?;
        let k = stats.channels();
        let mut h = vec![0.0; k * k * m * n];
        let mut idx = 0;
        for p in 0..k {
            for q in 0..k {
                for du in 0..m {
                    for dv in 0..n {
                        let alpha = du as f64 / m as f64;
                        let beta = dv as f64 / n as f64;
                        // -(-du mod m): 0 when du = 0, du - m otherwise
                        let wrap_u = -(((m - du) % m) as i64);
                        let wrap_v = -(((n - dv) % n) as i64);
                        let du = du as i64;
                        let dv = dv as i64;
                        h[idx] = (1.0 - alpha) * (1.0 - beta) * stats.g(p, q, du, dv)
                            + (1.0 - alpha) * beta * stats.g(p, q, du, wrap_v)
                            + alpha * (1.0 - beta) * stats.g(p, q, wrap_u, dv)
                            + alpha * beta * stats.g(p, q, wrap_u, wrap_v);
                        idx += 1;
                    }
                }
            }
        }
        CirculantCovariance::from_parts(k, m, n, h, lambda)
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

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn h(&self, p: usize, q: usize, du: usize, dv: usize) -> f64 {
        self.h[((p * self.k + q) * self.m + du) * self.n + dv]
    }

    fn check_shape(&self, x: &Template) -> Result<()> {
        if x.channels() != self.k || x.rows() != self.m || x.cols() != self.n {
            return Err(Error::Shape(format!(
                "circulant is {}x{}x{}, vector is {}x{}x{}",
                self.k,
                self.m,
                self.n,
                x.channels(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Transforms of the `k^2` slices, bin-major lookup left to the caller.
    fn slice_spectra(&self, grid: &FftGrid) -> Vec<Vec<Complex64>> {
        let cells = self.m * self.n;
        let mut spectra = Vec::with_capacity(self.k * self.k);
        for p in 0..self.k {
            for q in 0..self.k {
                let base = (p * self.k + q) * cells;
                let mut buf: Vec<Complex64> = self.h[base..base + cells]
                    .iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect();
                grid.forward(&mut buf);
                spectra.push(buf);
            }
        }
        spectra
    }

    /// Applies `(C + lambda I) x` by periodic cross-correlation: channel
    /// transforms, a `k x k` product per frequency bin, inverse transforms.
    /// No zero-padding is needed thanks to the modulo structure.
    pub fn matvec(&self, x: &Template) -> Result<Template> {
        self.check_shape(x)?;
        let grid = FftGrid::new(self.m, self.n);
        let cells = self.m * self.n;
        let slices = self.slice_spectra(&grid);

        let mut spectra = Vec::with_capacity(self.k);
        for q in 0..self.k {
            let mut buf = vec![Complex64::default(); cells];
            x.scatter_channel(q, self.m, self.n, &mut buf);
            grid.forward(&mut buf);
            spectra.push(buf);
        }

        let mut out = Template::zeros(self.k, self.m, self.n);
        let mut acc = vec![Complex64::default(); cells];
        for p in 0..self.k {
            acc.fill(Complex64::default());
            for (q, xq) in spectra.iter().enumerate() {
                let slice = &slices[p * self.k + q];
                for ((a, s), xv) in acc.iter_mut().zip(slice).zip(xq) {
                    *a += s.conj() * xv;
                }
            }
            grid.inverse(&mut acc);
            out.gather_channel(p, self.m, self.n, &acc);
        }
        if self.lambda != 0.0 {
            for (o, xi) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += self.lambda * xi;
            }
        }
        Ok(out)
    }

    /// Dense `(C + lambda I)` in the crate-wide index order. Oracle only.
    pub fn densify(&self) -> Result<Matrix> {
        let dim = self.k * self.m * self.n;
        if dim > DENSE_GUARD {
            return Err(Error::SizeGuard {
                size: dim,
                limit: DENSE_GUARD,
            });
        }
        let mut matrix = Matrix::zeros(dim);
        for row in 0..dim {
            let p = row % self.k;
            let pix = row / self.k;
            let u = pix % self.m;
            let v = pix / self.m;
            for col in 0..dim {
                let q = col % self.k;
                let pix = col / self.k;
                let i = pix % self.m;
                let j = pix / self.m;
                let du = (i + self.m - u) % self.m;
                let dv = (j + self.n - v) % self.n;
                let mut value = self.h(p, q, du, dv);
                if row == col {
                    value += self.lambda;
                }
                matrix.set(row, col, value);
            }
        }
        Ok(matrix)
    }

    /// Factorizes every per-bin block `S_hat[u,v] + lambda I`.
    pub fn factorize(&self) -> Result<CirculantFactorization> {
        let grid = FftGrid::new(self.m, self.n);
        let slices = self.slice_spectra(&grid);
        let k = self.k;
        let cells = self.m * self.n;

        let mut factors = vec![Complex64::default(); cells * k * k];
        let mut block = vec![Complex64::default(); k * k];
        for bin in 0..cells {
            for p in 0..k {
                for q in 0..k {
                    let mut entry = slices[p * k + q][bin].conj();
                    if p == q {
                        entry += self.lambda;
                    }
                    block[p * k + q] = entry;
                }
            }
            cholesky_block_in_place(&mut block, k).map_err(|(pivot, value)| {
                Error::NotPositiveDefinite(format!(
                    "Fourier bin ({}, {}): pivot {pivot} is {value:.6e} \
                     (lambda too small or corrupt statistics?)",
                    bin / self.n,
                    bin % self.n
                ))
            })?;
            factors[bin * k * k..(bin + 1) * k * k].copy_from_slice(&block);
        }
        Ok(CirculantFactorization {
            k,
            m: self.m,
            n: self.n,
            grid,
            factors,
        })
    }
}

/// In-place complex Cholesky `A = L L^H` of a `k x k` Hermitian block;
/// only the lower triangle of the input is read.
fn cholesky_block_in_place(a: &mut [Complex64], k: usize) -> std::result::Result<(), (usize, f64)> {
    for j in 0..k {
        let mut d = a[j * k + j].re;
        for s in 0..j {
            d -= a[j * k + s].norm_sqr();
        }
        if !(d > 0.0) {
            return Err((j, d));
        }
        let ljj = d.sqrt();
        a[j * k + j] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for t in 0..j {
                s -= a[i * k + t] * a[j * k + t].conj();
            }
            a[i * k + j] = s / ljj;
        }
        for i in 0..j {
            a[i * k + j] = Complex64::default();
        }
    }
    Ok(())
}

/// Solves `L L^H x = b` for one block.
fn solve_block(l: &[Complex64], k: usize, b: &mut [Complex64]) {
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * k + j] * b[j];
        }
        b[i] = s / l[i * k + i].re;
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in (i + 1)..k {
            s -= l[j * k + i].conj() * b[j];
        }
        b[i] = s / l[i * k + i].re;
    }
}

/// Per-bin Cholesky factors of a block two-level circulant system.
///
/// Solving costs `k` forward transforms, `d` block substitutions and `k`
/// inverse transforms. Immutable once built; solves may run concurrently.
pub struct CirculantFactorization {
    k: usize,
    m: usize,
    n: usize,
    grid: FftGrid,
    /// `d` lower-triangular `k x k` factors, bin-major
    factors: Vec<Complex64>,
}

impl CirculantFactorization {
    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// Solves `(C + lambda I) w = b`.
    pub fn solve(&self, b: &Template) -> Result<Template> {
        if b.channels() != self.k || b.rows() != self.m || b.cols() != self.n {
            return Err(Error::Shape(format!(
                "factorization is {}x{}x{}, vector is {}x{}x{}",
                self.k,
                self.m,
                self.n,
                b.channels(),
                b.rows(),
                b.cols()
            )));
        }
        let cells = self.m * self.n;
        let k = self.k;

        let mut spectra = Vec::with_capacity(k);
        for p in 0..k {
            let mut buf = vec![Complex64::default(); cells];
            b.scatter_channel(p, self.m, self.n, &mut buf);
            self.grid.forward(&mut buf);
            spectra.push(buf);
        }

        let mut rhs = vec![Complex64::default(); k];
        for bin in 0..cells {
            for (p, sp) in spectra.iter().enumerate() {
                rhs[p] = sp[bin];
            }
            solve_block(&self.factors[bin * k * k..(bin + 1) * k * k], k, &mut rhs);
            for (p, sp) in spectra.iter_mut().enumerate() {
                sp[bin] = rhs[p];
            }
        }

        let mut out = Template::zeros(k, self.m, self.n);
        for (p, sp) in spectra.iter_mut().enumerate() {
            self.grid.inverse(sp);
            out.gather_channel(p, self.m, self.n, sp);
        }
        Ok(out)
    }
}

impl Preconditioner for CirculantFactorization {
    fn dim(&self) -> usize {
        self.k * self.m * self.n
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        let t = Template::from_flat(self.k, self.m, self.n, r.to_vec())
            .expect("preconditioner applied to malformed vector");
        let z = self.solve(&t).expect("shape checked above");
        out.copy_from_slice(z.as_slice());
    }
}

/// Raw per-bin outer-product sums over sampled windows (the correlation
/// filter construction): `S_hat[u,v] += x_hat[u,v] x_hat[u,v]^H` per window.
///
/// Equivalent to averaging the covariance of all `m*n` circular shifts of
/// every window once normalized by `windows * m * n`.
#[derive(Debug, Clone)]
pub struct WindowCovariance {
    k: usize,
    m: usize,
    n: usize,
    windows: usize,
    /// bin-major `k x k` blocks, unnormalized
    blocks: Vec<Complex64>,
}

/// Accumulates the Fourier-domain covariance blocks of a window sample.
pub fn accumulate_from_windows(windows: &[Template]) -> Result<WindowCovariance> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Empty("window list".into()))?;
    let (k, m, n) = (first.channels(), first.rows(), first.cols());
    let grid = FftGrid::new(m, n);
    let cells = m * n;
    let mut blocks = vec![Complex64::default(); cells * k * k];

    for (i, window) in windows.iter().enumerate() {
        if !window.same_shape(first) {
            return Err(Error::Shape(format!(
                "window {i} is {}x{}x{}, expected {k}x{m}x{n}",
                window.channels(),
                window.rows(),
                window.cols()
            )));
        }
        let mut spectra = Vec::with_capacity(k);
        for p in 0..k {
            let mut buf = vec![Complex64::default(); cells];
            window.scatter_channel(p, m, n, &mut buf);
            grid.forward(&mut buf);
            spectra.push(buf);
        }
        for bin in 0..cells {
            for p in 0..k {
                for q in 0..k {
                    blocks[bin * k * k + p * k + q] += spectra[p][bin] * spectra[q][bin].conj();
                }
            }
        }
    }
    Ok(WindowCovariance {
        k,
        m,
        n,
        windows: windows.len(),
        blocks,
    })
}

impl WindowCovariance {
    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn window_count(&self) -> usize {
        self.windows
    }

    /// The raw (unnormalized) `k x k` block at frequency bin `(u, v)`.
    pub fn raw_block(&self, u: usize, v: usize) -> &[Complex64] {
        let bin = u * self.n + v;
        &self.blocks[bin * self.k * self.k..(bin + 1) * self.k * self.k]
    }

    /// Converts to the spatial defining array by inverse-transforming the
    /// normalized blocks; normalization is `1 / (windows * m * n)`, i.e.
    /// the average over windows and their circular shifts.
    pub fn to_circulant(&self, lambda: f64) -> Result<CirculantCovariance> {
        let grid = FftGrid::new(self.m, self.n);
        let cells = self.m * self.n;
        let scale = 1.0 / (self.windows as f64 * cells as f64);
        let mut h = vec![0.0; self.k * self.k * cells];
        let mut buf = vec![Complex64::default(); cells];
        for p in 0..self.k {
            for q in 0..self.k {
                for bin in 0..cells {
                    // h_hat_pq[u,v] = conj(S_hat[u,v][p,q]) / (windows * m * n)
                    buf[bin] = self.blocks[bin * self.k * self.k + p * self.k + q].conj() * scale;
                }
                grid.inverse(&mut buf);
                let base = (p * self.k + q) * cells;
                for (dst, src) in h[base..base + cells].iter_mut().zip(&buf) {
                    *dst = src.re;
                }
            }
        }
        CirculantCovariance::from_parts(self.k, self.m, self.n, h, lambda)
    }
}
