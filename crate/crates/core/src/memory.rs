//! Theoretical memory requirement of each training back-end.
//!
//! Benchmarks report memory computed from the data model, never sampled
//! from the allocator: the figures count the minimal state a method must
//! retain between solves of one template geometry, in bytes, with `f64`
//! scalars (8 bytes) and complex doubles (16 bytes).
//!
//! Counting rules, for `k` channels, an `m x n` template and `d = m*n`:
//!
//! - dense Cholesky: the `kd x kd` factor, factorized in place over the
//!   materialized matrix: `8 (kd)^2`.
//! - Toeplitz slice spectra (the warm state of the FFT matvec): one padded
//!   grid `P x Q` per unique channel pair. The pair symmetry
//!   `g_qp[du,dv] = g_pq[-du,-dv]` makes the spectrum of slice `(q,p)` the
//!   conjugate of slice `(p,q)`, and real input makes each spectrum
//!   Hermitian, so `k(k+1)/2` half-spectra suffice:
//!   `16 * k(k+1)/2 * P * (floor(Q/2)+1)`.
//! - circulant factors: one `k x k` complex lower triangle per Fourier bin:
//!   `16 * d * k(k+1)/2`.
//! - iteration vectors: `8 k d` each (CG keeps x, r, p, Ap; PCG adds z).

use crate::fft::good_size;
use crate::trainer::TrainMethod;

fn kd(k: usize, m: usize, n: usize) -> u64 {
    (k * m * n) as u64
}

fn unique_pairs(k: usize) -> u64 {
    (k * (k + 1) / 2) as u64
}

/// Bytes held by the dense Cholesky factor.
pub fn cholesky_bytes(k: usize, m: usize, n: usize) -> u64 {
    8 * kd(k, m, n) * kd(k, m, n)
}

/// Bytes of the cached Toeplitz slice spectra (shared by CG and PCG).
pub fn toeplitz_slice_bytes(k: usize, m: usize, n: usize) -> u64 {
    let ph = good_size(2 * m - 1) as u64;
    let pw = good_size(2 * n - 1) as u64;
    16 * unique_pairs(k) * ph * (pw / 2 + 1)
}

/// Bytes of the factorized per-bin circulant blocks.
pub fn circulant_factor_bytes(k: usize, m: usize, n: usize) -> u64 {
    16 * (m * n) as u64 * unique_pairs(k)
}

pub fn cg_bytes(k: usize, m: usize, n: usize) -> u64 {
    toeplitz_slice_bytes(k, m, n) + 4 * 8 * kd(k, m, n)
}

pub fn pcg_bytes(k: usize, m: usize, n: usize) -> u64 {
    toeplitz_slice_bytes(k, m, n) + circulant_factor_bytes(k, m, n) + 5 * 8 * kd(k, m, n)
}

/// Circulant solve state: block factors plus channel transform workspace.
pub fn circulant_bytes(k: usize, m: usize, n: usize) -> u64 {
    circulant_factor_bytes(k, m, n) + 16 * kd(k, m, n)
}

pub fn method_bytes(method: TrainMethod, k: usize, m: usize, n: usize) -> u64 {
    match method {
        TrainMethod::Cholesky => cholesky_bytes(k, m, n),
        TrainMethod::Cg => cg_bytes(k, m, n),
        TrainMethod::Pcg => pcg_bytes(k, m, n),
        TrainMethod::Circulant => circulant_bytes(k, m, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_grows_quadratically_in_kd() {
        assert_eq!(cholesky_bytes(1, 2, 2), 8 * 16);
        assert_eq!(cholesky_bytes(2, 3, 4), 8 * 24 * 24);
    }

    #[test]
    fn iterative_methods_stay_near_linear() {
        // the headline gap: dense factors dwarf slice storage
        let chol = cholesky_bytes(31, 12, 28);
        let slices = toeplitz_slice_bytes(31, 12, 28);
        assert!(chol > 100 * slices, "{chol} vs {slices}");
        assert!(pcg_bytes(31, 12, 28) < chol / 20);
    }

    #[test]
    fn method_dispatch_is_consistent() {
        for method in TrainMethod::ALL {
            assert!(method_bytes(method, 8, 12, 28) > 0);
        }
        assert!(method_bytes(TrainMethod::Circulant, 8, 12, 28)
            < method_bytes(TrainMethod::Pcg, 8, 12, 28));
    }
}
