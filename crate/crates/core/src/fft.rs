//! Two-dimensional FFT helpers on row-major complex grids.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest 5-smooth integer (2^a 3^b 5^c) that is >= `n`.
///
/// Mixed-radix transforms of these lengths avoid the slower generic
/// (Bluestein) code paths.
pub fn good_size(n: usize) -> usize {
    assert!(n >= 1);
    let mut cand = n;
    loop {
        let mut rem = cand;
        for f in [2usize, 3, 5] {
            while rem % f == 0 {
                rem /= f;
            }
        }
        if rem == 1 {
            return cand;
        }
        cand += 1;
    }
}

/// Forward/inverse transforms planned for one grid size.
///
/// Grids are row-major `h x w` slices of `Complex64`. The inverse transform
/// includes the `1/(h*w)` normalization so that `inverse(forward(x)) == x`.
pub struct FftGrid {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FftGrid {
    pub fn new(h: usize, w: usize) -> Self {
        assert!(h >= 1 && w >= 1);
        let mut planner = FftPlanner::new();
        FftGrid {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward 2-D DFT (unnormalized).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
        // no normalization on the forward pass
    }

    /// In-place inverse 2-D DFT, normalized by `1/(h*w)`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.h * self.w) as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.h * self.w, "grid size mismatch");
        let mut scratch = vec![Complex64::default(); row.get_inplace_scratch_len()];
        for r in data.chunks_exact_mut(self.w) {
            row.process_with_scratch(r, &mut scratch);
        }
        // column pass via transpose so each FFT runs on contiguous memory
        let mut t = transpose(data, self.h, self.w);
        let mut scratch = vec![Complex64::default(); col.get_inplace_scratch_len()];
        for c in t.chunks_exact_mut(self.h) {
            col.process_with_scratch(c, &mut scratch);
        }
        let back = transpose(&t, self.w, self.h);
        data.copy_from_slice(&back);
    }
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = data[i * w + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn good_size_is_smooth_and_minimal() {
        assert_eq!(good_size(1), 1);
        assert_eq!(good_size(7), 8);
        assert_eq!(good_size(11), 12);
        assert_eq!(good_size(23), 24);
        assert_eq!(good_size(25), 25);
        assert_eq!(good_size(97), 100);
    }

    #[test]
    fn forward_matches_naive_dft() {
        let (h, w) = (3, 4);
        let grid = FftGrid::new(h, w);
        let mut data: Vec<Complex64> = (0..h * w)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i as f64).sin()))
            .collect();
        let orig = data.clone();
        grid.forward(&mut data);

        for a in 0..h {
            for b in 0..w {
                let mut want = Complex64::default();
                for u in 0..h {
                    for v in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((a * u) as f64 / h as f64 + (b * v) as f64 / w as f64);
                        want += orig[u * w + v] * Complex64::new(ang.cos(), ang.sin());
                    }
                }
                let got = data[a * w + b];
                assert_relative_eq!(got.re, want.re, epsilon = 1e-10, max_relative = 1e-10);
                assert_relative_eq!(got.im, want.im, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_restores_input() {
        let grid = FftGrid::new(5, 6);
        let orig: Vec<Complex64> = (0..30)
            .map(|i| Complex64::new((i as f64).cos(), 0.25 * i as f64))
            .collect();
        let mut data = orig.clone();
        grid.forward(&mut data);
        grid.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }
}
