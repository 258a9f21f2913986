//! Seeded synthetic data: stationary Gaussian textures, planted patterns
//! and random statistics. Everything here is deterministic given the RNG,
//! which keeps end-to-end tests and benches reproducible without external
//! corpora.

use crate::stats::{FeatureImage, StationaryAccumulator, StationaryStats};
use crate::template::Template;
use rand::Rng;

/// Random relative-displacement covariances with the symmetry
/// `g_pq[du,dv] == g_qp[-du,-dv]` holding bit-for-bit. Not necessarily
/// positive definite; meant for operator and projection oracles.
pub fn random_stats<R: Rng>(rng: &mut R, k: usize, dmax_u: usize, dmax_v: usize) -> StationaryStats {
    let su = 2 * dmax_u + 1;
    let sv = 2 * dmax_v + 1;
    let mut g = vec![0.0; k * k * su * sv];
    let idx = |p: usize, q: usize, du: i64, dv: i64| {
        ((p * k + q) * su + (du + dmax_u as i64) as usize) * sv + (dv + dmax_v as i64) as usize
    };
    for p in 0..k {
        for q in p..k {
            for du in -(dmax_u as i64)..=dmax_u as i64 {
                for dv in -(dmax_v as i64)..=dmax_v as i64 {
                    if p == q && !(du > 0 || (du == 0 && dv >= 0)) {
                        continue;
                    }
                    let value = rng.gen_range(-1.0..1.0);
                    g[idx(p, q, du, dv)] = value;
                    g[idx(q, p, -du, -dv)] = value;
                }
            }
        }
    }
    StationaryStats::from_parts(k, dmax_u, dmax_v, g, vec![0.0; k], true, 0, 0)
        .expect("construction maintains the symmetry")
}

/// A stationary Gaussian texture distribution: per-channel white noise,
/// smoothed with a periodic box filter, mixed across channels, shifted by
/// fixed per-channel means. One model describes one corpus.
#[derive(Debug, Clone)]
pub struct TextureModel {
    k: usize,
    smooth: usize,
    mixing: Vec<f64>,
    means: Vec<f64>,
}

impl TextureModel {
    /// Draws the corpus-level parameters (channel mixing and means).
    pub fn new<R: Rng>(rng: &mut R, k: usize, smooth: usize) -> Self {
        assert!(k >= 1);
        let mut mixing = vec![0.0; k * k];
        let scale = 0.6 / (k as f64).sqrt();
        for p in 0..k {
            for q in 0..k {
                let base = if p == q { 0.8 } else { 0.0 };
                mixing[p * k + q] = base + scale * rng.gen_range(-1.0..1.0);
            }
        }
        let means = (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect();
        TextureModel {
            k,
            smooth,
            mixing,
            means,
        }
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Samples one `h x w` texture image.
    pub fn sample<R: Rng>(&self, rng: &mut R, h: usize, w: usize) -> FeatureImage {
        let cells = h * w;
        let mut raw: Vec<Vec<f64>> = (0..self.k)
            .map(|_| (0..cells).map(|_| gaussian(rng)).collect())
            .collect();
        for plane in raw.iter_mut() {
            smooth_periodic(plane, h, w, self.smooth);
        }
        let mut data = vec![0.0; self.k * cells];
        for p in 0..self.k {
            for i in 0..cells {
                let mut value = self.means[p];
                for q in 0..self.k {
                    value += self.mixing[p * self.k + q] * raw[q][i];
                }
                data[p * cells + i] = value;
            }
        }
        FeatureImage::new(self.k, h, w, data).expect("finite by construction")
    }
}

/// Standard normal via Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Separable periodic box smoothing, scaled to preserve unit variance of
/// white input.
fn smooth_periodic(plane: &mut [f64], h: usize, w: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let span = (2 * radius + 1) as f64;
    let norm = 1.0 / span.sqrt();
    let mut tmp = vec![0.0; plane.len()];
    for u in 0..h {
        for v in 0..w {
            let mut s = 0.0;
            for t in -(radius as i64)..=radius as i64 {
                let vv = (v as i64 + t).rem_euclid(w as i64) as usize;
                s += plane[u * w + vv];
            }
            tmp[u * w + v] = s * norm;
        }
    }
    for v in 0..w {
        for u in 0..h {
            let mut s = 0.0;
            for t in -(radius as i64)..=radius as i64 {
                let uu = (u as i64 + t).rem_euclid(h as i64) as usize;
                s += tmp[uu * w + v];
            }
            plane[u * w + v] = s * norm;
        }
    }
}

/// Gathers finalized statistics from a fresh texture corpus.
#[allow(clippy::too_many_arguments)]
pub fn texture_stats<R: Rng>(
    rng: &mut R,
    k: usize,
    dmax_u: usize,
    dmax_v: usize,
    images: usize,
    h: usize,
    w: usize,
    smooth: usize,
) -> StationaryStats {
    let model = TextureModel::new(rng, k, smooth);
    let mut acc = StationaryAccumulator::new(k, dmax_u, dmax_v);
    for _ in 0..images {
        acc.accumulate_fft(&model.sample(rng, h, w))
            .expect("synthetic images are valid");
    }
    acc.finalize(true).expect("texture corpus covers the extent")
}

/// A fixed detection target: smoothed noise, zero mean, unit RMS, scaled by
/// `contrast`.
pub fn pattern<R: Rng>(rng: &mut R, k: usize, m: usize, n: usize, contrast: f64) -> Template {
    let cells = m * n;
    let mut planes: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..cells).map(|_| gaussian(rng)).collect())
        .collect();
    for plane in planes.iter_mut() {
        smooth_periodic(plane, m, n, 1);
    }
    let total: f64 = planes.iter().flatten().sum();
    let mean = total / (k * cells) as f64;
    let mut sq = 0.0;
    for plane in planes.iter_mut() {
        for x in plane.iter_mut() {
            *x -= mean;
            sq += *x * *x;
        }
    }
    let rms = (sq / (k * cells) as f64).sqrt().max(1e-12);
    let mut out = Template::zeros(k, m, n);
    for (p, plane) in planes.iter().enumerate() {
        for u in 0..m {
            for v in 0..n {
                out.set(p, u, v, plane[u * n + v] / rms * contrast);
            }
        }
    }
    out
}

/// Adds `pattern` into `image` with its top-left corner at `(u0, v0)`.
pub fn plant(image: &mut FeatureImage, pattern: &Template, u0: usize, v0: usize) {
    assert_eq!(image.channels(), pattern.channels());
    assert!(u0 + pattern.rows() <= image.height());
    assert!(v0 + pattern.cols() <= image.width());
    for p in 0..pattern.channels() {
        for i in 0..pattern.rows() {
            for j in 0..pattern.cols() {
                let value = image.value(p, u0 + i, v0 + j) + pattern.get(p, i, j);
                image.set(p, u0 + i, v0 + j, value);
            }
        }
    }
}
