//! Stationary second-order statistics of multi-channel feature images.
//!
//! For every channel pair `(p, q)` and relative displacement `(du, dv)` the
//! accumulator keeps the raw sum of products `f_p[u,v] * f_q[u+du, v+dv]`
//! over all in-bounds pixel pairs of every image, together with the count of
//! valid pairs per displacement and per-channel pixel sums. Numerator and
//! denominator stay unreduced so partial accumulators from a parallel corpus
//! traversal can be merged; normalization and mean subtraction happen once
//! at [`StationaryAccumulator::finalize`].

use crate::error::{Error, Result};
use crate::fft::{good_size, FftGrid};
use crate::template::Template;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex64;
use std::io::{Read, Write};

/// A `k`-channel image of `h x w` real feature values.
///
/// Planes are stored channel-major, row-major within a plane:
/// `data[(p*h + u)*w + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    k: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureImage {
    pub fn new(k: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if k < 1 || h < 1 || w < 1 {
            return Err(Error::Shape(format!(
                "feature image dimensions must be positive, got k={k}, h={h}, w={w}"
            )));
        }
        if data.len() != k * h * w {
            return Err(Error::Shape(format!(
                "feature image data has {} values, expected {}",
                data.len(),
                k * h * w
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature image value at flat index {pos} is not finite"
            )));
        }
        Ok(FeatureImage { k, h, w, data })
    }

    pub fn from_fn(k: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(k * h * w);
        for p in 0..k {
            for u in 0..h {
                for v in 0..w {
                    data.push(f(p, u, v));
                }
            }
        }
        FeatureImage::new(k, h, w, data).expect("from_fn produced an invalid image")
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn value(&self, p: usize, u: usize, v: usize) -> f64 {
        self.data[(p * self.h + u) * self.w + v]
    }

    #[inline]
    pub fn set(&mut self, p: usize, u: usize, v: usize, value: f64) {
        self.data[(p * self.h + u) * self.w + v] = value;
    }

    pub fn plane(&self, p: usize) -> &[f64] {
        &self.data[p * self.h * self.w..(p + 1) * self.h * self.w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Unreduced sums of pixel-pair products, mergeable across corpus shards.
#[derive(Debug, Clone)]
pub struct StationaryAccumulator {
    k: usize,
    dmax_u: usize,
    dmax_v: usize,
    /// `pair_sums[(p*k+q)*su + du_off][dv_off]` flattened, `dv` fastest.
    pair_sums: Vec<f64>,
    /// valid pair counts per displacement, shared across channel pairs
    pair_counts: Vec<u64>,
    channel_sums: Vec<f64>,
    pixel_count: u64,
    image_count: u64,
}

impl StationaryAccumulator {
    pub fn new(k: usize, dmax_u: usize, dmax_v: usize) -> Self {
        assert!(k >= 1);
        let su = 2 * dmax_u + 1;
        let sv = 2 * dmax_v + 1;
        StationaryAccumulator {
            k,
            dmax_u,
            dmax_v,
            pair_sums: vec![0.0; k * k * su * sv],
            pair_counts: vec![0; su * sv],
            channel_sums: vec![0.0; k],
            pixel_count: 0,
            image_count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn dmax_u(&self) -> usize {
        self.dmax_u
    }

    pub fn dmax_v(&self) -> usize {
        self.dmax_v
    }

    pub fn pixel_count(&self) -> u64 {
        self.pixel_count
    }

    pub fn image_count(&self) -> u64 {
        self.image_count
    }

    #[inline]
    fn pair_index(&self, p: usize, q: usize, du: i64, dv: i64) -> usize {
        let su = 2 * self.dmax_u + 1;
        let sv = 2 * self.dmax_v + 1;
        let a = (du + self.dmax_u as i64) as usize;
        let b = (dv + self.dmax_v as i64) as usize;
        ((p * self.k + q) * su + a) * sv + b
    }

    #[inline]
    fn count_index(&self, du: i64, dv: i64) -> usize {
        let sv = 2 * self.dmax_v + 1;
        (du + self.dmax_u as i64) as usize * sv + (dv + self.dmax_v as i64) as usize
    }

    pub fn pair_sum(&self, p: usize, q: usize, du: i64, dv: i64) -> f64 {
        self.pair_sums[self.pair_index(p, q, du, dv)]
    }

    pub fn pair_count(&self, du: i64, dv: i64) -> u64 {
        self.pair_counts[self.count_index(du, dv)]
    }

    pub fn channel_sum(&self, p: usize) -> f64 {
        self.channel_sums[p]
    }

    fn check_image(&self, f: &FeatureImage) -> Result<()> {
        if f.channels() != self.k {
            return Err(Error::Shape(format!(
                "image has {} channels, accumulator tracks {}",
                f.channels(),
                self.k
            )));
        }
        Ok(())
    }

    /// Bookkeeping shared by both accumulation paths: pair counts, channel
    /// sums and pixel counts. Counts use the exact closed form
    /// `(H - |du|) * (W - |dv|)`, clamped at zero.
    fn account_image(&mut self, f: &FeatureImage) {
        let h = f.height() as i64;
        let w = f.width() as i64;
        for du in -(self.dmax_u as i64)..=self.dmax_u as i64 {
            for dv in -(self.dmax_v as i64)..=self.dmax_v as i64 {
                let pairs = (h - du.abs()).max(0) as u64 * (w - dv.abs()).max(0) as u64;
                let idx = self.count_index(du, dv);
                self.pair_counts[idx] += pairs;
            }
        }
        for p in 0..self.k {
            self.channel_sums[p] += f.plane(p).iter().sum::<f64>();
        }
        self.pixel_count += (h * w) as u64;
        self.image_count += 1;
    }

    /// Stores one correlation value under the symmetry
    /// `pair_sums[p][q][du][dv] == pair_sums[q][p][-du][-dv]`, which this
    /// maintains exactly by writing both entries from the same float.
    fn add_pair(&mut self, p: usize, q: usize, du: i64, dv: i64, value: f64) {
        let i = self.pair_index(p, q, du, dv);
        self.pair_sums[i] += value;
        let j = self.pair_index(q, p, -du, -dv);
        if j != i {
            self.pair_sums[j] += value;
        }
    }

    /// Accumulates one image via zero-padded FFT cross-correlation of the
    /// channel planes: `O(k^2 D log D)` in the pixel count `D`.
    pub fn accumulate_fft(&mut self, f: &FeatureImage) -> Result<()> {
        self.check_image(f)?;
        let h = f.height();
        let w = f.width();
        // displacements beyond the image contribute exactly zero
        let eff_u = self.dmax_u.min(h - 1) as i64;
        let eff_v = self.dmax_v.min(w - 1) as i64;
        let ph = good_size(h + eff_u as usize);
        let pw = good_size(w + eff_v as usize);
        let grid = FftGrid::new(ph, pw);

        let mut spectra = Vec::with_capacity(self.k);
        for p in 0..self.k {
            let mut buf = vec![Complex64::default(); ph * pw];
            for u in 0..h {
                for v in 0..w {
                    buf[u * pw + v] = Complex64::new(f.value(p, u, v), 0.0);
                }
            }
            grid.forward(&mut buf);
            spectra.push(buf);
        }

        let mut corr = vec![Complex64::default(); ph * pw];
        for p in 0..self.k {
            for q in p..self.k {
                for (c, (a, b)) in corr
                    .iter_mut()
                    .zip(spectra[p].iter().zip(spectra[q].iter()))
                {
                    *c = a.conj() * b;
                }
                grid.inverse(&mut corr);
                for du in -eff_u..=eff_u {
                    for dv in -eff_v..=eff_v {
                        if p == q && !(du > 0 || (du == 0 && dv >= 0)) {
                            continue;
                        }
                        let a = du.rem_euclid(ph as i64) as usize;
                        let b = dv.rem_euclid(pw as i64) as usize;
                        self.add_pair(p, q, du, dv, corr[a * pw + b].re);
                    }
                }
            }
        }
        self.account_image(f);
        Ok(())
    }

    /// Accumulates one image by direct double summation, `O(k^2 d D)`.
    /// Semantically equivalent to [`accumulate_fft`](Self::accumulate_fft)
    /// up to floating-point reordering; kept as the oracle path.
    pub fn accumulate_naive(&mut self, f: &FeatureImage) -> Result<()> {
        self.check_image(f)?;
        let h = f.height() as i64;
        let w = f.width() as i64;
        let eff_u = self.dmax_u.min(f.height() - 1) as i64;
        let eff_v = self.dmax_v.min(f.width() - 1) as i64;
        for p in 0..self.k {
            for q in p..self.k {
                for du in -eff_u..=eff_u {
                    for dv in -eff_v..=eff_v {
                        if p == q && !(du > 0 || (du == 0 && dv >= 0)) {
                            continue;
                        }
                        let mut sum = 0.0;
                        for u in 0.max(-du)..(h.min(h - du)) {
                            for v in 0.max(-dv)..(w.min(w - dv)) {
                                sum += f.value(p, u as usize, v as usize)
                                    * f.value(q, (u + du) as usize, (v + dv) as usize);
                            }
                        }
                        self.add_pair(p, q, du, dv, sum);
                    }
                }
            }
        }
        self.account_image(f);
        Ok(())
    }

    /// Element-wise merge of another accumulator into this one.
    pub fn merge_from(&mut self, other: &StationaryAccumulator) -> Result<()> {
        if self.k != other.k || self.dmax_u != other.dmax_u || self.dmax_v != other.dmax_v {
            return Err(Error::Shape(format!(
                "cannot merge accumulators of shape (k={}, {}x{}) and (k={}, {}x{})",
                self.k, self.dmax_u, self.dmax_v, other.k, other.dmax_u, other.dmax_v
            )));
        }
        for (a, b) in self.pair_sums.iter_mut().zip(&other.pair_sums) {
            *a += b;
        }
        for (a, b) in self.pair_counts.iter_mut().zip(&other.pair_counts) {
            *a += b;
        }
        for (a, b) in self.channel_sums.iter_mut().zip(&other.channel_sums) {
            *a += b;
        }
        self.pixel_count += other.pixel_count;
        self.image_count += other.image_count;
        Ok(())
    }

    /// Normalizes the raw sums into relative-displacement covariances.
    ///
    /// Each entry becomes `pair_sum / pair_count`; with `centered` the mean
    /// product `mu_p * mu_q` is subtracted afterwards, which is exactly the
    /// deferred mean subtraction identity
    /// `1/N sum (x - mean)(x - mean)^T = 1/N sum x x^T - mean mean^T`.
    pub fn finalize(&self, centered: bool) -> Result<StationaryStats> {
        if self.pixel_count == 0 {
            return Err(Error::Empty(
                "cannot finalize statistics from zero pixels".into(),
            ));
        }
        for du in -(self.dmax_u as i64)..=self.dmax_u as i64 {
            for dv in -(self.dmax_v as i64)..=self.dmax_v as i64 {
                if self.pair_counts[self.count_index(du, dv)] == 0 {
                    return Err(Error::ZeroPairCount { du, dv });
                }
            }
        }
        let mu: Vec<f64> = self
            .channel_sums
            .iter()
            .map(|s| s / self.pixel_count as f64)
            .collect();
        let su = 2 * self.dmax_u + 1;
        let sv = 2 * self.dmax_v + 1;
        let mut g = vec![0.0; self.k * self.k * su * sv];
        for p in 0..self.k {
            for q in 0..self.k {
                for du in -(self.dmax_u as i64)..=self.dmax_u as i64 {
                    for dv in -(self.dmax_v as i64)..=self.dmax_v as i64 {
                        let idx = self.pair_index(p, q, du, dv);
                        let count = self.pair_counts[self.count_index(du, dv)] as f64;
                        let mut value = self.pair_sums[idx] / count;
                        if centered {
                            value -= mu[p] * mu[q];
                        }
                        g[idx] = value;
                    }
                }
            }
        }
        StationaryStats::from_parts(
            self.k,
            self.dmax_u,
            self.dmax_v,
            g,
            mu,
            centered,
            self.image_count,
            self.pixel_count,
        )
    }
}

/// Finalized relative-displacement covariances `g` and channel means `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryStats {
    k: usize,
    dmax_u: usize,
    dmax_v: usize,
    /// index order `(p, q, du + dmax_u, dv + dmax_v)`, `dv` fastest
    g: Vec<f64>,
    mu: Vec<f64>,
    centered: bool,
    image_count: u64,
    pixel_count: u64,
}

const STATS_MAGIC: &[u8; 4] = b"STCV";
const STATS_VERSION: u32 = 1;
const FLAG_CENTERED: u32 = 1;

impl StationaryStats {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k: usize,
        dmax_u: usize,
        dmax_v: usize,
        g: Vec<f64>,
        mu: Vec<f64>,
        centered: bool,
        image_count: u64,
        pixel_count: u64,
    ) -> Result<Self> {
        let su = 2 * dmax_u + 1;
        let sv = 2 * dmax_v + 1;
        if g.len() != k * k * su * sv {
            return Err(Error::Shape(format!(
                "covariance array has {} entries, expected {}",
                g.len(),
                k * k * su * sv
            )));
        }
        if mu.len() != k {
            return Err(Error::Shape(format!(
                "mean vector has {} entries, expected {}",
                mu.len(),
                k
            )));
        }
        if !g.iter().chain(mu.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("statistics entries must be finite".into()));
        }
        let stats = StationaryStats {
            k,
            dmax_u,
            dmax_v,
            g,
            mu,
            centered,
            image_count,
            pixel_count,
        };
        // one mode of symmetric redundancy: g_pq[du,dv] == g_qp[-du,-dv]
        for p in 0..k {
            for q in 0..k {
                for du in -(dmax_u as i64)..=dmax_u as i64 {
                    for dv in -(dmax_v as i64)..=dmax_v as i64 {
                        let a = stats.g(p, q, du, dv);
                        let b = stats.g(q, p, -du, -dv);
                        if (a - b).abs() > 1e-12 {
                            return Err(Error::Value(format!(
                                "covariance symmetry violated at (p={p}, q={q}, du={du}, dv={dv}): \
                                 {a} vs {b}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(stats)
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn dmax_u(&self) -> usize {
        self.dmax_u
    }

    pub fn dmax_v(&self) -> usize {
        self.dmax_v
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn image_count(&self) -> u64 {
        self.image_count
    }

    pub fn pixel_count(&self) -> u64 {
        self.pixel_count
    }

    #[inline]
    pub fn g(&self, p: usize, q: usize, du: i64, dv: i64) -> f64 {
        debug_assert!(du.unsigned_abs() as usize <= self.dmax_u);
        debug_assert!(dv.unsigned_abs() as usize <= self.dmax_v);
        let su = 2 * self.dmax_u + 1;
        let sv = 2 * self.dmax_v + 1;
        let a = (du + self.dmax_u as i64) as usize;
        let b = (dv + self.dmax_v as i64) as usize;
        self.g[((p * self.k + q) * su + a) * sv + b]
    }

    pub fn mu(&self, p: usize) -> f64 {
        self.mu[p]
    }

    pub fn means(&self) -> &[f64] {
        &self.mu
    }

    /// Largest template the stored extent supports.
    pub fn max_template(&self) -> (usize, usize) {
        (self.dmax_u + 1, self.dmax_v + 1)
    }

    /// Checks that templates of `m x n` pixels are covered.
    pub fn require_extent(&self, m: usize, n: usize) -> Result<()> {
        if m < 1 || n < 1 {
            return Err(Error::Value(format!(
                "template extent must be positive, got {m}x{n}"
            )));
        }
        if m - 1 > self.dmax_u || n - 1 > self.dmax_v {
            return Err(Error::Extent(format!(
                "statistics support templates up to {}x{}, requested {}x{}",
                self.dmax_u + 1,
                self.dmax_v + 1,
                m,
                n
            )));
        }
        Ok(())
    }

    /// Restricts the stored displacements to those a `m x n` template needs.
    /// No recomputation: the same statistics serve any smaller template.
    pub fn crop(&self, m: usize, n: usize) -> Result<StationaryStats> {
        self.require_extent(m, n)?;
        let new_u = m - 1;
        let new_v = n - 1;
        let su = 2 * new_u + 1;
        let sv = 2 * new_v + 1;
        let mut g = vec![0.0; self.k * self.k * su * sv];
        let mut idx = 0;
        for p in 0..self.k {
            for q in 0..self.k {
                for du in -(new_u as i64)..=new_u as i64 {
                    for dv in -(new_v as i64)..=new_v as i64 {
                        g[idx] = self.g(p, q, du, dv);
                        idx += 1;
                    }
                }
            }
        }
        StationaryStats::from_parts(
            self.k,
            new_u,
            new_v,
            g,
            self.mu.clone(),
            self.centered,
            self.image_count,
            self.pixel_count,
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STATS_MAGIC)?;
        w.write_u32::<LittleEndian>(STATS_VERSION)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        w.write_u32::<LittleEndian>(self.dmax_u as u32)?;
        w.write_u32::<LittleEndian>(self.dmax_v as u32)?;
        w.write_u32::<LittleEndian>(if self.centered { FLAG_CENTERED } else { 0 })?;
        w.write_u64::<LittleEndian>(self.image_count)?;
        w.write_u64::<LittleEndian>(self.pixel_count)?;
        for &m in &self.mu {
            w.write_f64::<LittleEndian>(m)?;
        }
        for &v in &self.g {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STATS_MAGIC {
            return Err(Error::Format(format!(
                "bad statistics magic {magic:?}, expected {STATS_MAGIC:?}"
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != STATS_VERSION {
            return Err(Error::Format(format!(
                "unsupported statistics version {version}"
            )));
        }
        let k = r.read_u32::<LittleEndian>()? as usize;
        let dmax_u = r.read_u32::<LittleEndian>()? as usize;
        let dmax_v = r.read_u32::<LittleEndian>()? as usize;
        let flags = r.read_u32::<LittleEndian>()?;
        let image_count = r.read_u64::<LittleEndian>()?;
        let pixel_count = r.read_u64::<LittleEndian>()?;
        if k < 1 {
            return Err(Error::Format("statistics file declares k = 0".into()));
        }
        let mut mu = vec![0.0; k];
        for m in mu.iter_mut() {
            *m = r.read_f64::<LittleEndian>()?;
        }
        let len = k * k * (2 * dmax_u + 1) * (2 * dmax_v + 1);
        let mut g = vec![0.0; len];
        for v in g.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        StationaryStats::from_parts(
            k,
            dmax_u,
            dmax_v,
            g,
            mu,
            flags & FLAG_CENTERED != 0,
            image_count,
            pixel_count,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// FNV-1a hash of the serialized statistics, used to tie detectors to
    /// the statistics they were trained from.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).expect("in-memory write");
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

/// Element-wise mean of equally sized positive examples.
pub fn positive_mean(examples: &[FeatureImage], m: usize, n: usize) -> Result<Template> {
    if examples.is_empty() {
        return Err(Error::Empty("positive example list".into()));
    }
    let k = examples[0].channels();
    for (i, ex) in examples.iter().enumerate() {
        if ex.channels() != k || ex.height() != m || ex.width() != n {
            return Err(Error::Shape(format!(
                "positive example {i} is {}x{}x{}, expected {k}x{m}x{n}",
                ex.channels(),
                ex.height(),
                ex.width()
            )));
        }
    }
    let mut mean = Template::zeros(k, m, n);
    let scale = 1.0 / examples.len() as f64;
    for ex in examples {
        for p in 0..k {
            for u in 0..m {
                for v in 0..n {
                    let acc = mean.get(p, u, v) + ex.value(p, u, v);
                    mean.set(p, u, v, acc);
                }
            }
        }
    }
    for x in mean.as_mut_slice() {
        *x *= scale;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn image_1x3() -> FeatureImage {
        FeatureImage::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> FeatureImage {
        let data: Vec<f64> = (0..k * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureImage::new(k, h, w, data).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn hand_example_1x3() {
        let mut acc = StationaryAccumulator::new(1, 1, 2);
        acc.accumulate_fft(&image_1x3()).unwrap();
        assert!(close(acc.pair_sum(0, 0, 0, 0), 14.0, 1e-12));
        assert!(close(acc.pair_sum(0, 0, 0, 1), 8.0, 1e-12));
        assert_eq!(acc.pair_count(0, 1), 2);
        assert!(close(acc.channel_sum(0), 6.0, 1e-12));
        assert_eq!(acc.pixel_count(), 3);
        // vertical displacements are unobservable in a 1-row image
        assert_eq!(acc.pair_count(1, 0), 0);
        assert_eq!(acc.pair_sum(0, 0, 1, 0), 0.0);
    }

    #[test]
    fn naive_hand_example_2x2() {
        let img = FeatureImage::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut acc = StationaryAccumulator::new(1, 1, 1);
        acc.accumulate_naive(&img).unwrap();
        assert!(close(acc.pair_sum(0, 0, 1, 0), 11.0, 1e-12));
        assert_eq!(acc.pair_count(1, 0), 2);
    }

    #[test]
    fn all_zero_image_only_counts() {
        let img = FeatureImage::new(1, 3, 4, vec![0.0; 12]).unwrap();
        let mut acc = StationaryAccumulator::new(1, 1, 1);
        acc.accumulate_fft(&img).unwrap();
        assert!(acc.pair_sums.iter().all(|&x| x == 0.0));
        assert_eq!(acc.pixel_count(), 12);
        assert_eq!(acc.pair_count(0, 0), 12);
    }

    #[test]
    fn single_pixel_image_has_no_displaced_pairs() {
        let img = FeatureImage::new(2, 1, 1, vec![3.0, -2.0]).unwrap();
        let mut acc = StationaryAccumulator::new(2, 1, 1);
        acc.accumulate_fft(&img).unwrap();
        assert!(close(acc.pair_sum(0, 0, 0, 0), 9.0, 1e-12));
        assert!(close(acc.pair_sum(0, 1, 0, 0), -6.0, 1e-12));
        assert!(close(acc.pair_sum(1, 1, 0, 0), 4.0, 1e-12));
        assert_eq!(acc.pair_count(0, 1), 0);
        assert_eq!(acc.pair_sum(0, 0, 0, 1), 0.0);
    }

    #[test]
    fn proportional_channels_scale_linearly() {
        let base = random_image(&mut ChaCha8Rng::seed_from_u64(7), 1, 5, 6);
        let img = FeatureImage::from_fn(2, 5, 6, |p, u, v| {
            let x = base.value(0, u, v);
            if p == 0 {
                x
            } else {
                2.0 * x
            }
        });
        let mut acc = StationaryAccumulator::new(2, 2, 2);
        acc.accumulate_naive(&img).unwrap();
        for du in -2i64..=2 {
            for dv in -2i64..=2 {
                assert!(close(
                    acc.pair_sum(0, 1, du, dv),
                    2.0 * acc.pair_sum(0, 0, du, dv),
                    1e-12
                ));
            }
        }
    }

    #[test]
    fn fft_and_naive_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let k = rng.gen_range(1..=3);
            let h = rng.gen_range(1..=16);
            let w = rng.gen_range(1..=16);
            let dmax_u = rng.gen_range(0..=6);
            let dmax_v = rng.gen_range(0..=6);
            let img = random_image(&mut rng, k, h, w);
            let mut fft = StationaryAccumulator::new(k, dmax_u, dmax_v);
            let mut naive = StationaryAccumulator::new(k, dmax_u, dmax_v);
            fft.accumulate_fft(&img).unwrap();
            naive.accumulate_naive(&img).unwrap();
            for (a, b) in fft.pair_sums.iter().zip(&naive.pair_sums) {
                assert!(close(*a, *b, 1e-9), "fft {a} vs naive {b}");
            }
            assert_eq!(fft.pair_counts, naive.pair_counts);
        }
    }

    #[test]
    fn pair_counts_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (7, 5);
        let img = random_image(&mut rng, 1, h, w);
        let mut acc = StationaryAccumulator::new(1, 8, 8);
        acc.accumulate_fft(&img).unwrap();
        for du in -8i64..=8 {
            for dv in -8i64..=8 {
                let expect = (h as i64 - du.abs()).max(0) as u64 * (w as i64 - dv.abs()).max(0) as u64;
                assert_eq!(acc.pair_count(du, dv), expect, "at ({du},{dv})");
            }
        }
    }

    #[test]
    fn merge_matches_sequential_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a_img = random_image(&mut rng, 2, 6, 7);
        let b_img = random_image(&mut rng, 2, 5, 4);

        let mut seq = StationaryAccumulator::new(2, 3, 3);
        seq.accumulate_fft(&a_img).unwrap();
        seq.accumulate_fft(&b_img).unwrap();

        let mut a = StationaryAccumulator::new(2, 3, 3);
        a.accumulate_fft(&a_img).unwrap();
        let mut b = StationaryAccumulator::new(2, 3, 3);
        b.accumulate_fft(&b_img).unwrap();
        a.merge_from(&b).unwrap();

        assert_eq!(a.pair_counts, seq.pair_counts);
        assert_eq!(a.pixel_count, seq.pixel_count);
        for (x, y) in a.pair_sums.iter().zip(&seq.pair_sums) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut acc = StationaryAccumulator::new(1, 1, 2);
        acc.accumulate_fft(&image_1x3()).unwrap();
        let before = acc.clone();
        acc.merge_from(&StationaryAccumulator::new(1, 1, 2)).unwrap();
        assert_eq!(acc.pair_sums, before.pair_sums);
        assert_eq!(acc.pair_counts, before.pair_counts);
    }

    #[test]
    fn merge_counts_are_additive() {
        let mut a = StationaryAccumulator::new(1, 0, 2);
        a.accumulate_fft(&image_1x3()).unwrap();
        let mut b = StationaryAccumulator::new(1, 0, 2);
        b.accumulate_fft(&image_1x3()).unwrap();
        a.merge_from(&b).unwrap();
        assert_eq!(a.pair_count(0, 1), 4);
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let mut a = StationaryAccumulator::new(1, 1, 1);
        let b = StationaryAccumulator::new(2, 1, 1);
        assert!(a.merge_from(&b).is_err());
        let c = StationaryAccumulator::new(1, 2, 1);
        assert!(a.merge_from(&c).is_err());
    }

    #[test]
    fn finalize_hand_example() {
        let mut acc = StationaryAccumulator::new(1, 0, 1);
        acc.accumulate_fft(&image_1x3()).unwrap();
        let stats = acc.finalize(true).unwrap();
        assert_relative_eq!(stats.mu(0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(stats.g(0, 0, 0, 0), 14.0 / 3.0 - 4.0, epsilon = 1e-12);
        assert_relative_eq!(stats.g(0, 0, 0, 1), 0.0, epsilon = 1e-12);

        let raw = acc.finalize(false).unwrap();
        assert_relative_eq!(raw.g(0, 0, 0, 1), 4.0, epsilon = 1e-12);
        assert!(!raw.centered());
    }

    #[test]
    fn constant_corpus_has_zero_variance() {
        let mut acc = StationaryAccumulator::new(1, 1, 1);
        for _ in 0..3 {
            let img = FeatureImage::new(1, 4, 4, vec![2.5; 16]).unwrap();
            acc.accumulate_fft(&img).unwrap();
        }
        let stats = acc.finalize(true).unwrap();
        assert_relative_eq!(stats.mu(0), 2.5, epsilon = 1e-12);
        for du in -1i64..=1 {
            for dv in -1i64..=1 {
                assert_relative_eq!(stats.g(0, 0, du, dv), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn finalize_errors() {
        let acc = StationaryAccumulator::new(1, 1, 1);
        assert!(matches!(acc.finalize(true), Err(Error::Empty(_))));

        // a 1x3 image never observes vertical displacements
        let mut acc = StationaryAccumulator::new(1, 1, 1);
        acc.accumulate_fft(&image_1x3()).unwrap();
        match acc.finalize(true) {
            Err(Error::ZeroPairCount { du, .. }) => assert_eq!(du.abs(), 1),
            other => panic!("expected ZeroPairCount, got {other:?}"),
        }
    }

    #[test]
    fn finalized_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = StationaryAccumulator::new(3, 2, 2);
        for _ in 0..4 {
            acc.accumulate_fft(&random_image(&mut rng, 3, 9, 9)).unwrap();
        }
        let stats = acc.finalize(true).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                for du in -2i64..=2 {
                    for dv in -2i64..=2 {
                        assert_eq!(
                            stats.g(p, q, du, dv).to_bits(),
                            stats.g(q, p, -du, -dv).to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn centering_identity_matches_direct_covariance() {
        // 1/N sum (x - mean)(x - mean)^T == 1/N sum x x^T - mean mean^T
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let dim = rng.gen_range(1..=6);
            let count = rng.gen_range(1..=8);
            let vectors: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let mean: Vec<f64> = (0..dim)
                .map(|i| vectors.iter().map(|v| v[i]).sum::<f64>() / count as f64)
                .collect();
            for i in 0..dim {
                for j in 0..dim {
                    let direct: f64 = vectors
                        .iter()
                        .map(|v| (v[i] - mean[i]) * (v[j] - mean[j]))
                        .sum::<f64>()
                        / count as f64;
                    let deferred: f64 = vectors.iter().map(|v| v[i] * v[j]).sum::<f64>()
                        / count as f64
                        - mean[i] * mean[j];
                    assert!(close(direct, deferred, 1e-10));
                }
            }
        }
    }

    #[test]
    fn crop_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut acc = StationaryAccumulator::new(2, 3, 4);
        acc.accumulate_fft(&random_image(&mut rng, 2, 10, 12)).unwrap();
        let stats = acc.finalize(true).unwrap();

        let same = stats.crop(4, 5).unwrap();
        assert_eq!(same, stats);

        let tiny = stats.crop(1, 1).unwrap();
        assert_eq!(tiny.dmax_u(), 0);
        assert_eq!(tiny.dmax_v(), 0);
        assert_eq!(tiny.g(0, 1, 0, 0), stats.g(0, 1, 0, 0));

        let twice = stats.crop(3, 3).unwrap().crop(2, 2).unwrap();
        let once = stats.crop(2, 2).unwrap();
        assert_eq!(twice, once);

        match stats.crop(5, 2) {
            Err(Error::Extent(msg)) => assert!(msg.contains("4x5")),
            other => panic!("expected extent error, got {other:?}"),
        }
    }

    #[test]
    fn positive_mean_examples() {
        let x = random_image(&mut ChaCha8Rng::seed_from_u64(1), 2, 3, 3);
        let single = positive_mean(std::slice::from_ref(&x), 3, 3).unwrap();
        assert_relative_eq!(single.get(1, 2, 0), x.value(1, 2, 0));

        let neg = FeatureImage::from_fn(2, 3, 3, |p, u, v| -x.value(p, u, v));
        let zero = positive_mean(&[x.clone(), neg], 3, 3).unwrap();
        assert!(zero.as_slice().iter().all(|v| v.abs() < 1e-15));

        let consts: Vec<FeatureImage> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&c| FeatureImage::new(1, 2, 2, vec![c; 4]).unwrap())
            .collect();
        let mean = positive_mean(&consts, 2, 2).unwrap();
        assert!(mean.as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-15));

        assert!(positive_mean(&[], 2, 2).is_err());
        assert!(positive_mean(std::slice::from_ref(&x), 2, 3).is_err());
    }

    #[test]
    fn file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut acc = StationaryAccumulator::new(2, 2, 3);
        acc.accumulate_fft(&random_image(&mut rng, 2, 8, 9)).unwrap();
        let stats = acc.finalize(true).unwrap();

        let mut bytes = Vec::new();
        stats.write_to(&mut bytes).unwrap();
        let back = StationaryStats::read_from(&bytes[..]).unwrap();
        assert_eq!(back, stats);
        assert_eq!(back.fingerprint(), stats.fingerprint());

        // corrupt magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            StationaryStats::read_from(&bad[..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_nonfinite_images() {
        assert!(matches!(
            FeatureImage::new(1, 1, 2, vec![1.0, f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }
}
