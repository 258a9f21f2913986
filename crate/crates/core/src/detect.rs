//! Single-scale sliding-window evaluation: dense scoring by FFT
//! cross-correlation, greedy non-maximum suppression and greedy
//! ground-truth matching.
//!
//! Only windows lying wholly inside the image are scored; there is no
//! padding or extension of any kind. All tie-breaking is lexicographic by
//! `(u, v)` after score, so results are reproducible bit-for-bit.

use crate::error::{Error, Result};
use crate::fft::{good_size, FftGrid};
use crate::stats::FeatureImage;
use crate::trainer::DetectorTemplate;
use rustfft::num_complex::Complex64;

/// An axis-aligned box in feature-grid units: top-left `(u, v)`, extent
/// `m x n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub u: usize,
    pub v: usize,
    pub m: usize,
    pub n: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.m * self.n
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let du = overlap(self.u, self.m, other.u, other.m);
        let dv = overlap(self.v, self.n, other.v, other.n);
        du * dv
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Fraction of `self` covered by `other`.
    pub fn coverage_by(&self, other: &Rect) -> f64 {
        self.intersection_area(other) as f64 / self.area() as f64
    }
}

fn overlap(a: usize, alen: usize, b: usize, blen: usize) -> usize {
    let lo = a.max(b);
    let hi = (a + alen).min(b + blen);
    hi.saturating_sub(lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub rect: Rect,
    pub score: f64,
}

/// Scores of every valid template placement: entry `(u, v)` is the
/// correlation of the detector with the window whose top-left pixel is
/// `(u, v)`.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    #[inline]
    pub fn score(&self, u: usize, v: usize) -> f64 {
        self.scores[u * self.width + v]
    }

    /// Highest-scoring placement, ties broken by `(u, v)` ascending.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for u in 0..self.height {
            for v in 0..self.width {
                let s = self.score(u, v);
                if s > best.2 {
                    best = (u, v, s);
                }
            }
        }
        best
    }

    /// All placements scoring at least `threshold`, as detections of the
    /// given template extent.
    pub fn detections(&self, m: usize, n: usize, threshold: f64) -> Vec<Detection> {
        let mut out = Vec::new();
        for u in 0..self.height {
            for v in 0..self.width {
                let score = self.score(u, v);
                if score >= threshold {
                    out.push(Detection {
                        rect: Rect { u, v, m, n },
                        score,
                    });
                }
            }
        }
        out
    }
}

fn check_scoring(det: &DetectorTemplate, f: &FeatureImage) -> Result<(usize, usize)> {
    let w = &det.weights;
    if f.channels() != w.channels() {
        return Err(Error::Shape(format!(
            "image has {} channels, detector expects {}",
            f.channels(),
            w.channels()
        )));
    }
    if f.height() < w.rows() || f.width() < w.cols() {
        return Err(Error::Shape(format!(
            "image {}x{} is smaller than the {}x{} template",
            f.height(),
            f.width(),
            w.rows(),
            w.cols()
        )));
    }
    Ok((f.height() - w.rows() + 1, f.width() - w.cols() + 1))
}

/// Dense evaluation of `w^T x` over all valid windows via FFT
/// cross-correlation of each channel.
pub fn score_image(det: &DetectorTemplate, f: &FeatureImage) -> Result<ScoreMap> {
    let (out_h, out_w) = check_scoring(det, f)?;
    let k = f.channels();
    let ph = good_size(f.height());
    let pw = good_size(f.width());
    let grid = FftGrid::new(ph, pw);
    let cells = ph * pw;

    let mut acc = vec![Complex64::default(); cells];
    let mut img_buf = vec![Complex64::default(); cells];
    let mut w_buf = vec![Complex64::default(); cells];
    for p in 0..k {
        img_buf.fill(Complex64::default());
        for u in 0..f.height() {
            for v in 0..f.width() {
                img_buf[u * pw + v] = Complex64::new(f.value(p, u, v), 0.0);
            }
        }
        grid.forward(&mut img_buf);
        det.weights.scatter_channel(p, ph, pw, &mut w_buf);
        grid.forward(&mut w_buf);
        for (a, (wv, iv)) in acc.iter_mut().zip(w_buf.iter().zip(&img_buf)) {
            *a += wv.conj() * iv;
        }
    }
    grid.inverse(&mut acc);

    let mut scores = vec![0.0; out_h * out_w];
    for u in 0..out_h {
        for v in 0..out_w {
            scores[u * out_w + v] = acc[u * pw + v].re;
        }
    }
    Ok(ScoreMap {
        height: out_h,
        width: out_w,
        scores,
    })
}

/// Direct triple-loop scoring; the oracle for the FFT path.
pub fn score_image_direct(det: &DetectorTemplate, f: &FeatureImage) -> Result<ScoreMap> {
    let (out_h, out_w) = check_scoring(det, f)?;
    let w = &det.weights;
    let mut scores = vec![0.0; out_h * out_w];
    for u in 0..out_h {
        for v in 0..out_w {
            let mut s = 0.0;
            for p in 0..w.channels() {
                for i in 0..w.rows() {
                    for j in 0..w.cols() {
                        s += w.get(p, i, j) * f.value(p, u + i, v + j);
                    }
                }
            }
            scores[u * out_w + v] = s;
        }
    }
    Ok(ScoreMap {
        height: out_h,
        width: out_w,
        scores,
    })
}

/// Suppression thresholds: a kept detection removes any candidate it covers
/// by more than `coverage` or overlaps above `iou`.
#[derive(Debug, Clone, Copy)]
pub struct NmsParams {
    pub iou: f64,
    pub coverage: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            iou: 0.3,
            coverage: 0.6,
        }
    }
}

/// Descending score, ties by `(u, v)` ascending.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(dets[a].rect.u.cmp(&dets[b].rect.u))
            .then(dets[a].rect.v.cmp(&dets[b].rect.v))
    });
    order
}

/// Greedy non-maximum suppression.
///
/// Candidates that are not maxima within their four-connected neighbourhood
/// (same extent, positions differing by one grid step) are discarded first.
/// The survivors are visited in rank order; each kept detection suppresses
/// any remaining candidate `B` with `|A and B| / |B| > coverage` or
/// `IoU(A, B) > iou`.
pub fn nms_greedy(dets: &[Detection], params: &NmsParams) -> Vec<Detection> {
    let local_max: Vec<bool> = dets
        .iter()
        .map(|d| {
            !dets.iter().any(|e| {
                e.rect.m == d.rect.m
                    && e.rect.n == d.rect.n
                    && e.rect.u.abs_diff(d.rect.u) + e.rect.v.abs_diff(d.rect.v) == 1
                    && e.score > d.score
            })
        })
        .collect();

    let order = ranked(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for &i in &order {
        if suppressed[i] || !local_max[i] {
            continue;
        }
        kept.push(dets[i]);
        let a = dets[i].rect;
        for &j in &order {
            if j == i || suppressed[j] {
                continue;
            }
            let b = dets[j].rect;
            if b.coverage_by(&a) > params.coverage || a.iou(&b) > params.iou {
                suppressed[j] = true;
            }
        }
        suppressed[i] = true;
    }
    kept
}

/// Greedy assignment of detections to ground truths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// `(detection index, truth index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

/// Visits detections in descending score; each claims the still-unmatched
/// truth it overlaps most, provided that IoU exceeds 0.5.
pub fn match_detections(dets: &[Detection], truths: &[Rect]) -> MatchResult {
    let order = ranked(dets);
    let mut truth_taken = vec![false; truths.len()];
    let mut matches = Vec::new();
    let mut unmatched_detections = Vec::new();
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (t, rect) in truths.iter().enumerate() {
            if truth_taken[t] {
                continue;
            }
            let iou = dets[i].rect.iou(rect);
            if iou > 0.5 && best.map_or(true, |(_, b)| iou > b) {
                best = Some((t, iou));
            }
        }
        match best {
            Some((t, _)) => {
                truth_taken[t] = true;
                matches.push((i, t));
            }
            None => unmatched_detections.push(i),
        }
    }
    let unmatched_truths = (0..truths.len()).filter(|&t| !truth_taken[t]).collect();
    MatchResult {
        matches,
        unmatched_detections,
        unmatched_truths,
    }
}
