//! Assembling and solving the LDA system `S w = b` for detector templates.
//!
//! `S` is the regularized stationary covariance of the negative corpus and
//! `b` the difference between the positive mean and the (constant per
//! channel) negative mean. Four back-ends are offered: dense Cholesky on
//! the materialized Toeplitz system, CG, CG preconditioned with the
//! Frobenius-nearest circulant, and the pure circulant system solved in
//! closed form. One [`Trainer`] can serve many templates against the same
//! statistics, reusing every pre-computable transform and factorization.

use crate::circulant::{CirculantCovariance, CirculantFactorization};
use crate::dense::CholeskyFactor;
use crate::error::{Error, Result};
use crate::solvers::{self, SolveOptions, SolveReport};
use crate::stats::StationaryStats;
use crate::template::Template;
use crate::toeplitz::ToeplitzOperator;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::time::Instant;

pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMethod {
    Cholesky,
    Cg,
    Pcg,
    Circulant,
}

impl TrainMethod {
    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Cholesky => "chol",
            TrainMethod::Cg => "cg",
            TrainMethod::Pcg => "pcg",
            TrainMethod::Circulant => "circ",
        }
    }

    pub const ALL: [TrainMethod; 4] = [
        TrainMethod::Cholesky,
        TrainMethod::Cg,
        TrainMethod::Pcg,
        TrainMethod::Circulant,
    ];
}

impl std::str::FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chol" | "cholesky" => Ok(TrainMethod::Cholesky),
            "cg" => Ok(TrainMethod::Cg),
            "pcg" => Ok(TrainMethod::Pcg),
            "circ" | "circulant" => Ok(TrainMethod::Circulant),
            other => Err(Error::Value(format!(
                "unknown training method '{other}' (expected chol, cg, pcg or circ)"
            ))),
        }
    }
}

/// One training job: the positive mean plus solver configuration. The
/// template geometry is taken from `pos_mean`.
#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub pos_mean: Template,
    pub method: TrainMethod,
    pub lambda: f64,
    pub options: SolveOptions,
}

/// `b = x_pos_mean - mu`, the class-mean difference; the negative mean is
/// constant per channel under stationarity.
pub fn build_rhs(pos_mean: &Template, stats: &StationaryStats) -> Result<Template> {
    if pos_mean.channels() != stats.channels() {
        return Err(Error::Shape(format!(
            "positive mean has {} channels, statistics have {}",
            pos_mean.channels(),
            stats.channels()
        )));
    }
    let mut b = pos_mean.clone();
    for p in 0..b.channels() {
        let mu = stats.mu(p);
        for u in 0..b.rows() {
            for v in 0..b.cols() {
                b.set(p, u, v, b.get(p, u, v) - mu);
            }
        }
    }
    Ok(b)
}

/// Learned detector weights plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTemplate {
    pub weights: Template,
    /// Decision threshold for `w^T x = c`; zero until calibrated, and only
    /// a default that scoring callers may override.
    pub threshold: f64,
    pub metadata: DetectorMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorMetadata {
    pub method: String,
    pub lambda: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub stats_fingerprint: String,
    /// Training wall-clock time, seconds since the epoch. Not serialized.
    pub created_unix: u64,
}

const DETECTOR_MAGIC: &[u8; 4] = b"DTEC";
const DETECTOR_VERSION: u32 = 1;

impl DetectorTemplate {
    /// Sets the threshold to the midpoint of the class score means.
    pub fn calibrate_threshold(&mut self, pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
        if pos_scores.is_empty() || neg_scores.is_empty() {
            return Err(Error::Empty("score lists for threshold calibration".into()));
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let c = 0.5 * (mean(pos_scores) + mean(neg_scores));
        self.threshold = c;
        Ok(c)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DETECTOR_MAGIC)?;
        w.write_u32::<LittleEndian>(DETECTOR_VERSION)?;
        w.write_u32::<LittleEndian>(self.weights.channels() as u32)?;
        w.write_u32::<LittleEndian>(self.weights.rows() as u32)?;
        w.write_u32::<LittleEndian>(self.weights.cols() as u32)?;
        w.write_f64::<LittleEndian>(self.threshold)?;
        for &x in self.weights.as_slice() {
            w.write_f64::<LittleEndian>(x)?;
        }
        let meta = format!(
            "method={}\nlambda={}\ntol={}\niterations={}\nstats_fingerprint={}\n",
            self.metadata.method,
            self.metadata.lambda,
            self.metadata.tolerance,
            self.metadata.iterations,
            self.metadata.stats_fingerprint,
        );
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(meta.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DETECTOR_MAGIC {
            return Err(Error::Format(format!(
                "bad detector magic {magic:?}, expected {DETECTOR_MAGIC:?}"
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DETECTOR_VERSION {
            return Err(Error::Format(format!(
                "unsupported detector version {version}"
            )));
        }
        let k = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let threshold = r.read_f64::<LittleEndian>()?;
        if k < 1 || m < 1 || n < 1 {
            return Err(Error::Format(format!(
                "detector file declares degenerate geometry {k}x{m}x{n}"
            )));
        }
        let mut data = vec![0.0; k * m * n];
        for x in data.iter_mut() {
            *x = r.read_f64::<LittleEndian>()?;
        }
        let meta_len = r.read_u32::<LittleEndian>()? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta_text = String::from_utf8(meta_bytes)
            .map_err(|_| Error::Format("detector metadata is not UTF-8".into()))?;

        let mut metadata = DetectorMetadata {
            method: String::new(),
            lambda: 0.0,
            tolerance: 0.0,
            iterations: 0,
            stats_fingerprint: String::new(),
            created_unix: 0,
        };
        for line in meta_text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            match key {
                "method" => metadata.method = value.to_string(),
                "lambda" => {
                    metadata.lambda = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad lambda '{value}'")))?
                }
                "tol" => {
                    metadata.tolerance = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad tol '{value}'")))?
                }
                "iterations" => {
                    metadata.iterations = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad iterations '{value}'")))?
                }
                "stats_fingerprint" => metadata.stats_fingerprint = value.to_string(),
                _ => {}
            }
        }
        Ok(DetectorTemplate {
            weights: Template::from_flat(k, m, n, data)?,
            threshold,
            metadata,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
struct GeometryKey {
    m: usize,
    n: usize,
    lambda_bits: u64,
}

#[derive(Default)]
struct Prepared {
    toeplitz: Option<ToeplitzOperator>,
    cholesky: Option<CholeskyFactor>,
    circulant: Option<CirculantFactorization>,
}

/// Trains detectors against one set of statistics, caching the
/// pre-computable state (slice transforms, projections, factorizations)
/// per template geometry and regularizer. The first request for a geometry
/// pays the cold cost; later requests report only warm time.
pub struct Trainer<'a> {
    stats: &'a StationaryStats,
    fingerprint: String,
    prepared: HashMap<GeometryKey, Prepared>,
}

impl<'a> Trainer<'a> {
    pub fn new(stats: &'a StationaryStats) -> Self {
        Trainer {
            stats,
            fingerprint: stats.fingerprint(),
            prepared: HashMap::new(),
        }
    }

    pub fn stats(&self) -> &StationaryStats {
        self.stats
    }

    fn key(&self, m: usize, n: usize, lambda: f64) -> GeometryKey {
        GeometryKey {
            m,
            n,
            lambda_bits: lambda.to_bits(),
        }
    }

    /// Builds the Toeplitz operator if missing; returns the cold seconds
    /// spent now (zero on a cache hit).
    fn ensure_toeplitz(&mut self, m: usize, n: usize, lambda: f64) -> Result<f64> {
        let key = self.key(m, n, lambda);
        if self.prepared.entry(key).or_default().toeplitz.is_some() {
            return Ok(0.0);
        }
        let start = Instant::now();
        let op = ToeplitzOperator::from_stats(self.stats, m, n, lambda)?;
        let elapsed = start.elapsed().as_secs_f64();
        self.prepared.get_mut(&key).unwrap().toeplitz = Some(op);
        Ok(elapsed)
    }

    fn ensure_cholesky(&mut self, m: usize, n: usize, lambda: f64) -> Result<f64> {
        let key = self.key(m, n, lambda);
        let mut cold = self.ensure_toeplitz(m, n, lambda)?;
        let entry = self.prepared.get_mut(&key).unwrap();
        if entry.cholesky.is_none() {
            let start = Instant::now();
            let dense = entry.toeplitz.as_ref().unwrap().densify()?;
            let factor = CholeskyFactor::new(&dense)?;
            cold += start.elapsed().as_secs_f64();
            self.prepared.get_mut(&key).unwrap().cholesky = Some(factor);
        }
        Ok(cold)
    }

    fn ensure_circulant(&mut self, m: usize, n: usize, lambda: f64) -> Result<f64> {
        let key = self.key(m, n, lambda);
        if self.prepared.entry(key).or_default().circulant.is_some() {
            return Ok(0.0);
        }
        let start = Instant::now();
        let projected = CirculantCovariance::project_from_toeplitz(self.stats, m, n, lambda)?;
        let factorization = projected.factorize()?;
        let elapsed = start.elapsed().as_secs_f64();
        self.prepared.get_mut(&key).unwrap().circulant = Some(factorization);
        Ok(elapsed)
    }

    /// Solves the LDA system for one request.
    pub fn train(&mut self, request: &TrainRequest) -> Result<(DetectorTemplate, SolveReport)> {
        let m = request.pos_mean.rows();
        let n = request.pos_mean.cols();
        let lambda = request.lambda;
        if !(lambda >= 0.0) {
            return Err(Error::Value(format!(
                "regularizer must be non-negative, got {lambda}"
            )));
        }
        self.stats.require_extent(m, n)?;
        let b = build_rhs(&request.pos_mean, self.stats)?;
        if b.norm() == 0.0 {
            return Err(Error::Degenerate(
                "positive mean equals the negative mean; the classes are indistinguishable".into(),
            ));
        }
        let key = self.key(m, n, lambda);

        let mut report = match request.method {
            TrainMethod::Cholesky => {
                let cold = self.ensure_cholesky(m, n, lambda)?;
                let factor = self.prepared[&key].cholesky.as_ref().unwrap();
                let warm_start = Instant::now();
                let w = factor.solve(b.as_slice());
                let warm = warm_start.elapsed().as_secs_f64();
                let mut report = self.direct_report(w, &b, m, n, lambda)?;
                report.cold_seconds = cold;
                report.warm_seconds = warm;
                report
            }
            TrainMethod::Cg => {
                let cold = self.ensure_toeplitz(m, n, lambda)?;
                let op = self.prepared[&key].toeplitz.as_ref().unwrap();
                let mut report = solvers::cg(op, b.as_slice(), &request.options)?;
                report.cold_seconds = cold;
                report
            }
            TrainMethod::Pcg => {
                let mut cold = self.ensure_toeplitz(m, n, lambda)?;
                cold += self.ensure_circulant(m, n, lambda)?;
                let entry = &self.prepared[&key];
                let op = entry.toeplitz.as_ref().unwrap();
                let pre = entry.circulant.as_ref().unwrap();
                let mut report = solvers::pcg(op, pre, b.as_slice(), &request.options)?;
                report.cold_seconds = cold;
                report
            }
            TrainMethod::Circulant => {
                let cold = self.ensure_circulant(m, n, lambda)?;
                let factorization = self.prepared[&key].circulant.as_ref().unwrap();
                let warm_start = Instant::now();
                let w = factorization.solve(&b)?;
                let warm = warm_start.elapsed().as_secs_f64();
                // untimed diagnostic: how far the circulant solution is from
                // solving the Toeplitz system it approximates
                self.ensure_toeplitz(m, n, lambda)?;
                let mut report = self.direct_report(w.into_vec(), &b, m, n, lambda)?;
                report.cold_seconds = cold;
                report.warm_seconds = warm;
                report
            }
        };

        if !report.solution.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "detector weights from method {}",
                request.method.name()
            )));
        }
        let weights = Template::from_flat(b.channels(), m, n, std::mem::take(&mut report.solution))?;
        report.solution = weights.as_slice().to_vec();

        let detector = DetectorTemplate {
            weights,
            threshold: 0.0,
            metadata: DetectorMetadata {
                method: request.method.name().to_string(),
                lambda,
                tolerance: request.options.tolerance,
                iterations: report.iterations,
                stats_fingerprint: self.fingerprint.clone(),
                created_unix: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        };
        Ok((detector, report))
    }

    /// Report for a direct (single application) method, with the residual
    /// measured against the Toeplitz system.
    fn direct_report(
        &self,
        w: Vec<f64>,
        b: &Template,
        m: usize,
        n: usize,
        lambda: f64,
    ) -> Result<SolveReport> {
        let key = self.key(m, n, lambda);
        let op = self.prepared[&key].toeplitz.as_ref().unwrap();
        let wt = Template::from_flat(b.channels(), m, n, w)?;
        let applied = op.matvec(&wt)?;
        let num: f64 = applied
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(a, bv)| (a - bv) * (a - bv))
            .sum::<f64>()
            .sqrt();
        let residual = num / b.norm();
        Ok(SolveReport {
            solution: wt.into_vec(),
            iterations: 1,
            final_residual: residual,
            residual_history: Some(vec![1.0, residual]),
            time_history: Some(vec![0.0, 0.0]),
            cold_seconds: 0.0,
            warm_seconds: 0.0,
        })
    }
}

/// One-shot convenience: builds a throwaway [`Trainer`], so all cold costs
/// land on this call.
pub fn train(stats: &StationaryStats, request: &TrainRequest) -> Result<(DetectorTemplate, SolveReport)> {
    Trainer::new(stats).train(request)
}
