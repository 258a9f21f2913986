//! Conjugate gradient, preconditioned conjugate gradient and a dense
//! Cholesky back-end over abstract symmetric positive definite operators.
//!
//! Residuals are always reported as the unpreconditioned relative residual
//! `||A w - b|| / ||b||`. Iterates start from `w = 0`, so a recorded
//! residual history begins at exactly 1.0.

use crate::dense::{CholeskyFactor, Matrix};
use crate::error::{Error, Result};
use std::io::Write;
use std::time::Instant;

/// A symmetric positive definite linear map.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.matvec(x, out);
    }
}

/// An approximate inverse applied inside PCG; must itself be symmetric
/// positive definite.
pub trait Preconditioner {
    fn dim(&self) -> usize;
    /// `out = M r`
    fn apply(&self, r: &[f64], out: &mut [f64]);
}

/// The trivial preconditioner; PCG with it reproduces CG exactly.
pub struct IdentityPreconditioner(pub usize);

impl Preconditioner for IdentityPreconditioner {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        out.copy_from_slice(r);
    }
}

/// An exact inverse; PCG with it converges in one iteration.
impl Preconditioner for CholeskyFactor {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.solve(r));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative residual target.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            record_history: false,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Value(format!(
                "solver tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::Value("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one solve: the solution plus convergence and timing data.
///
/// `cold_seconds` covers setup that is reusable across solves of the same
/// geometry (factorizations, pre-computable transforms); `warm_seconds` is
/// the per-solve cost. Iterative solvers only measure warm time themselves;
/// callers owning the setup fill in the cold part.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    /// One entry per iteration plus the initial 1.0, when recorded.
    pub residual_history: Option<Vec<f64>>,
    /// Cumulative warm seconds at each history entry.
    pub time_history: Option<Vec<f64>>,
    pub cold_seconds: f64,
    pub warm_seconds: f64,
}

impl SolveReport {
    /// Writes `iteration,residual,warm_seconds` rows for convergence plots.
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let history = self
            .residual_history
            .as_ref()
            .ok_or_else(|| Error::Empty("no residual history was recorded".into()))?;
        writeln!(w, "iteration,residual,warm_seconds")?;
        for (i, r) in history.iter().enumerate() {
            let t = self
                .time_history
                .as_ref()
                .and_then(|ts| ts.get(i))
                .copied()
                .unwrap_or(0.0);
            writeln!(w, "{i},{r},{t}")?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_rhs(op_dim: usize, b: &[f64]) -> Result<()> {
    if b.len() != op_dim {
        return Err(Error::Shape(format!(
            "operator dimension {} does not match right-hand side length {}",
            op_dim,
            b.len()
        )));
    }
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("right-hand side must be finite".into()));
    }
    Ok(())
}

fn zero_rhs_report(dim: usize, opts: &SolveOptions) -> SolveReport {
    SolveReport {
        solution: vec![0.0; dim],
        iterations: 0,
        final_residual: 0.0,
        residual_history: opts.record_history.then(|| vec![0.0]),
        time_history: opts.record_history.then(|| vec![0.0]),
        cold_seconds: 0.0,
        warm_seconds: 0.0,
    }
}

/// How often the recurrence residual is replaced by an explicit
/// `b - A x`, bounding floating-point drift over long runs.
const REFRESH_EVERY: usize = 50;

/// Conjugate gradient from `w = 0`.
///
/// Runs until the relative residual drops to `opts.tolerance` or
/// `opts.max_iterations` is exhausted (reported, not an error).
pub fn cg<A: LinearOperator + ?Sized>(a: &A, b: &[f64], opts: &SolveOptions) -> Result<SolveReport> {
    pcg_impl(a, None::<&IdentityPreconditioner>, b, opts)
}

/// Preconditioned conjugate gradient; `m` applies an SPD approximate
/// inverse. Reported residuals stay unpreconditioned.
pub fn pcg<A: LinearOperator + ?Sized, M: Preconditioner + ?Sized>(
    a: &A,
    m: &M,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if m.dim() != a.dim() {
        return Err(Error::Shape(format!(
            "preconditioner dimension {} does not match operator dimension {}",
            m.dim(),
            a.dim()
        )));
    }
    pcg_impl(a, Some(m), b, opts)
}

fn pcg_impl<A: LinearOperator + ?Sized, M: Preconditioner + ?Sized>(
    a: &A,
    m: Option<&M>,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_rhs(a.dim(), b)?;
    let dim = a.dim();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(zero_rhs_report(dim, opts));
    }

    let start = Instant::now();
    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut z = vec![0.0; dim];
    let precondition = |r: &[f64], z: &mut Vec<f64>| match m {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];

    let mut history = opts.record_history.then(|| vec![1.0]);
    let mut times = opts.record_history.then(|| vec![0.0]);
    let mut rel = 1.0;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        a.apply(&p, &mut ap);
        let p_ap = dot(&p, &ap);
        if !p_ap.is_finite() {
            return Err(Error::NonFinite(format!(
                "direction curvature at iteration {iter}"
            )));
        }
        if p_ap <= 0.0 {
            return Err(Error::Indefinite { iteration: iter });
        }
        let alpha = rz / p_ap;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        if iter % REFRESH_EVERY == 0 {
            a.apply(&x, &mut ap);
            for ((ri, bi), axi) in r.iter_mut().zip(b).zip(&ap) {
                *ri = bi - axi;
            }
        } else {
            for (ri, api) in r.iter_mut().zip(&ap) {
                *ri -= alpha * api;
            }
        }
        rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!("residual at iteration {iter}")));
        }
        if let Some(h) = history.as_mut() {
            h.push(rel);
        }
        if let Some(t) = times.as_mut() {
            t.push(start.elapsed().as_secs_f64());
        }
        iterations = iter;
        if rel <= opts.tolerance {
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rz = rz_new;
    }

    Ok(SolveReport {
        solution: x,
        iterations,
        final_residual: rel,
        residual_history: history,
        time_history: times,
        cold_seconds: 0.0,
        warm_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Direct dense solve: factorization counts as cold time, the triangular
/// solves as warm time.
pub fn dense_cholesky_solve(a: &Matrix, b: &[f64]) -> Result<SolveReport> {
    check_rhs(a.dim(), b)?;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        let mut report = zero_rhs_report(a.dim(), &SolveOptions::default());
        report.residual_history = Some(vec![0.0]);
        report.time_history = Some(vec![0.0]);
        return Ok(report);
    }

    let cold_start = Instant::now();
    let factor = CholeskyFactor::new(a)?;
    let cold_seconds = cold_start.elapsed().as_secs_f64();

    let warm_start = Instant::now();
    let x = factor.solve(b);
    let warm_seconds = warm_start.elapsed().as_secs_f64();

    let mut ax = vec![0.0; a.dim()];
    a.matvec(&x, &mut ax);
    let residual = ax
        .iter()
        .zip(b)
        .map(|(axi, bi)| (axi - bi) * (axi - bi))
        .sum::<f64>()
        .sqrt()
        / b_norm;

    Ok(SolveReport {
        solution: x,
        iterations: 1,
        final_residual: residual,
        residual_history: Some(vec![1.0, residual]),
        time_history: Some(vec![0.0, warm_seconds]),
        cold_seconds,
        warm_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hand_2x2() -> Matrix {
        Matrix::from_rows(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut b = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                b.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let mut a = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 0.5 } else { 0.0 };
                for t in 0..n {
                    s += b.get(i, t) * b.get(j, t);
                }
                a.set(i, j, s);
            }
        }
        a
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = Matrix::identity(5);
        let b = [1.0, -2.0, 0.5, 3.0, 0.0];
        let report = cg(&a, &b, &SolveOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        for (x, want) in report.solution.iter().zip(&b) {
            assert_relative_eq!(x, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn hand_system_within_two_iterations() {
        let report = cg(&hand_2x2(), &[1.0, 0.0], &SolveOptions::default()).unwrap();
        assert!(report.iterations <= 2);
        assert_relative_eq!(report.solution[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(report.solution[1], -1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn cg_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let n = rng.gen_range(2..=50);
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let opts = SolveOptions {
                tolerance: 1e-10,
                max_iterations: 10 * n,
                record_history: false,
            };
            let iterative = cg(&a, &b, &opts).unwrap();
            let direct = dense_cholesky_solve(&a, &b).unwrap();
            let num: f64 = iterative
                .solution
                .iter()
                .zip(&direct.solution)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let den = norm(&direct.solution);
            assert!(num <= 1e-8 * den, "rel diff {}", num / den);
        }
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let report = cg(&hand_2x2(), &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.solution, vec![0.0, 0.0]);
        assert_eq!(report.final_residual, 0.0);
    }

    #[test]
    fn indefinite_operator_is_detected() {
        let a = Matrix::from_rows(2, vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
        match cg(&a, &[1.0, 1.0], &SolveOptions::default()) {
            Err(Error::Indefinite { iteration }) => assert_eq!(iteration, 1),
            other => panic!("expected indefiniteness error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_options_are_rejected() {
        let opts = SolveOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(cg(&hand_2x2(), &[1.0, 0.0], &opts).is_err());
        let opts = SolveOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(cg(&hand_2x2(), &[1.0, 0.0], &opts).is_err());
    }

    #[test]
    fn exact_inverse_preconditioner_takes_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(&mut rng, 12);
        let b: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inv = CholeskyFactor::new(&a).unwrap();
        let report = pcg(&a, &inv, &b, &SolveOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.final_residual <= 1e-6);
    }

    #[test]
    fn identity_preconditioner_reproduces_cg() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(&mut rng, 20);
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolveOptions {
            tolerance: 1e-9,
            max_iterations: 200,
            record_history: true,
        };
        let plain = cg(&a, &b, &opts).unwrap();
        let pre = pcg(&a, &IdentityPreconditioner(20), &b, &opts).unwrap();
        assert_eq!(plain.iterations, pre.iterations);
        for (x, y) in plain.solution.iter().zip(&pre.solution) {
            assert_relative_eq!(x, y, epsilon = 1e-12, max_relative = 1e-12);
        }
        let ha = plain.residual_history.unwrap();
        let hb = pre.residual_history.unwrap();
        for (x, y) in ha.iter().zip(&hb) {
            assert_relative_eq!(x, y, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn pcg_solution_is_independent_of_preconditioner() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spd(&mut rng, 16);
        let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolveOptions {
            tolerance: 1e-10,
            max_iterations: 400,
            record_history: false,
        };
        let inv = CholeskyFactor::new(&a).unwrap();
        let w1 = pcg(&a, &IdentityPreconditioner(16), &b, &opts).unwrap().solution;
        let w2 = pcg(&a, &inv, &b, &opts).unwrap().solution;
        let num: f64 = w1.iter().zip(&w2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!(num <= 1e-8 * norm(&w1));
    }

    #[test]
    fn history_starts_at_one_and_ends_at_final_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 10);
        let b: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolveOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            record_history: true,
        };
        let report = cg(&a, &b, &opts).unwrap();
        let history = report.residual_history.as_ref().unwrap();
        assert_eq!(history.len(), report.iterations + 1);
        assert_eq!(history[0], 1.0);
        assert_eq!(history.last().unwrap().to_bits(), report.final_residual.to_bits());
    }

    #[test]
    fn a_norm_error_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 14;
        let a = random_spd(&mut rng, n);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = dense_cholesky_solve(&a, &b).unwrap().solution;
        let mut prev = f64::INFINITY;
        for iters in 1..=n {
            let opts = SolveOptions {
                tolerance: 1e-300,
                max_iterations: iters,
                record_history: false,
            };
            let w = cg(&a, &b, &opts).unwrap().solution;
            let e: Vec<f64> = w.iter().zip(&exact).map(|(x, y)| x - y).collect();
            let mut ae = vec![0.0; n];
            a.matvec(&e, &mut ae);
            let err = dot(&e, &ae).max(0.0).sqrt();
            assert!(
                err <= prev * (1.0 + 1e-9) + 1e-12,
                "A-norm error rose from {prev} to {err} at {iters}"
            );
            prev = err;
        }
    }

    #[test]
    fn cholesky_report_has_cold_and_warm_split() {
        let a = hand_2x2();
        let report = dense_cholesky_solve(&a, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(report.solution[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(report.solution[1], -1.0 / 3.0, epsilon = 1e-12);
        assert!(report.cold_seconds >= 0.0 && report.warm_seconds >= 0.0);
        assert!(report.final_residual <= 1e-14);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let a = hand_2x2();
        let opts = SolveOptions {
            record_history: true,
            ..Default::default()
        };
        let report = cg(&a, &[1.0, 0.0], &opts).unwrap();
        let mut out = Vec::new();
        report.write_history_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,residual,warm_seconds"));
        assert_eq!(lines.count(), report.iterations + 1);
    }
}
