//! `covdet train`: solve the LDA system for one detector.

use crate::common::{list_pgms, load_features, parse_size, FeatureArgs};
use crate::CliError;
use clap::Args;
use covdet::solvers::SolveOptions;
use covdet::stats::{positive_mean, StationaryStats};
use covdet::trainer::{self, TrainMethod, TrainRequest, DEFAULT_LAMBDA};
use std::path::PathBuf;

#[derive(Args)]
pub struct TrainArgs {
    /// Statistics file from `covdet stats`.
    #[arg(long)]
    pub stats: PathBuf,
    /// Directory of template-sized positive rasters.
    #[arg(long)]
    pub positives: PathBuf,
    /// Template size MxN in feature-grid units.
    #[arg(long)]
    pub size: String,
    /// Back-end: chol, cg, pcg or circ.
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Output detector file.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the residual history as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let (m, n) = parse_size(&args.size)?;
    let method: TrainMethod = args.method.parse().map_err(|e| CliError::new(2, format!("{e}")))?;
    let transform = args.features.transform()?;
    let stats = StationaryStats::load(&args.stats)?;

    let files = list_pgms(&args.positives)?;
    if files.is_empty() {
        return Err(CliError::new(
            2,
            format!("no positive examples in {}", args.positives.display()),
        ));
    }
    let mut examples = Vec::with_capacity(files.len());
    for path in &files {
        examples.push(load_features(path, &transform)?);
    }
    let pos_mean = positive_mean(&examples, m, n)?;

    let request = TrainRequest {
        pos_mean,
        method,
        lambda: args.lambda,
        options: SolveOptions {
            tolerance: args.tol,
            max_iterations: args.max_iter,
            record_history: true,
        },
    };
    let (detector, report) = trainer::train(&stats, &request)
        .map_err(|e| CliError::new(1, format!("training with {} failed: {e}", method.name())))?;
    detector.save(&args.out)?;

    if let Some(path) = &args.report {
        let file = std::fs::File::create(path).map_err(covdet::Error::from)?;
        report.write_history_csv(std::io::BufWriter::new(file))?;
    }
    println!(
        "trained {}x{}x{} detector: method={} iterations={} residual={:.3e} cold={:.4}s warm={:.4}s -> {}",
        detector.weights.channels(),
        m,
        n,
        method.name(),
        report.iterations,
        report.final_residual,
        report.cold_seconds,
        report.warm_seconds,
        args.out.display()
    );
    Ok(())
}
