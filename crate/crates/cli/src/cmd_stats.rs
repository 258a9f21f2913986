//! `covdet stats`: one pass over the negative corpus.

use crate::common::{list_pgms, load_features, FeatureArgs};
use crate::CliError;
use clap::Args;
use covdet::stats::StationaryAccumulator;
use rayon::prelude::*;
use std::path::PathBuf;

#[derive(Args)]
pub struct StatsArgs {
    /// Directory of PGM images.
    pub images: PathBuf,
    /// Maximum vertical displacement to track (supports templates up to
    /// (dmax_u + 1) rows).
    #[arg(long)]
    pub dmax_u: usize,
    /// Maximum horizontal displacement to track.
    #[arg(long)]
    pub dmax_v: usize,
    /// Output statistics file.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the direct-summation oracle path instead of FFT correlation.
    #[arg(long)]
    pub naive: bool,
    /// Keep raw normalized sums instead of subtracting the channel means.
    #[arg(long)]
    pub uncentered: bool,
    #[command(flatten)]
    pub features: FeatureArgs,
}

/// Fixed shard size so the merge order (and therefore the output bytes)
/// never depends on thread count.
const SHARD: usize = 8;

pub fn run(args: StatsArgs) -> Result<(), CliError> {
    let transform = args.features.transform()?;
    let files = list_pgms(&args.images)?;
    if files.is_empty() {
        return Err(CliError::new(
            2,
            format!("no images in {}", args.images.display()),
        ));
    }
    let k = transform.channels();

    let shards: Vec<Result<StationaryAccumulator, Vec<String>>> = files
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut acc = StationaryAccumulator::new(k, args.dmax_u, args.dmax_v);
            let mut failures = Vec::new();
            for path in chunk {
                match load_features(path, &transform) {
                    Ok(image) => {
                        let result = if args.naive {
                            acc.accumulate_naive(&image)
                        } else {
                            acc.accumulate_fft(&image)
                        };
                        if let Err(e) = result {
                            failures.push(format!("{}: {e}", path.display()));
                        }
                    }
                    Err(e) => failures.push(format!("{e:#}")),
                }
            }
            if failures.is_empty() {
                Ok(acc)
            } else {
                Err(failures)
            }
        })
        .collect();

    let mut merged = StationaryAccumulator::new(k, args.dmax_u, args.dmax_v);
    let mut failures = Vec::new();
    for shard in shards {
        match shard {
            Ok(acc) => merged.merge_from(&acc).map_err(CliError::from)?,
            Err(mut errs) => failures.append(&mut errs),
        }
    }
    if !failures.is_empty() {
        for failure in &failures {
            eprintln!("error: {failure}");
        }
        return Err(CliError::new(
            1,
            format!("{} image(s) could not be used", failures.len()),
        ));
    }
    if merged.image_count() == 0 {
        return Err(CliError::new(2, "no images".to_string()));
    }

    let stats = merged.finalize(!args.uncentered)?;
    stats.save(&args.out)?;
    println!(
        "stats: {} images, {} pixels, k={}, displacements {}x{} -> {}",
        stats.image_count(),
        stats.pixel_count(),
        stats.channels(),
        args.dmax_u,
        args.dmax_v,
        args.out.display()
    );
    Ok(())
}
