//! `covdet detect`: dense scoring, non-maximum suppression and optional
//! ground-truth matching over a directory of images.

use crate::common::{image_id, list_pgms, load_features, FeatureArgs};
use crate::CliError;
use clap::Args;
use covdet::detect::{match_detections, nms_greedy, score_image, NmsParams, Rect};
use covdet::trainer::DetectorTemplate;
use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

#[derive(Args)]
pub struct DetectArgs {
    /// Detector file from `covdet train`.
    #[arg(long)]
    pub detector: PathBuf,
    /// Directory of PGM images to scan.
    #[arg(long)]
    pub images: PathBuf,
    /// Score threshold (defaults to the detector's stored threshold).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 0.6)]
    pub nms_cover: f64,
    /// Ground-truth CSV (image,u,v,m,n) for match flags.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

fn read_truths(path: &PathBuf) -> Result<HashMap<String, Vec<Rect>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(1, format!("cannot read {}: {e}", path.display())))?;
    let mut truths: HashMap<String, Vec<Rect>> = HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("image") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::new(
                1,
                format!("{}:{}: expected image,u,v,m,n", path.display(), ln + 1),
            ));
        }
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| {
                CliError::new(1, format!("{}:{}: bad number '{s}'", path.display(), ln + 1))
            })
        };
        truths.entry(fields[0].trim().to_string()).or_default().push(Rect {
            u: parse(fields[1])?,
            v: parse(fields[2])?,
            m: parse(fields[3])?,
            n: parse(fields[4])?,
        });
    }
    Ok(truths)
}

pub fn run(args: DetectArgs) -> Result<(), CliError> {
    let transform = args.features.transform()?;
    let detector = DetectorTemplate::load(&args.detector)?;
    let threshold = args.threshold.unwrap_or(detector.threshold);
    let truths = match &args.truth {
        Some(path) => Some(read_truths(path)?),
        None => None,
    };
    let files = list_pgms(&args.images)?;
    if files.is_empty() {
        return Err(CliError::new(
            2,
            format!("no images in {}", args.images.display()),
        ));
    }
    let params = NmsParams {
        iou: args.nms_iou,
        coverage: args.nms_cover,
    };

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).map_err(covdet::Error::from)?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "image,u,v,m,n,score,matched").map_err(covdet::Error::from)?;

    let (tm, tn) = (detector.weights.rows(), detector.weights.cols());
    for path in &files {
        let id = image_id(path);
        let image = load_features(path, &transform)?;
        let map = score_image(&detector, &image)
            .map_err(|e| CliError::new(1, format!("{}: {e}", path.display())))?;
        let kept = nms_greedy(&map.detections(tm, tn, threshold), &params);

        let matched_flags: Vec<bool> = match truths.as_ref().and_then(|t| t.get(&id)) {
            Some(rects) => {
                let result = match_detections(&kept, rects);
                let mut flags = vec![false; kept.len()];
                for &(det_idx, _) in &result.matches {
                    flags[det_idx] = true;
                }
                flags
            }
            None => vec![false; kept.len()],
        };
        for (det, matched) in kept.iter().zip(&matched_flags) {
            writeln!(
                out,
                "{id},{},{},{},{},{},{}",
                det.rect.u,
                det.rect.v,
                det.rect.m,
                det.rect.n,
                det.score,
                *matched as u8
            )
            .map_err(covdet::Error::from)?;
        }
    }
    Ok(())
}
