//! Shared flag parsing and directory helpers.

use crate::CliError;
use clap::Args;
use covdet::features::{read_pgm, FeatureTransform};
use covdet::stats::FeatureImage;
use std::path::{Path, PathBuf};

#[derive(Args, Clone)]
pub struct FeatureArgs {
    /// Feature transform applied to rasters: identity or hoglite.
    #[arg(long, default_value = "identity")]
    pub features: String,
    /// Pixels per feature cell (hoglite).
    #[arg(long, default_value_t = 4)]
    pub cell: usize,
    /// Orientation bins (hoglite).
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
}

impl FeatureArgs {
    pub fn transform(&self) -> Result<FeatureTransform, CliError> {
        match self.features.as_str() {
            "identity" => Ok(FeatureTransform::Identity),
            "hoglite" => Ok(FeatureTransform::HogLite {
                cell: self.cell,
                bins: self.bins,
            }),
            other => Err(CliError::new(
                2,
                format!("unknown feature transform '{other}' (expected identity or hoglite)"),
            )),
        }
    }
}

/// Parses `MxN` (rows x columns).
pub fn parse_size(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(m), Ok(n)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
            if m >= 1 && n >= 1 {
                return Ok((m, n));
            }
        }
    }
    Err(CliError::new(
        2,
        format!("bad size '{text}' (expected MxN, e.g. 12x28)"),
    ))
}

pub fn parse_size_list(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(',').map(|s| parse_size(s.trim())).collect()
}

/// All `.pgm` files in a directory, sorted by name for determinism.
pub fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(1, format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::new(1, format!("cannot read {}: {e}", dir.display())))?
            .path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads and transforms one raster, attaching the file name to failures.
pub fn load_features(path: &Path, transform: &FeatureTransform) -> anyhow::Result<FeatureImage> {
    let raster = read_pgm(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    transform
        .apply(&raster)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
