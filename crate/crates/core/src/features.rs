//! Feature transforms from 8-bit grayscale rasters to [`FeatureImage`]s,
//! plus binary PGM (P5) reading and writing.
//!
//! Two transforms ship: the identity (intensities scaled to `[0, 1]`) and a
//! light gradient-orientation cell descriptor. Both are deterministic:
//! identical rasters always produce identical feature images.

use crate::error::{Error, Result};
use crate::stats::FeatureImage;
use std::io::{BufRead, Write};
use std::path::Path;

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(Error::Shape("raster must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "raster has {} pixels, expected {}x{} = {}",
                pixels.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Raster {
            height,
            width,
            pixels,
        })
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> u8 {
        self.pixels[u * self.width + v]
    }
}

/// A deterministic raster-to-features mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTransform {
    /// Grayscale intensities in `[0, 1]`, one channel, one cell per pixel.
    Identity,
    /// Per-cell histograms of unsigned gradient orientation.
    HogLite { cell: usize, bins: usize },
}

impl FeatureTransform {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureTransform::Identity => "identity",
            FeatureTransform::HogLite { .. } => "hoglite",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            FeatureTransform::Identity => 1,
            FeatureTransform::HogLite { bins, .. } => *bins,
        }
    }

    /// Raster pixels per feature-grid unit.
    pub fn cell_size(&self) -> usize {
        match self {
            FeatureTransform::Identity => 1,
            FeatureTransform::HogLite { cell, .. } => *cell,
        }
    }

    pub fn apply(&self, raster: &Raster) -> Result<FeatureImage> {
        match self {
            FeatureTransform::Identity => identity_transform(raster),
            FeatureTransform::HogLite { cell, bins } => hoglite_transform(raster, *cell, *bins),
        }
    }
}

/// Grayscale intensities scaled to `[0, 1]`.
pub fn identity_transform(raster: &Raster) -> Result<FeatureImage> {
    let data = raster.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    FeatureImage::new(1, raster.height, raster.width, data)
}

/// Cell histograms of unsigned gradient orientation.
///
/// Gradients come from central differences (clamped at the borders) on the
/// `[0, 1]`-scaled intensities. Each pixel votes its magnitude bilinearly
/// between the two nearest orientation bins; orientations live in
/// `[0, pi)`. Each cell's histogram is L2-normalized with epsilon 1e-6, so
/// flat cells stay at exactly zero. Output extent is
/// `floor(H/cell) x floor(W/cell)`.
pub fn hoglite_transform(raster: &Raster, cell: usize, bins: usize) -> Result<FeatureImage> {
    if cell < 1 || bins < 1 {
        return Err(Error::Value(format!(
            "cell and bins must be positive, got cell={cell}, bins={bins}"
        )));
    }
    if raster.height < cell || raster.width < cell {
        return Err(Error::Shape(format!(
            "raster {}x{} is smaller than one {cell}x{cell} cell",
            raster.height, raster.width
        )));
    }
    let h = raster.height;
    let w = raster.width;
    let cells_h = h / cell;
    let cells_w = w / cell;
    let intensity =
        |u: usize, v: usize| raster.pixel(u.min(h - 1), v.min(w - 1)) as f64 / 255.0;

    let mut hist = vec![0.0; cells_h * cells_w * bins];
    for cu in 0..cells_h {
        for cv in 0..cells_w {
            let base = (cu * cells_w + cv) * bins;
            for du in 0..cell {
                for dv in 0..cell {
                    let u = cu * cell + du;
                    let v = cv * cell + dv;
                    let gx = (intensity(u, v + 1) - intensity(u, v.saturating_sub(1))) / 2.0;
                    let gy = (intensity(u + 1, v) - intensity(u.saturating_sub(1), v)) / 2.0;
                    let magnitude = (gx * gx + gy * gy).sqrt();
                    if magnitude == 0.0 {
                        continue;
                    }
                    let mut theta = gy.atan2(gx);
                    if theta < 0.0 {
                        theta += std::f64::consts::PI;
                    }
                    if theta >= std::f64::consts::PI {
                        theta -= std::f64::consts::PI;
                    }
                    // bin centers at (i + 0.5) * pi / bins, cyclic vote
                    let x = theta * bins as f64 / std::f64::consts::PI - 0.5;
                    let lower = x.floor();
                    let frac = x - lower;
                    let b0 = (lower.rem_euclid(bins as f64)) as usize % bins;
                    let b1 = (b0 + 1) % bins;
                    hist[base + b0] += (1.0 - frac) * magnitude;
                    hist[base + b1] += frac * magnitude;
                }
            }
            let norm: f64 = hist[base..base + bins].iter().map(|x| x * x).sum();
            let scale = 1.0 / (norm + 1e-6 * 1e-6).sqrt();
            // leave exactly-zero histograms untouched
            if norm > 0.0 {
                for x in &mut hist[base..base + bins] {
                    *x *= scale;
                }
            }
        }
    }

    // re-pack cell-major histograms into channel planes
    let mut data = vec![0.0; bins * cells_h * cells_w];
    for cu in 0..cells_h {
        for cv in 0..cells_w {
            for b in 0..bins {
                data[(b * cells_h + cu) * cells_w + cv] = hist[(cu * cells_w + cv) * bins + b];
            }
        }
    }
    FeatureImage::new(bins, cells_h, cells_w, data)
}

/// Reads a binary (P5) PGM file with maxval up to 255.
pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token()? != "P5" {
        return Err("not a binary PGM (expected magic P5)".into());
    }
    let width: usize = token()?.parse().map_err(|_| "bad width".to_string())?;
    let height: usize = token()?.parse().map_err(|_| "bad height".to_string())?;
    let maxval: usize = token()?.parse().map_err(|_| "bad maxval".to_string())?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (need 1..=255)"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(format!(
            "truncated pixel data: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    let mut pixels = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for p in pixels.iter_mut() {
            *p = ((*p as usize * 255) / maxval).min(255) as u8;
        }
    }
    Raster::new(height, width, pixels).map_err(|e| e.to_string())
}

pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", raster.width, raster.height)?;
    w.write_all(&raster.pixels)?;
    Ok(())
}

/// Reads a PGM from an in-memory buffer; handy for tests.
pub fn read_pgm_bytes(mut reader: impl BufRead) -> Result<Raster> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_pgm(&bytes).map_err(Error::Format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scales_to_unit_range() {
        let raster = Raster::new(2, 2, vec![255; 4]).unwrap();
        let img = identity_transform(&raster).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!((img.height(), img.width()), (2, 2));
        assert!(img.as_slice().iter().all(|&x| x == 1.0));

        let raster = Raster::new(3, 5, (0u8..15).collect()).unwrap();
        let img = identity_transform(&raster).unwrap();
        assert_eq!((img.height(), img.width()), (3, 5));
        assert_eq!(img.value(0, 1, 2), 7.0 / 255.0);
    }

    #[test]
    fn identity_is_deterministic() {
        let raster = Raster::new(4, 4, (0u8..16).map(|x| x * 3).collect()).unwrap();
        let a = identity_transform(&raster).unwrap();
        let b = identity_transform(&raster).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_raster_gives_zero_histograms() {
        let raster = Raster::new(8, 8, vec![77; 64]).unwrap();
        let img = hoglite_transform(&raster, 4, 8).unwrap();
        assert_eq!(img.channels(), 8);
        assert_eq!((img.height(), img.width()), (2, 2));
        assert!(img.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vertical_edge_energy_lands_in_horizontal_bins() {
        // left half dark, right half bright: gx > 0, gy = 0 at the edge
        let raster = Raster::new(8, 8, {
            let mut p = vec![0u8; 64];
            for u in 0..8 {
                for v in 4..8 {
                    p[u * 8 + v] = 255;
                }
            }
            p
        })
        .unwrap();
        let bins = 8;
        let img = hoglite_transform(&raster, 4, bins).unwrap();
        // theta = 0 sits on the boundary between the last and first bin
        for cu in 0..2 {
            let edge_cell_energy: f64 = (0..bins).map(|b| img.value(b, cu, 0).powi(2)).sum();
            if edge_cell_energy == 0.0 {
                continue;
            }
            let horiz = img.value(0, cu, 0).powi(2) + img.value(bins - 1, cu, 0).powi(2);
            assert!(
                horiz > 0.99 * edge_cell_energy,
                "horizontal bins hold {horiz} of {edge_cell_energy}"
            );
        }
    }

    #[test]
    fn rotating_ninety_degrees_permutes_bins_on_interior_cells() {
        let cell = 4;
        let bins = 8;
        let side = 16;
        let mut pixels = vec![0u8; side * side];
        let mut state = 11u64;
        for p in pixels.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *p = (state >> 56) as u8;
        }
        let raster = Raster::new(side, side, pixels).unwrap();
        // counterclockwise: out[u][v] = in[v][side-1-u]
        let mut rotated = vec![0u8; side * side];
        for u in 0..side {
            for v in 0..side {
                rotated[u * side + v] = raster.pixel(v, side - 1 - u);
            }
        }
        let rotated = Raster::new(side, side, rotated).unwrap();

        let orig = hoglite_transform(&raster, cell, bins).unwrap();
        let rot = hoglite_transform(&rotated, cell, bins).unwrap();
        let cells = side / cell;
        // interior cells only; border cells see the clamped image edge
        for cu in 1..cells - 1 {
            for cv in 1..cells - 1 {
                // the cell moves with the rotation and bins shift by bins/2
                let (ru, rv) = (cells - 1 - cv, cu);
                for b in 0..bins {
                    let rb = (b + bins / 2) % bins;
                    let got = rot.value(rb, ru, rv);
                    let want = orig.value(b, cu, cv);
                    assert!(
                        (got - want).abs() < 1e-9,
                        "cell ({cu},{cv}) bin {b}: {want} vs rotated ({ru},{rv}) bin {rb}: {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn cell_energy_is_at_most_one() {
        let mut pixels = vec![0u8; 12 * 12];
        let mut state = 3u64;
        for p in pixels.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            *p = (state >> 56) as u8;
        }
        let raster = Raster::new(12, 12, pixels).unwrap();
        let img = hoglite_transform(&raster, 4, 8).unwrap();
        for cu in 0..3 {
            for cv in 0..3 {
                let energy: f64 = (0..8).map(|b| img.value(b, cu, cv).powi(2)).sum();
                assert!(energy <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn raster_smaller_than_cell_is_rejected() {
        let raster = Raster::new(3, 8, vec![0; 24]).unwrap();
        assert!(matches!(
            hoglite_transform(&raster, 4, 8),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let raster = Raster::new(2, 3, vec![0, 50, 100, 150, 200, 255]).unwrap();
        let dir = std::env::temp_dir().join("covdet_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.pgm");
        write_pgm(&path, &raster).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, raster);

        assert!(parse_pgm(b"P2\n2 2\n255\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00\x01").is_err()); // truncated
        // comments in the header are fine
        let with_comment = b"P5\n# a comment\n2 1\n255\n\x10\x20";
        let r = parse_pgm(with_comment).unwrap();
        assert_eq!((r.height, r.width), (1, 2));
        assert_eq!(r.pixels, vec![0x10, 0x20]);
    }

    #[test]
    fn transform_enum_reports_shape() {
        let t = FeatureTransform::HogLite { cell: 4, bins: 8 };
        assert_eq!(t.name(), "hoglite");
        assert_eq!(t.channels(), 8);
        assert_eq!(t.cell_size(), 4);
        assert_eq!(FeatureTransform::Identity.channels(), 1);
    }
}
