//! Binary PGM/PPM previews. North is at the top of the image.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Field;

/// 8-bit linear quantization of `[vmin, vmax]` onto gray levels 1..=255; 0 is land.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrayScale {
    pub vmin: f64,
    pub vmax: f64,
}

impl GrayScale {
    pub fn fit(field: &Field) -> Self {
        let (vmin, vmax) = field
            .values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if vmin.is_finite() {
            GrayScale { vmin, vmax }
        } else {
            GrayScale { vmin: 0.0, vmax: 0.0 }
        }
    }

    pub fn quantize(&self, v: f64) -> u8 {
        if !v.is_finite() {
            return 0;
        }
        let span = self.vmax - self.vmin;
        if span <= 0.0 {
            return 128;
        }
        1 + (254.0 * ((v - self.vmin) / span).clamp(0.0, 1.0)).round() as u8
    }

    pub fn dequantize(&self, g: u8) -> Option<f64> {
        match g {
            0 => None,
            _ if self.vmax <= self.vmin => Some(self.vmin),
            _ => Some(self.vmin + f64::from(g - 1) / 254.0 * (self.vmax - self.vmin)),
        }
    }

    /// Largest reconstruction error of an in-range value.
    pub fn step(&self) -> f64 {
        (self.vmax - self.vmin) / 254.0 / 2.0
    }
}

fn north_up_rows(field: &Field) -> impl Iterator<Item = &[f64]> {
    field.values.chunks(field.grid.n_lon).rev()
}

pub fn write_pgm(field: &Field, path: &Path, title: &str) -> Result<GrayScale> {
    let scale = GrayScale::fit(field);
    let g = field.grid;
    let mut out = format!(
        "P5\n# {title}\n# gray = 1 + round(254 * (v - vmin) / (vmax - vmin)), land = 0\n# vmin {:e} vmax {:e}\n{} {}\n255\n",
        scale.vmin, scale.vmax, g.n_lon, g.n_lat
    )
    .into_bytes();
    for row in north_up_rows(field) {
        out.extend(row.iter().map(|&v| scale.quantize(v)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(scale)
}

/// Parses a file written by [`write_pgm`]: the scale and the raw gray pixels (north-up).
pub fn read_pgm(path: &Path) -> Result<(GrayScale, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{} is not a heatmap PGM", path.display()));
    let mut lines = Vec::new();
    let mut at = 0;
    while lines.len() < 6 {
        let end = bytes[at..].iter().position(|&b| b == b'\n').ok_or_else(bad)? + at;
        lines.push(std::str::from_utf8(&bytes[at..end]).map_err(|_| bad())?.to_string());
        at = end + 1;
    }
    if lines[0] != "P5" || lines[5] != "255" {
        return Err(bad());
    }
    let nums: Vec<f64> = lines[3].split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let dims: Vec<usize> = lines[4].split_whitespace().filter_map(|t| t.parse().ok()).collect();
    if nums.len() != 2 || dims.len() != 2 || bytes.len() - at != dims[0] * dims[1] {
        return Err(bad());
    }
    Ok((GrayScale { vmin: nums[0], vmax: nums[1] }, dims[0], dims[1], bytes[at..].to_vec()))
}

const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
];

/// Cluster labels as colors (palette cycles every 12 labels); land and
/// non-finite cells are black.
pub fn write_label_ppm(labels: &Field, path: &Path, title: &str) -> Result<()> {
    let g = labels.grid;
    let mut out = format!(
        "P6\n# {title}\n# color of label l = palette[l mod 12]; land = 0 0 0\n{} {}\n255\n",
        g.n_lon, g.n_lat
    )
    .into_bytes();
    for row in north_up_rows(labels) {
        for &v in row {
            let px = if v.is_finite() && v >= 0.0 { PALETTE[v as usize % PALETTE.len()] } else { [0, 0, 0] };
            out.extend_from_slice(&px);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
