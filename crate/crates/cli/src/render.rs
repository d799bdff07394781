//! 16-bit binary PGM (P5) rendering of real grids, plus side-by-side panels.

use std::path::Path;

use camfp_core::field::{ComplexGrid, RealGrid};
use camfp_core::{Error, Result};

const MAXVAL: u32 = 65535;

/// A decoded 16-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

pub fn write_pgm(path: &Path, img: &Gray16) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n{MAXVAL}\n", img.width, img.height).into_bytes();
    for &v in &img.data {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Gray16> {
    let bytes = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    // Header: magic, width, height, maxval as whitespace-separated tokens
    // (comments not supported; this reads only files this tool wrote).
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("truncated PGM header in {}", path.display())));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::Format(format!("non-ASCII PGM header in {}", path.display()))
        })?.to_string());
    }
    if fields[0] != "P5" || fields[3] != MAXVAL.to_string() {
        return Err(Error::Format(format!("{} is not a 16-bit P5 graymap", path.display())));
    }
    let width: usize = fields[1].parse().map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize = fields[2].parse().map_err(|_| Error::Format("bad PGM height".into()))?;
    pos += 1; // single whitespace byte after maxval
    let need = width * height * 2;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!("truncated PGM data in {}", path.display())));
    }
    let data = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(Gray16 { width, height, data })
}

/// Scale a nonnegative grid into the full 16-bit range (max maps to 65535;
/// an all-zero grid renders black).
pub fn render_magnitude(grid: &RealGrid) -> Gray16 {
    let max = grid.data().iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { MAXVAL as f64 / max } else { 0.0 };
    Gray16 {
        width: grid.width(),
        height: grid.height(),
        data: grid.data().iter().map(|&v| (v.max(0.0) * scale).round() as u16).collect(),
    }
}

/// Map phase in [-pi, pi] linearly onto the 16-bit range.
pub fn render_phase(grid: &ComplexGrid) -> Gray16 {
    let pi = std::f64::consts::PI;
    Gray16 {
        width: grid.width(),
        height: grid.height(),
        data: grid
            .data()
            .iter()
            .map(|z| (((z.arg() + pi) / (2.0 * pi)) * MAXVAL as f64).round() as u16)
            .collect(),
    }
}

/// Concatenate equally sized images left to right with a 4-pixel white gap.
pub fn panel(images: &[Gray16]) -> Result<Gray16> {
    let first = images.first().ok_or_else(|| Error::MissingData("no images to panel".into()))?;
    let (w, h) = (first.width, first.height);
    if images.iter().any(|i| i.width != w || i.height != h) {
        return Err(Error::Dimension("panel images differ in size".into()));
    }
    let gap = 4;
    let total_w = w * images.len() + gap * (images.len() - 1);
    let mut data = vec![u16::MAX; total_w * h];
    for (k, img) in images.iter().enumerate() {
        let x0 = k * (w + gap);
        for y in 0..h {
            let row = &img.data[y * w..(y + 1) * w];
            data[y * total_w + x0..y * total_w + x0 + w].copy_from_slice(row);
        }
    }
    Ok(Gray16 { width: total_w, height: h, data })
}
