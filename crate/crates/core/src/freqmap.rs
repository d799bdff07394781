//! Pixel-to-frequency conversion: derived optical quantities, the two
//! conversion ratios, frequency-domain pupil offsets, and pruning of
//! captures sitting on the brightfield/darkfield junction.

use crate::calib::Correspondence;
use crate::error::{Error, Result};
use crate::scene::{BoardSpec, CaptureSet};

/// Derived optical quantities feeding the pixel-to-frequency offset
/// conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalBudget {
    /// Illumination wavelength, m.
    pub wavelength: f64,
    /// Camera focal length, m.
    pub focal_length: f64,
    /// Aperture diameter, m.
    pub aperture: f64,
    /// Sensor pixel size, m.
    pub sensor_pixel: f64,
    /// Reconstruction grid dimension, pixels.
    pub m_px: usize,
    /// Optical resolution 1.22 lambda f / D, m.
    pub res_aperture: f64,
    /// Aperture cut-off frequency 1 / (2 RES), cycles/m.
    pub k_aperture: f64,
    /// Nyquist frequency from the pixel size 1 / (2 delta), cycles/m.
    pub k_max: f64,
    /// Pupil filter diameter on the reconstruction grid, pixels.
    pub d_pixel: f64,
    /// Fourier-plane physical length to spectrum pixels, pixels/m.
    pub ratio1: f64,
}

/// Derive the optical budget from the physical parameter set and the
/// reconstruction grid dimension.
pub fn build_budget(
    wavelength: f64,
    focal_length: f64,
    aperture: f64,
    sensor_pixel: f64,
    m_px: usize,
) -> Result<OpticalBudget> {
    for (name, v) in [
        ("wavelength", wavelength),
        ("focal_length", focal_length),
        ("aperture", aperture),
        ("sensor_pixel", sensor_pixel),
        ("m_px", m_px as f64),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
        }
    }
    let res_aperture = 1.22 * wavelength * focal_length / aperture;
    let k_aperture = 1.0 / (2.0 * res_aperture);
    let k_max = 1.0 / (2.0 * sensor_pixel);
    let d_pixel = m_px as f64 * k_aperture / k_max;
    if d_pixel > m_px as f64 {
        return Err(Error::InvalidParameter(format!(
            "pupil diameter {d_pixel:.1} px exceeds the {m_px} px grid (aperture cut-off above pixel Nyquist)"
        )));
    }
    Ok(OpticalBudget {
        wavelength,
        focal_length,
        aperture,
        sensor_pixel,
        m_px,
        res_aperture,
        k_aperture,
        k_max,
        d_pixel,
        ratio1: d_pixel / aperture,
    })
}

/// Mean pixel distance between adjacent board corners, split by direction
/// (along columns, along rows). Corners are expected in row-major board
/// order as produced by the simulator.
pub fn adjacent_corner_spans(corr: &[Correspondence], board: &BoardSpec) -> Result<(f64, f64)> {
    let (rows, cols) = (board.corner_rows, board.corner_cols);
    if corr.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {} correspondences for a {}x{} board, got {}",
            rows * cols,
            rows,
            cols,
            corr.len()
        )));
    }
    let px = |i: usize| corr[i].pixel;
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut h = 0.0;
    let mut hn = 0;
    let mut v = 0.0;
    let mut vn = 0;
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                h += dist(px(i), px(i + 1));
                hn += 1;
            }
            if r + 1 < rows {
                v += dist(px(i), px(i + cols));
                vn += 1;
            }
        }
    }
    Ok((h / hn as f64, v / vn as f64))
}

/// Image-pixel to sample-plane length ratio, m/pixel, from the board square
/// size and the mean adjacent-corner pixel span of the reference capture.
pub fn ratio2_from_calibration(board_square: f64, mean_pixel_span_px: f64) -> Result<f64> {
    if !(board_square > 0.0) {
        return Err(Error::InvalidParameter("board square size must be > 0".into()));
    }
    if !(mean_pixel_span_px > 1e-9) {
        return Err(Error::Degenerate(format!(
            "degenerate corner span {mean_pixel_span_px} px"
        )));
    }
    Ok(board_square / mean_pixel_span_px)
}

/// A converted frequency-domain offset: the exact value and the rounded
/// integer spectrum pixels used for windowing downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqOffset {
    pub exact: (f64, f64),
    pub rounded: (i64, i64),
}

/// Convert calibrated pixel offsets into frequency-domain pupil-center
/// offsets: offset_px * Ratio1 * Ratio2 per axis.
pub fn frequency_offsets(offsets_px: &[(f64, f64)], budget: &OpticalBudget, ratio2: f64) -> Vec<FreqOffset> {
    let s = budget.ratio1 * ratio2;
    offsets_px
        .iter()
        .map(|&(du, dv)| {
            let exact = (du * s, dv * s);
            FreqOffset { exact, rounded: (exact.0.round() as i64, exact.1.round() as i64) }
        })
        .collect()
}

/// Classification of a capture relative to the bright central spectral lobe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldClass {
    Brightfield,
    Darkfield,
    Junction,
}

/// Tunable classification bands. A capture is brightfield when more than
/// `bright_min` of its pixels exceed the intensity threshold, darkfield when
/// fewer than `dark_max` do, junction otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyBands {
    pub bright_min: f64,
    pub dark_max: f64,
}

impl Default for ClassifyBands {
    fn default() -> Self {
        Self { bright_min: 0.6, dark_max: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct PruneReport {
    /// (capture index within the input order, class) for every capture.
    pub classes: Vec<((u32, u32), FieldClass)>,
    pub removed: usize,
    pub threshold: f64,
}

/// Remove junction captures: intensity threshold is `threshold_fraction`
/// times the mean intensity of the reference capture, and the bright/dark
/// bands decide the class from the fraction of above-threshold pixels.
/// The reference capture always survives.
pub fn classify_and_prune(
    set: &CaptureSet,
    threshold_fraction: f64,
    bands: ClassifyBands,
) -> Result<(CaptureSet, PruneReport)> {
    if set.captures.is_empty() {
        return Err(Error::MissingData("capture set is empty".into()));
    }
    if !(0.0..=1.0).contains(&bands.dark_max) || !(0.0..=1.0).contains(&bands.bright_min) || bands.dark_max > bands.bright_min
    {
        return Err(Error::InvalidParameter("classification bands must satisfy 0 <= dark_max <= bright_min <= 1".into()));
    }
    let reference = set
        .capture_at(set.ref_index)
        .ok_or_else(|| Error::MissingData("reference capture not present".into()))?;
    let threshold = threshold_fraction * reference.intensity.mean();

    let mut classes = Vec::with_capacity(set.captures.len());
    let mut kept = Vec::new();
    let mut removed = 0;
    for cap in &set.captures {
        let above = cap.intensity.data().iter().filter(|&&v| v > threshold).count() as f64
            / cap.intensity.data().len() as f64;
        let class = if above > bands.bright_min {
            FieldClass::Brightfield
        } else if above < bands.dark_max {
            FieldClass::Darkfield
        } else {
            FieldClass::Junction
        };
        classes.push((cap.nominal_index, class));
        if class == FieldClass::Junction && cap.nominal_index != set.ref_index {
            removed += 1;
        } else {
            kept.push(cap.clone());
        }
    }
    if classes
        .iter()
        .any(|&(idx, class)| idx == set.ref_index && class == FieldClass::Junction)
    {
        return Err(Error::InvalidParameter(
            "classification would prune the reference capture".into(),
        ));
    }

    let mut pruned = set.clone();
    pruned.captures = kept;
    Ok((pruned, PruneReport { classes, removed, threshold }))
}
