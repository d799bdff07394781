//! Comparison metrics between reconstructed and reference fields: RMSE on
//! amplitude and phase, PSNR, masked correlation, and percentile helpers.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ComplexGrid, RealGrid};

/// Axis-aligned pixel region `[x0, x0+w) x [y0, y0+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, w: width, h: height }
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::InvalidParameter("empty region".into()));
        }
        if self.x0 + self.w > width || self.y0 + self.h > height {
            return Err(Error::OutOfRange(format!(
                "region {self:?} exceeds {width}x{height} grid"
            )));
        }
        Ok(())
    }
}

/// Centered region covering `fraction` of each dimension.
pub fn central_region(width: usize, height: usize, fraction: f64) -> Result<Rect> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "region fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let w = ((width as f64 * fraction).round() as usize).clamp(1, width);
    let h = ((height as f64 * fraction).round() as usize).clamp(1, height);
    Ok(Rect { x0: (width - w) / 2, y0: (height - h) / 2, w, h })
}

fn check_same_size(a: &RealGrid, b: &RealGrid) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "grid sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Root-mean-square error between two real grids over a region.
pub fn rmse_region(a: &RealGrid, b: &RealGrid, region: Rect) -> Result<f64> {
    check_same_size(a, b)?;
    region.check(a.width(), a.height())?;
    let mut acc = 0.0;
    for y in region.y0..region.y0 + region.h {
        for x in region.x0..region.x0 + region.w {
            acc += (a.get(x, y) - b.get(x, y)).powi(2);
        }
    }
    Ok((acc / (region.w * region.h) as f64).sqrt())
}

/// Amplitude of a complex grid as a real grid.
pub fn amplitude_of(grid: &ComplexGrid) -> RealGrid {
    let data = grid.data().iter().map(|z| z.norm()).collect();
    RealGrid::from_data(grid.width(), grid.height(), data).expect("source grid is valid")
}

/// Least-squares global phase factor `e^{i theta}` minimizing
/// `|| rec * e^{i theta} - truth ||`, applied to a copy of `rec`.
pub fn align_global_phase(rec: &ComplexGrid, truth: &ComplexGrid) -> Result<ComplexGrid> {
    if rec.width() != truth.width() || rec.height() != truth.height() {
        return Err(Error::Dimension("grid sizes differ".into()));
    }
    let gamma: Complex64 = truth.data().iter().zip(rec.data()).map(|(t, r)| t * r.conj()).sum();
    let rot = if gamma.norm() > 0.0 { gamma / gamma.norm() } else { Complex64::new(1.0, 0.0) };
    let data = rec.data().iter().map(|z| z * rot).collect();
    ComplexGrid::from_data(rec.width(), rec.height(), rec.pitch(), data)
}

/// Amplitude RMSE over a region, invariant to a global phase on either input.
pub fn amplitude_rmse(rec: &ComplexGrid, truth: &ComplexGrid, region: Rect) -> Result<f64> {
    rmse_region(&amplitude_of(rec), &amplitude_of(truth), region)
}

/// Phase RMSE over a region after removing the fitted global phase, using
/// wrapped phase differences and ignoring samples where the reference
/// amplitude is below `amp_floor` times its maximum (phase is meaningless
/// there).
pub fn phase_rmse(
    rec: &ComplexGrid,
    truth: &ComplexGrid,
    region: Rect,
    amp_floor: f64,
) -> Result<f64> {
    let aligned = align_global_phase(rec, truth)?;
    region.check(rec.width(), rec.height())?;
    let max_amp = truth.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = amp_floor * max_amp;
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in region.y0..region.y0 + region.h {
        for x in region.x0..region.x0 + region.w {
            let t = truth.get(x, y);
            if t.norm() <= floor {
                continue;
            }
            // Wrapped difference via the argument of the ratio phasor.
            let d = (aligned.get(x, y) * t.conj()).arg();
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no samples above the amplitude floor".into()));
    }
    Ok((acc / n as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB over a region, with the peak taken from
/// the reference grid. Identical inputs give +inf.
pub fn psnr(rec: &RealGrid, truth: &RealGrid, region: Rect) -> Result<f64> {
    let rmse = rmse_region(rec, truth, region)?;
    let peak = truth.data().iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::Degenerate("reference grid has no positive peak".into()));
    }
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / rmse).log10())
}

/// Pearson correlation between two real grids over samples where `mask` is
/// nonzero.
pub fn masked_pearson(a: &RealGrid, b: &RealGrid, mask: &RealGrid) -> Result<f64> {
    check_same_size(a, b)?;
    check_same_size(a, mask)?;
    let mut n = 0usize;
    let (mut sa, mut sb) = (0.0, 0.0);
    for ((&x, &y), &m) in a.data().iter().zip(b.data()).zip(mask.data()) {
        if m != 0.0 {
            n += 1;
            sa += x;
            sb += y;
        }
    }
    if n < 2 {
        return Err(Error::Degenerate("mask selects fewer than 2 samples".into()));
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for ((&x, &y), &m) in a.data().iter().zip(b.data()).zip(mask.data()) {
        if m != 0.0 {
            cov += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::Degenerate("constant input under the mask".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Linear-interpolation percentile (p in [0, 100]) of a sample set.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::MissingData("empty sample set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN samples"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}
