//! Complex-field containers and the centered 2D Fourier transform on which
//! everything else builds.
//!
//! Conventions:
//! - Grids are row-major; the sample at `(x, y)` lives at index `y * width + x`.
//! - Spectra carry their DC sample at the pixel `(width / 2, height / 2)`
//!   (0-based, floor division), so pupil centers are plain pixel coordinates.
//! - Both transform directions are unitary (`1 / sqrt(W * H)` each way), so
//!   total energy is preserved and Parseval checks are symmetric.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// 2D complex-valued field with a physical pixel pitch.
///
/// The same container carries objects, wavefronts, pupils and spectrum
/// patches; the pitch is meters/pixel for spatial grids and cycles/meter
/// per pixel when the grid holds frequency-domain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    width: usize,
    height: usize,
    pitch: f64,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    /// All-zero grid.
    pub fn zeros(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Self::from_data(width, height, pitch, vec![Complex64::new(0.0, 0.0); width * height])
    }

    pub fn from_data(width: usize, height: usize, pitch: f64, data: Vec<Complex64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("grid dimensions must be >= 1".into()));
        }
        if !(pitch > 0.0) {
            return Err(Error::InvalidParameter(format!("pitch must be > 0, got {pitch}")));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, pitch, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Complex64) {
        self.data[y * self.width + x] = v;
    }

    /// Total energy `sum |z|^2`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest squared modulus over the grid.
    pub fn max_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
    }

    /// Pointwise modulus as a real grid.
    pub fn amplitude(&self) -> RealGrid {
        RealGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }
}

/// 2D real-valued grid (intensities, amplitudes, masks rendered as weights).
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::from_data(width, height, vec![0.0; width * height])
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("grid dimensions must be >= 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.data.len() as f64
    }
}

/// A [`ComplexGrid`] whose coordinates are spatial frequency, DC at the
/// center pixel. The inner grid's pitch is the frequency step in
/// cycles/meter per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    grid: ComplexGrid,
}

impl SpectrumGrid {
    /// Wrap a grid already laid out as a DC-centered spectrum whose pitch is
    /// the frequency step.
    pub fn from_grid(grid: ComplexGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut ComplexGrid {
        &mut self.grid
    }

    pub fn into_grid(self) -> ComplexGrid {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    /// Frequency step, cycles/meter per pixel.
    pub fn freq_pitch(&self) -> f64 {
        self.grid.pitch
    }

    /// The DC pixel `(width/2, height/2)`.
    pub fn center(&self) -> (usize, usize) {
        (self.grid.width / 2, self.grid.height / 2)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// In-place quadrant swap. `inverse = false` moves index 0 to the center
/// pixel (fftshift); `inverse = true` is its inverse. The two coincide on
/// even sizes.
fn shift2d(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    let (sx, sy) = (width / 2, height / 2);
    for y in 0..height {
        for x in 0..width {
            // fftshift sends source index i to (i + floor(n/2)) mod n;
            // ifftshift reads from there instead.
            let src = if inverse {
                ((x + sx) % width, (y + sy) % height)
            } else {
                (x, y)
            };
            let dst = if inverse {
                (x, y)
            } else {
                ((x + sx) % width, (y + sy) % height)
            };
            out[dst.1 * width + dst.0] = data[src.1 * width + src.0];
        }
    }
    data.copy_from_slice(&out);
}

fn transform(width: usize, height: usize, data: &[Complex64], dir: Direction) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    // Move the center pixel to index 0 so the FFT sees DC-at-origin data.
    shift2d(&mut buf, width, height, true);

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft_dir = match dir {
            Direction::Forward => rustfft::FftDirection::Forward,
            Direction::Inverse => rustfft::FftDirection::Inverse,
        };
        let row_fft = planner.plan_fft(width, fft_dir);
        let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(width) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        let col_fft = planner.plan_fft(height, fft_dir);
        let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
        let mut col = vec![Complex64::new(0.0, 0.0); height];
        for x in 0..width {
            for y in 0..height {
                col[y] = buf[y * width + x];
            }
            col_fft.process_with_scratch(&mut col, &mut scratch);
            for y in 0..height {
                buf[y * width + x] = col[y];
            }
        }
    });

    // Put DC back at the center pixel and apply the unitary scale.
    shift2d(&mut buf, width, height, false);
    let scale = 1.0 / ((width * height) as f64).sqrt();
    for z in buf.iter_mut() {
        *z *= scale;
    }
    buf
}

/// DC-centered forward 2D Fourier transform with unitary normalization.
pub fn fft2_centered(g: &ComplexGrid) -> Result<SpectrumGrid> {
    let data = transform(g.width, g.height, &g.data, Direction::Forward);
    let freq_pitch = 1.0 / (g.width as f64 * g.pitch);
    Ok(SpectrumGrid::from_grid(ComplexGrid::from_data(g.width, g.height, freq_pitch, data)?))
}

/// Exact inverse of [`fft2_centered`]; same unitary normalization.
pub fn ifft2_centered(s: &SpectrumGrid) -> Result<ComplexGrid> {
    let g = s.grid();
    let data = transform(g.width, g.height, &g.data, Direction::Inverse);
    let pitch = 1.0 / (g.width as f64 * g.pitch);
    ComplexGrid::from_data(g.width, g.height, pitch, data)
}

/// How [`embed_window`] combines the patch with the existing samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Replace,
    Add,
}

fn window_origin(
    dims: (usize, usize),
    center: (usize, usize),
    size: usize,
) -> Result<(usize, usize)> {
    let half = (size / 2) as i64;
    let x0 = center.0 as i64 - half;
    let y0 = center.1 as i64 - half;
    if x0 < 0 || y0 < 0 || x0 + size as i64 > dims.0 as i64 || y0 + size as i64 > dims.1 as i64 {
        return Err(Error::OutOfRange(format!(
            "{size}x{size} window at ({}, {}) exceeds {}x{} grid",
            center.0, center.1, dims.0, dims.1
        )));
    }
    Ok((x0 as usize, y0 as usize))
}

/// Copy out the `size`x`size` patch whose center pixel `(size/2, size/2)`
/// coincides with `center` of the spectrum. Windows reaching outside the
/// grid are rejected, never clipped.
pub fn extract_window(s: &SpectrumGrid, center: (usize, usize), size: usize) -> Result<ComplexGrid> {
    if size == 0 {
        return Err(Error::Dimension("window size must be >= 1".into()));
    }
    let g = s.grid();
    let (x0, y0) = window_origin((g.width, g.height), center, size)?;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        let row = (y0 + y) * g.width + x0;
        data.extend_from_slice(&g.data[row..row + size]);
    }
    ComplexGrid::from_data(size, size, g.pitch, data)
}

/// Write `patch` back into the spectrum at `center`, replacing or adding.
pub fn embed_window(
    s: &mut SpectrumGrid,
    patch: &ComplexGrid,
    center: (usize, usize),
    mode: EmbedMode,
) -> Result<()> {
    if patch.width != patch.height {
        return Err(Error::Dimension("embed patch must be square".into()));
    }
    let size = patch.width;
    let (w, h) = (s.grid().width, s.grid().height);
    let (x0, y0) = window_origin((w, h), center, size)?;
    let g = s.grid_mut();
    for y in 0..size {
        for x in 0..size {
            let dst = (y0 + y) * w + (x0 + x);
            let v = patch.data[y * size + x];
            match mode {
                EmbedMode::Replace => g.data[dst] = v,
                EmbedMode::Add => g.data[dst] += v,
            }
        }
    }
    Ok(())
}
