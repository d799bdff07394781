//! Ground-truth scenes, the aperture-scanning forward model, and pose-error
//! injection.
//!
//! Geometry conventions:
//! - The world frame is the checkerboard frame (board corners in the
//!   Z_w = 0 plane, meters). The camera base orientation is a 180° rotation
//!   about Z, so a camera at center (cx, cy, -z) looks toward +Z_w and the
//!   world origin projects to u0 + fx*cx/z (offsets grow with camera
//!   displacement).
//! - Scanning moves the aperture laterally in the Fourier plane. The nominal
//!   motion selects a different sub-spectrum but does not move the image;
//!   only the *pose error* (unplanned translation plus twist) both displaces
//!   the sampled spectrum window and warps the recorded image. With zero
//!   error bounds every induced warp is exactly the identity.
//! - Per-capture image warps are expressed relative to the reference
//!   capture: G_i = H_i * H_ref^-1 of the error-only board homographies, so
//!   the reference capture is recorded unwarped.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::warp_image;
use crate::calib::{CameraIntrinsics, Correspondence, ExtrinsicPose, Homography33};
use crate::error::{Error, Result};
use crate::field::{
    extract_window, fft2_centered, ifft2_centered, ComplexGrid, RealGrid, SpectrumGrid,
};
use crate::freqmap::{build_budget, OpticalBudget};

/// Complex ground-truth object: amplitude in [0, 1], phase in (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScene {
    field: ComplexGrid,
}

impl ObjectScene {
    pub fn new(field: ComplexGrid) -> Result<Self> {
        let max_amp = field.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if max_amp > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "scene amplitude must be within [0, 1], found {max_amp}"
            )));
        }
        Ok(Self { field })
    }

    pub fn from_amplitude_phase(amplitude: &RealGrid, phase: &RealGrid, pitch: f64) -> Result<Self> {
        if amplitude.width() != phase.width() || amplitude.height() != phase.height() {
            return Err(Error::Dimension("amplitude and phase grids differ in size".into()));
        }
        for (&a, &p) in amplitude.data().iter().zip(phase.data()) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidParameter(format!("amplitude {a} outside [0, 1]")));
            }
            if p <= -std::f64::consts::PI || p > std::f64::consts::PI {
                return Err(Error::InvalidParameter(format!("phase {p} outside (-pi, pi]")));
            }
        }
        let data = amplitude
            .data()
            .iter()
            .zip(phase.data())
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect();
        Ok(Self { field: ComplexGrid::from_data(amplitude.width(), amplitude.height(), pitch, data)? })
    }

    /// Constant-amplitude, zero-phase scene.
    pub fn uniform(n: usize, pitch: f64, amplitude: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::InvalidParameter("amplitude must be in [0, 1]".into()));
        }
        Ok(Self {
            field: ComplexGrid::from_data(n, n, pitch, vec![Complex64::new(amplitude, 0.0); n * n])?,
        })
    }

    /// Procedural resolution-bar target: four horizontal bands of vertical
    /// and horizontal bar groups of decreasing period, low-pass filtered to
    /// a band well inside the synthetic aperture so reconstructions can
    /// resolve it, with a smooth low-order phase relief scaled by
    /// `phase_amp` (radians, at most 2).
    pub fn bar_target(n: usize, pitch: f64, phase_amp: f64) -> Result<Self> {
        if n < 32 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("target size must be even and >= 32, got {n}")));
        }
        if !(0.0..=2.0).contains(&phase_amp) {
            return Err(Error::InvalidParameter("phase_amp must lie in [0, 2] radians".into()));
        }
        let mut raw = vec![0.4f64; n * n];
        let periods = [24usize, 16, 10, 6];
        let band_h = n / 4;
        for (bi, &p) in periods.iter().enumerate() {
            for y in bi * band_h..(bi + 1) * band_h {
                for x in 0..n {
                    let coord = if x < n / 2 { x } else { y };
                    raw[y * n + x] = if (coord / (p / 2)) % 2 == 0 { 0.85 } else { 0.15 };
                }
            }
        }
        // Band-limit with a raised-cosine radial window so the amplitude
        // spectrum is exactly zero beyond a quarter of the grid.
        let g = ComplexGrid::from_data(n, n, pitch, raw.iter().map(|&v| Complex64::new(v, 0.0)).collect())?;
        let mut s = fft2_centered(&g)?;
        let c = (n / 2) as f64;
        let (r0, r1) = (0.18 * n as f64, 0.25 * n as f64);
        {
            let grid = s.grid_mut();
            for y in 0..n {
                for x in 0..n {
                    let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                    let w = if r <= r0 {
                        1.0
                    } else if r >= r1 {
                        0.0
                    } else {
                        let t = (r - r0) / (r1 - r0);
                        (0.5 * std::f64::consts::PI * t).cos().powi(2)
                    };
                    let v = grid.get(x, y) * w;
                    grid.set(x, y, v);
                }
            }
        }
        let smooth = ifft2_centered(&s)?;
        let re: Vec<f64> = smooth.data().iter().map(|z| z.re).collect();
        let lo = re.iter().cloned().fold(f64::MAX, f64::min);
        let hi = re.iter().cloned().fold(f64::MIN, f64::max);
        let span = (hi - lo).max(1e-12);
        let tau = 2.0 * std::f64::consts::PI / n as f64;
        let data: Vec<Complex64> = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                let amp = 0.05 + 0.9 * (re[i] - lo) / span;
                let ph = phase_amp
                    * 0.6
                    * ((3.0 * tau * x).sin() * (2.0 * tau * y).cos()
                        + 0.5 * (4.0 * tau * (x + y)).cos());
                Complex64::from_polar(amp, ph)
            })
            .collect();
        Ok(Self { field: ComplexGrid::from_data(n, n, pitch, data)? })
    }

    pub fn field(&self) -> &ComplexGrid {
        &self.field
    }

    pub fn pitch(&self) -> f64 {
        self.field.pitch()
    }

    pub fn size(&self) -> usize {
        self.field.width()
    }
}

/// Far-field (Fraunhofer) spectrum of the object; the constant phase term
/// and the 1/lambda-z scale of the diffraction integral are dropped.
pub fn fraunhofer_spectrum(scene: &ObjectScene) -> Result<SpectrumGrid> {
    fft2_centered(scene.field())
}

/// Physical description of the scanning aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilSpec {
    /// Illumination wavelength, m.
    pub wavelength: f64,
    /// Camera focal length, m.
    pub focal_length: f64,
    /// Aperture diameter, m.
    pub aperture: f64,
    /// Sensor pixel size, m.
    pub sensor_pixel: f64,
    /// Optional unit-modulus phase screen over the pupil disk, sized to the
    /// capture window. None means an ideal (flat) pupil.
    pub aberration: Option<ComplexGrid>,
}

impl PupilSpec {
    pub fn new(wavelength: f64, focal_length: f64, aperture: f64, sensor_pixel: f64) -> Result<Self> {
        for (name, v) in [
            ("wavelength", wavelength),
            ("focal_length", focal_length),
            ("aperture", aperture),
            ("sensor_pixel", sensor_pixel),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { wavelength, focal_length, aperture, sensor_pixel, aberration: None })
    }

    pub fn with_aberration(mut self, screen: ComplexGrid) -> Self {
        self.aberration = Some(screen);
        self
    }

    pub fn budget(&self, m_px: usize) -> Result<OpticalBudget> {
        build_budget(self.wavelength, self.focal_length, self.aperture, self.sensor_pixel, m_px)
    }
}

/// Binary circular pupil of the given diameter centered in a square window.
pub fn pupil_disk(size: usize, diameter_px: f64) -> Result<ComplexGrid> {
    if diameter_px <= 0.0 || diameter_px > size as f64 * std::f64::consts::SQRT_2 {
        return Err(Error::InvalidParameter(format!(
            "pupil diameter {diameter_px} px does not fit a {size} px window"
        )));
    }
    let mut g = ComplexGrid::zeros(size, size, 1.0)?;
    let c = (size / 2) as f64;
    let r2 = (diameter_px / 2.0).powi(2);
    for y in 0..size {
        for x in 0..size {
            if (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= r2 {
                g.set(x, y, Complex64::new(1.0, 0.0));
            }
        }
    }
    Ok(g)
}

/// Smooth low-order aberration phase screen over a pupil disk: unit modulus
/// inside the disk, zero outside. `coeffs` are radians of [defocus,
/// astigmatism 0°, astigmatism 45°, coma x, coma y, spherical] on the
/// normalized pupil radius.
pub fn aberration_screen(size: usize, diameter_px: f64, coeffs: &[f64]) -> Result<ComplexGrid> {
    if coeffs.len() > 6 {
        return Err(Error::InvalidParameter("at most 6 aberration coefficients supported".into()));
    }
    let mut c6 = [0.0f64; 6];
    c6[..coeffs.len()].copy_from_slice(coeffs);
    let mut g = ComplexGrid::zeros(size, size, 1.0)?;
    let ctr = (size / 2) as f64;
    let rad = diameter_px / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - ctr, y as f64 - ctr);
            let r = (dx * dx + dy * dy).sqrt();
            if r > rad {
                continue;
            }
            let rho = r / rad;
            let th = dy.atan2(dx);
            let phase = c6[0] * (2.0 * rho * rho - 1.0)
                + c6[1] * rho * rho * (2.0 * th).cos()
                + c6[2] * rho * rho * (2.0 * th).sin()
                + c6[3] * (3.0 * rho.powi(3) - 2.0 * rho) * th.cos()
                + c6[4] * (3.0 * rho.powi(3) - 2.0 * rho) * th.sin()
                + c6[5] * (6.0 * rho.powi(4) - 6.0 * rho * rho + 1.0);
            g.set(x, y, Complex64::from_polar(1.0, phase));
        }
    }
    Ok(g)
}

/// Pupil transmission over a capture window: the binary disk of the derived
/// pixel diameter times the aberration screen (when present).
pub fn pupil_window(pupil: &PupilSpec, spectrum_size: usize, out_size: usize) -> Result<ComplexGrid> {
    let budget = pupil.budget(spectrum_size)?;
    if budget.d_pixel > out_size as f64 {
        return Err(Error::InvalidParameter(format!(
            "pupil diameter {:.1} px exceeds the {out_size} px capture window",
            budget.d_pixel
        )));
    }
    let mut disk = pupil_disk(out_size, budget.d_pixel)?;
    if let Some(ab) = &pupil.aberration {
        if ab.width() != out_size || ab.height() != out_size {
            return Err(Error::Dimension(format!(
                "aberration screen is {}x{}, capture window is {out_size}",
                ab.width(),
                ab.height()
            )));
        }
        for (d, a) in disk.data_mut().iter_mut().zip(ab.data()) {
            if d.re != 0.0 {
                if (a.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "aberration modulus must be 1 inside the pupil disk".into(),
                    ));
                }
                *d = *a;
            }
        }
    }
    Ok(disk)
}

/// Complex sensor-plane field of one capture: inverse transform of the
/// pupil-filtered sub-spectrum window.
pub fn capture_field(
    spectrum: &SpectrumGrid,
    pupil: &PupilSpec,
    center_px: (usize, usize),
    out_size: usize,
) -> Result<ComplexGrid> {
    let p = pupil_window(pupil, spectrum.width(), out_size)?;
    let mut win = extract_window(spectrum, center_px, out_size)?;
    for (w, m) in win.data_mut().iter_mut().zip(p.data()) {
        *w *= m;
    }
    ifft2_centered(&SpectrumGrid::from_grid(win))
}

/// Recorded intensity of one capture: |capture_field|^2.
pub fn capture(
    spectrum: &SpectrumGrid,
    pupil: &PupilSpec,
    center_px: (usize, usize),
    out_size: usize,
) -> Result<RealGrid> {
    let f = capture_field(spectrum, pupil, center_px, out_size)?;
    RealGrid::from_data(out_size, out_size, f.data().iter().map(|z| z.norm_sqr()).collect())
}

/// Checkerboard geometry: inner-corner grid and square side length (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardSpec {
    pub corner_rows: usize,
    pub corner_cols: usize,
    pub square: f64,
}

/// Scan raster and error bounds. Steps and error bounds are camera
/// displacements in the Fourier plane (meters); the twist bound is the
/// maximum pixel displacement the sampled camera rotation may induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub rows: u32,
    pub cols: u32,
    pub nominal_step: f64,
    pub step_error_bound: f64,
    pub twist_pixel_bound: f64,
    pub rng_seed: u64,
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 1 || self.cols < 1 {
            return Err(Error::InvalidParameter("scan grid must be at least 1x1".into()));
        }
        if self.nominal_step < 0.0 || self.step_error_bound < 0.0 || self.twist_pixel_bound < 0.0 {
            return Err(Error::InvalidParameter("scan step and error bounds must be >= 0".into()));
        }
        Ok(())
    }

    /// The central (reference) grid index.
    pub fn ref_index(&self) -> (u32, u32) {
        (self.rows / 2, self.cols / 2)
    }
}

/// Everything the simulator needs beyond the pupil and the plan: grid
/// sizes, the synthetic camera, and the calibration board.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGeometry {
    /// Object / spectrum grid dimension (even).
    pub object_size: usize,
    /// Object-plane pitch, m/pixel.
    pub object_pitch: f64,
    /// Capture window dimension (even).
    pub capture_size: usize,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-board distance along the optical axis, m.
    pub board_distance: f64,
    pub board: BoardSpec,
    /// Gaussian corner-noise sigma, pixels (0 = exact corners).
    pub corner_noise_sigma: f64,
    /// Optional sensor bit depth; None keeps full float precision.
    pub quantize_bits: Option<u32>,
}

/// Ground-truth pose record attached to each simulated capture.
#[derive(Debug, Clone, PartialEq)]
pub struct TruePose {
    /// Aperture center in the Fourier plane (m), nominal + error.
    pub actual_center: (f64, f64),
    /// Small camera rotation angles (rad) about x, y, z.
    pub twist: [f64; 3],
    /// Pixel-plane warp of this capture relative to the reference capture.
    pub induced_homography: Homography33,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub intensity: RealGrid,
    pub nominal_index: (u32, u32),
    /// Present for simulated data; absent for blind datasets.
    pub true_pose: Option<TruePose>,
    pub correspondences: Vec<Correspondence>,
    /// Validity mask set by alignment (1 = genuine sample, 0 = zero fill).
    pub mask: Option<RealGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSet {
    pub captures: Vec<Capture>,
    pub pupil: PupilSpec,
    pub plan: ScanPlan,
    pub geometry: SimGeometry,
    pub ref_index: (u32, u32),
    pub aligned: bool,
}

impl CaptureSet {
    pub fn capture_at(&self, idx: (u32, u32)) -> Option<&Capture> {
        self.captures.iter().find(|c| c.nominal_index == idx)
    }
}

/// Rotation about camera axes: Rz(az) * Ry(ay) * Rx(ax).
pub fn rotation_xyz(angles: [f64; 3]) -> Matrix3<f64> {
    let [ax, ay, az] = angles;
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos());
    let ry = Matrix3::new(ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos());
    let rz = Matrix3::new(az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

fn r_base() -> Matrix3<f64> {
    Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)
}

/// World-to-camera pose of a camera displaced laterally by `error_m` from
/// the optical axis and twisted by the small `twist` angles.
pub fn pose_from_error(geom: &SimGeometry, error_m: (f64, f64), twist: [f64; 3]) -> Result<ExtrinsicPose> {
    let r = rotation_xyz(twist) * r_base();
    let c = Vector3::new(error_m.0, error_m.1, -geom.board_distance);
    ExtrinsicPose::new(r, -r * c)
}

/// Maximum pixel displacement the twist homography K R K^-1 induces over the
/// corners of a size x size image.
pub fn twist_pixel_displacement(k: &CameraIntrinsics, twist: [f64; 3], size: usize) -> f64 {
    let g = k.matrix() * rotation_xyz(twist) * k.inverse_matrix();
    let s = (size - 1) as f64;
    [(0.0, 0.0), (s, 0.0), (0.0, s), (s, s)]
        .iter()
        .map(|&(x, y)| {
            let p = g * Vector3::new(x, y, 1.0);
            ((p.x / p.z - x).powi(2) + (p.y / p.z - y).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draw a random twist whose induced pixel displacement is uniform in
/// [0, bound]: a random axis mix scaled until the displacement matches.
/// The mix is weighted in displacement space, not angle space: a tilt moves
/// pixels roughly focal-length/image-width times more per radian than an
/// in-plane roll, so an unweighted axis would make every twist an almost
/// pure image translation and starve the rotational component. The roll
/// axis is additionally favored because a small tilt of the camera is
/// first-order equivalent to an image translation (already modeled by the
/// step error), while roll is the qualitatively distinct rotational drift.
fn draw_twist<R: Rng>(rng: &mut R, bound: f64, k: &CameraIntrinsics, size: usize) -> [f64; 3] {
    if bound <= 0.0 {
        return [0.0; 3];
    }
    let target = rng.gen_range(0.0..bound);
    let dir = loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            3.0 * rng.gen_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.3 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    if target < 1e-12 {
        return [0.0; 3];
    }
    // Per-axis pixel displacement per radian, used to equalize each axis's
    // share of the displacement budget.
    let probe = 1e-6;
    let mut gain = [0.0f64; 3];
    for (i, g) in gain.iter_mut().enumerate() {
        let mut a = [0.0; 3];
        a[i] = probe;
        *g = (twist_pixel_displacement(k, a, size) / probe).max(1e-12);
    }
    let mut angles = [
        dir[0] * 1e-4 / gain[0],
        dir[1] * 1e-4 / gain[1],
        dir[2] * 1e-4 / gain[2],
    ];
    for _ in 0..4 {
        let d = twist_pixel_displacement(k, angles, size);
        if d < 1e-18 {
            return [0.0; 3];
        }
        let s = target / d;
        angles = [angles[0] * s, angles[1] * s, angles[2] * s];
    }
    let d = twist_pixel_displacement(k, angles, size);
    if d > bound {
        let s = (bound / d) * (1.0 - 1e-9);
        angles = [angles[0] * s, angles[1] * s, angles[2] * s];
    }
    angles
}

/// Project the board's inner corners (centered on the world origin) through
/// the pinhole model, with optional Gaussian pixel noise.
pub fn project_checkerboard<R: Rng>(
    board: &BoardSpec,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    noise_sigma_px: f64,
    rng: &mut R,
) -> Result<Vec<Correspondence>> {
    if board.corner_rows < 2 || board.corner_cols < 2 || !(board.square > 0.0) {
        return Err(Error::InvalidParameter(
            "board needs at least 2x2 corners and a positive square size".into(),
        ));
    }
    if noise_sigma_px < 0.0 {
        return Err(Error::InvalidParameter("corner noise sigma must be >= 0".into()));
    }
    let (rows, cols) = (board.corner_rows, board.corner_cols);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let w = (
                (c as f64 - (cols - 1) as f64 / 2.0) * board.square,
                (r as f64 - (rows - 1) as f64 / 2.0) * board.square,
            );
            let pc = pose.transform(&Vector3::new(w.0, w.1, 0.0));
            let (mut u, mut v) = k.project_camera_point(&pc)?;
            if noise_sigma_px > 0.0 {
                u += gauss(rng, noise_sigma_px);
                v += gauss(rng, noise_sigma_px);
            }
            out.push(Correspondence { world: w, pixel: (u, v) });
        }
    }
    Ok(out)
}

/// Run the full scanning simulation: draw all pose errors in one serial
/// seeded pass, render each capture at its true spectrum window, warp it by
/// the pose-induced pixel homography, and attach projected board corners.
pub fn simulate_dataset(
    scene: &ObjectScene,
    pupil: &PupilSpec,
    plan: &ScanPlan,
    geom: &SimGeometry,
) -> Result<CaptureSet> {
    plan.validate()?;
    if scene.size() != geom.object_size {
        return Err(Error::Dimension(format!(
            "scene is {} px, geometry expects {}",
            scene.size(),
            geom.object_size
        )));
    }
    if geom.object_size % 2 != 0 || geom.capture_size % 2 != 0 {
        return Err(Error::InvalidParameter("grid sizes must be even".into()));
    }
    let spectrum = fraunhofer_spectrum(scene)?;
    let budget = pupil.budget(geom.object_size)?;
    let k = &geom.intrinsics;
    let dc = spectrum.center();
    let refi = plan.ref_index();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);

    // Pass 1: consume the RNG serially to fix every pose.
    let b = plan.step_error_bound;
    let mut drawn = Vec::with_capacity((plan.rows * plan.cols) as usize);
    for r in 0..plan.rows {
        for c in 0..plan.cols {
            // The reference capture anchors the scan origin: only errors
            // relative to it are observable (a reference error is a global
            // gauge on every offset and spectrum position), so it is zero
            // by convention.
            let e = if b > 0.0 && (r, c) != refi {
                (rng.gen_range(-b..b), rng.gen_range(-b..b))
            } else {
                (0.0, 0.0)
            };
            let twist = draw_twist(&mut rng, plan.twist_pixel_bound, k, geom.capture_size);
            drawn.push(((r, c), e, twist));
        }
    }
    let ref_entry = drawn
        .iter()
        .find(|(idx, _, _)| *idx == refi)
        .copied()
        .expect("reference index is always on the grid");
    let pose_ref = pose_from_error(geom, ref_entry.1, ref_entry.2)?;
    let h_ref_inv = Homography33::from_pose(k, &pose_ref)?.inverse()?;

    // Pass 2: render.
    let identity = Homography33::identity();
    let mut captures = Vec::with_capacity(drawn.len());
    for ((r, c), e, twist) in drawn {
        let nominal = (
            (c as f64 - refi.1 as f64) * plan.nominal_step,
            (r as f64 - refi.0 as f64) * plan.nominal_step,
        );
        let actual = (nominal.0 + e.0, nominal.1 + e.1);
        let cx = dc.0 as i64 + (actual.0 * budget.ratio1).round() as i64;
        let cy = dc.1 as i64 + (actual.1 * budget.ratio1).round() as i64;
        if cx < 0 || cy < 0 {
            return Err(Error::OutOfRange(format!(
                "capture ({r}, {c}) window center ({cx}, {cy}) leaves the spectrum"
            )));
        }
        let ideal = capture(&spectrum, pupil, (cx as usize, cy as usize), geom.capture_size)?;
        let pose = pose_from_error(geom, e, twist)?;
        let g = Homography33::from_pose(k, &pose)?.compose(&h_ref_inv)?;
        let recorded = if g.max_entry_deviation(&identity) < 1e-12 {
            ideal
        } else {
            warp_image(&ideal, &g)?
        };
        let corr = project_checkerboard(&geom.board, k, &pose, geom.corner_noise_sigma, &mut rng)?;
        captures.push(Capture {
            intensity: recorded,
            nominal_index: (r, c),
            true_pose: Some(TruePose { actual_center: actual, twist, induced_homography: g }),
            correspondences: corr,
            mask: None,
        });
    }

    if let Some(bits) = geom.quantize_bits {
        quantize_captures(&mut captures, bits)?;
    }

    Ok(CaptureSet {
        captures,
        pupil: pupil.clone(),
        plan: plan.clone(),
        geometry: geom.clone(),
        ref_index: refi,
        aligned: false,
    })
}

fn quantize_captures(captures: &mut [Capture], bits: u32) -> Result<()> {
    if bits == 0 || bits > 16 {
        return Err(Error::InvalidParameter(format!("quantization depth {bits} outside 1..=16 bits")));
    }
    let max = captures
        .iter()
        .flat_map(|c| c.intensity.data().iter().copied())
        .fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(());
    }
    let levels = ((1u32 << bits) - 1) as f64;
    for cap in captures {
        for v in cap.intensity.data_mut() {
            *v = (*v / max * levels).round() * max / levels;
        }
    }
    Ok(())
}

/// A ready-made simulation configuration: pupil, geometry, and the nominal
/// Fourier-plane step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPreset {
    pub pupil: PupilSpec,
    pub geometry: SimGeometry,
    /// Nominal Fourier-plane camera step, m.
    pub nominal_step: f64,
    /// Camera displacement (m) that drifts the image by one pixel.
    pub meters_per_image_px: f64,
}

impl SimPreset {
    /// Build a scan plan with error bounds given in image pixels (the
    /// paper's unit for step errors) and twist pixels.
    pub fn plan(
        &self,
        rows: u32,
        cols: u32,
        step_error_image_px: f64,
        twist_px: f64,
        seed: u64,
    ) -> ScanPlan {
        ScanPlan {
            rows,
            cols,
            nominal_step: self.nominal_step,
            step_error_bound: step_error_image_px * self.meters_per_image_px,
            twist_pixel_bound: twist_px,
            rng_seed: seed,
        }
    }

    pub fn budget(&self) -> Result<OpticalBudget> {
        self.pupil.budget(self.geometry.object_size)
    }
}

const PRESET_LAMBDA: f64 = 520e-9;
const PRESET_DELTA: f64 = 2.2e-6;
const PRESET_OBJECT: usize = 256;
const PRESET_CAPTURE: usize = 64;

fn preset(focal: f64, aperture: f64, square: f64, nominal_image_px: f64) -> SimPreset {
    let s = (PRESET_OBJECT / PRESET_CAPTURE) as f64;
    let fx = focal / (s * PRESET_DELTA);
    let half = (PRESET_CAPTURE / 2) as f64;
    let intrinsics = CameraIntrinsics::new(fx, fx, half, half).expect("positive focal");
    let meters_per_image_px = focal / fx; // = s * sensor pixel
    SimPreset {
        pupil: PupilSpec::new(PRESET_LAMBDA, focal, aperture, PRESET_DELTA).expect("positive preset"),
        geometry: SimGeometry {
            object_size: PRESET_OBJECT,
            object_pitch: PRESET_DELTA,
            capture_size: PRESET_CAPTURE,
            intrinsics,
            board_distance: focal,
            board: BoardSpec { corner_rows: 6, corner_cols: 9, square },
            corner_noise_sigma: 0.0,
            quantize_bits: None,
        },
        nominal_step: nominal_image_px * meters_per_image_px,
        meters_per_image_px,
    }
}

/// Reconstruction-scale preset: one image pixel of camera drift equals one
/// spectrum pixel of aperture offset; 9-pixel nominal steps give 70% linear
/// pupil overlap on a 30-pixel pupil, and a 15x15 grid fits the 256-pixel
/// spectrum.
pub fn recon_preset() -> SimPreset {
    preset(7.8125e-3, 264e-6, 5e-5, 9.0)
}

/// Calibration-scale preset matching the reference experiment: 30-pixel
/// nominal image offsets with a 6x9 board of 2 mm squares; ten image pixels
/// of drift correspond to one spectrum pixel.
pub fn calib_preset() -> SimPreset {
    preset(78.125e-3, 2.64e-3, 2e-3, 30.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{decompose_extrinsics, estimate_homography_dlt, pixel_offsets, project_world_origin};
    use crate::freqmap::{adjacent_corner_spans, ratio2_from_calibration};
    use approx::assert_relative_eq;

    fn test_pupil_for_d(m: usize, d_pixel: f64) -> PupilSpec {
        // RES = 1.22 lambda f / D; pick the sensor pixel so the derived
        // pupil diameter equals d_pixel on an m-sized grid.
        let (lambda, f, d) = (520e-9, 1e-2, 1e-3);
        let res = 1.22 * lambda * f / d;
        let delta = res * d_pixel / m as f64;
        PupilSpec::new(lambda, f, d, delta).unwrap()
    }

    #[test]
    fn uniform_scene_spectrum_is_dc_impulse() {
        let scene = ObjectScene::uniform(32, 1e-6, 0.8).unwrap();
        let s = fraunhofer_spectrum(&scene).unwrap();
        let (cx, cy) = s.center();
        assert_relative_eq!(s.grid().get(cx, cy).re, 0.8 * 32.0, max_relative = 1e-12);
        let off_energy: f64 = s
            .grid()
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| (i % 32, i / 32) != (cx, cy))
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(off_energy < 1e-20);
    }

    #[test]
    fn global_phase_multiplies_spectrum() {
        let scene = ObjectScene::bar_target(64, 1e-6, 0.8).unwrap();
        let theta = 0.7;
        let rotated = ObjectScene::new(
            ComplexGrid::from_data(
                64,
                64,
                1e-6,
                scene.field().data().iter().map(|z| z * Complex64::from_polar(1.0, theta)).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let s0 = fraunhofer_spectrum(&scene).unwrap();
        let s1 = fraunhofer_spectrum(&rotated).unwrap();
        let rot = Complex64::from_polar(1.0, theta);
        let norm = s0.grid().data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in s0.grid().data().iter().zip(s1.grid().data()) {
            assert!((a * rot - b).norm() / norm < 1e-12);
        }
    }

    #[test]
    fn fraunhofer_matches_naive_dft() {
        let scene = ObjectScene::bar_target(32, 1e-6, 1.0).unwrap();
        let s = fraunhofer_spectrum(&scene).unwrap();
        let oracle = crate::field::tests::dft2_centered_oracle(scene.field());
        let norm = oracle.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in s.grid().data().iter().zip(&oracle) {
            assert!((a - b).norm() / norm < 1e-10);
        }
    }

    #[test]
    fn bar_target_is_band_limited_and_in_range() {
        let scene = ObjectScene::bar_target(128, 1e-6, 0.5).unwrap();
        for z in scene.field().data() {
            assert!(z.norm() <= 0.95 + 1e-12 && z.norm() >= 0.05 - 1e-12);
        }
        // Amplitude spectrum should vanish outside a third of the grid
        // (band limit 0.25 n plus the small phase-modulation spread).
        let s = fraunhofer_spectrum(&scene).unwrap();
        let c = 64.0;
        let total = s.grid().energy();
        let outer: f64 = s
            .grid()
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (x, y) = ((i % 128) as f64, (i / 128) as f64);
                ((x - c).powi(2) + (y - c).powi(2)).sqrt() > 43.0
            })
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(outer / total < 1e-4, "energy fraction beyond band: {}", outer / total);
    }

    #[test]
    fn all_pass_capture_reproduces_object_intensity() {
        // Sensor pixel chosen so the pupil disk spans the whole grid. The
        // phase-free target is strictly band-limited inside the disk (a
        // phase screen would convolve the spectrum and leak past it), so
        // the all-pass capture must reproduce the intensity exactly.
        let n = 64;
        let scene = ObjectScene::bar_target(n, 2.2e-6, 0.0).unwrap();
        let pupil = test_pupil_for_d(n, n as f64);
        let s = fraunhofer_spectrum(&scene).unwrap();
        let img = capture(&s, &pupil, s.center(), n).unwrap();
        for y in 0..n {
            for x in 0..n {
                assert_relative_eq!(
                    img.get(x, y),
                    scene.field().get(x, y).norm_sqr(),
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn impulse_spectrum_capture_is_constant() {
        let n = 64;
        let w = 16;
        let mut g = ComplexGrid::zeros(n, n, 100.0).unwrap();
        g.set(n / 2 + 3, n / 2 - 2, Complex64::new(2.0, 0.0));
        let s = SpectrumGrid::from_grid(g);
        let pupil = test_pupil_for_d(n, 12.0);
        let img = capture(&s, &pupil, (n / 2 + 3, n / 2 - 2), w).unwrap();
        // |ifft of a centered impulse of value 2| = 2/W everywhere.
        let expect = (2.0 / w as f64).powi(2);
        for v in img.data() {
            assert_relative_eq!(*v, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn shift_symmetric_spectrum_gives_identical_captures() {
        // An impulse train of period 4 along x looks the same from windows 4
        // pixels apart.
        let n = 64;
        let mut g = ComplexGrid::zeros(n, n, 100.0).unwrap();
        for x in (0..n).step_by(4) {
            g.set(x, n / 2, Complex64::new(1.0, 0.0));
        }
        let s = SpectrumGrid::from_grid(g);
        let pupil = test_pupil_for_d(n, 12.0);
        let a = capture(&s, &pupil, (n / 2, n / 2), 16).unwrap();
        let b = capture(&s, &pupil, (n / 2 + 4, n / 2), 16).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn capture_rejects_window_outside_spectrum() {
        let scene = ObjectScene::uniform(64, 1e-6, 1.0).unwrap();
        let s = fraunhofer_spectrum(&scene).unwrap();
        let pupil = test_pupil_for_d(64, 12.0);
        assert!(capture(&s, &pupil, (4, 32), 16).is_err());
    }

    #[test]
    fn sub_aperture_energy_bounded_by_scene_energy() {
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.7).unwrap();
        let s = fraunhofer_spectrum(&scene).unwrap();
        let total = scene.field().energy();
        let dc = s.center();
        for center in [dc, (dc.0 + 40, dc.1), (dc.0 - 25, dc.1 + 33)] {
            let img = capture(&s, &preset.pupil, center, 64).unwrap();
            assert!(img.total() <= total + 1e-10 * total);
        }
    }

    #[test]
    fn mirror_positions_of_real_scene_have_equal_energy() {
        // A real-valued scene has a Hermitian spectrum, so the pupil disk at
        // mirrored offsets covers samples of equal modulus.
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.0).unwrap();
        let s = fraunhofer_spectrum(&scene).unwrap();
        let dc = s.center();
        for off in [(27usize, 0usize), (0, 27), (18, 18)] {
            let plus = capture(&s, &preset.pupil, (dc.0 + off.0, dc.1 + off.1), 64).unwrap();
            let minus = capture(&s, &preset.pupil, (dc.0 - off.0, dc.1 - off.1), 64).unwrap();
            assert_relative_eq!(plus.total(), minus.total(), max_relative = 1e-10);
        }
    }

    #[test]
    fn checkerboard_projection_is_symmetric_about_principal_point() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let pose = ExtrinsicPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.3)).unwrap();
        let board = BoardSpec { corner_rows: 6, corner_cols: 9, square: 2e-3 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corr = project_checkerboard(&board, &k, &pose, 0.0, &mut rng).unwrap();
        assert_eq!(corr.len(), 54);
        // Corner (r, c) mirrors corner (5-r, 8-c) about (u0, v0).
        for r in 0..6 {
            for c in 0..9 {
                let a = corr[r * 9 + c].pixel;
                let b = corr[(5 - r) * 9 + (8 - c)].pixel;
                assert_relative_eq!(a.0 - 320.0, -(b.0 - 320.0), epsilon = 1e-9);
                assert_relative_eq!(a.1 - 240.0, -(b.1 - 240.0), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn checkerboard_matches_manual_pinhole_arithmetic() {
        // Corner (row 0, col 0) of a 6x9 board with 2 mm squares sits at
        // world (-8 mm, -5 mm). With R = I, T = (1 mm, -2 mm, 250 mm):
        //   X_c = -0.008 + 0.001 = -0.007, Y_c = -0.005 - 0.002 = -0.007
        //   u = 500 + 900 * (-0.007) / 0.25 = 474.8
        //   v = 400 + 850 * (-0.007) / 0.25 = 376.2
        let k = CameraIntrinsics::new(900.0, 850.0, 500.0, 400.0).unwrap();
        let pose = ExtrinsicPose::new(Matrix3::identity(), Vector3::new(0.001, -0.002, 0.25)).unwrap();
        let board = BoardSpec { corner_rows: 6, corner_cols: 9, square: 2e-3 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corr = project_checkerboard(&board, &k, &pose, 0.0, &mut rng).unwrap();
        assert_relative_eq!(corr[0].world.0, -0.008, epsilon = 1e-15);
        assert_relative_eq!(corr[0].pixel.0, 474.8, max_relative = 1e-12);
        assert_relative_eq!(corr[0].pixel.1, 376.2, max_relative = 1e-12);
    }

    #[test]
    fn exact_corners_reestimate_their_homography() {
        let preset = calib_preset();
        let geom = &preset.geometry;
        let pose = pose_from_error(geom, (1e-4, -2e-4), [1e-4, -5e-5, 2e-4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corr = project_checkerboard(&geom.board, &geom.intrinsics, &pose, 0.0, &mut rng).unwrap();
        let est = estimate_homography_dlt(&corr).unwrap();
        assert!(est.rms_px < 1e-9, "reprojection RMS {}", est.rms_px);
        let truth = Homography33::from_pose(&geom.intrinsics, &pose).unwrap();
        assert!(est.homography.max_entry_deviation(&truth) < 1e-9);
    }

    #[test]
    fn corner_behind_camera_is_rejected() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let pose = ExtrinsicPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -0.3)).unwrap();
        let board = BoardSpec { corner_rows: 6, corner_cols: 9, square: 2e-3 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(project_checkerboard(&board, &k, &pose, 0.0, &mut rng).is_err());
    }

    #[test]
    fn zero_error_dataset_is_nominal_with_identity_warps() {
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.8).unwrap();
        let plan = preset.plan(3, 3, 0.0, 0.0, 7);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap();
        assert_eq!(set.captures.len(), 9);
        assert_eq!(set.ref_index, (1, 1));
        let s = fraunhofer_spectrum(&scene).unwrap();
        let budget = preset.budget().unwrap();
        let dc = s.center();
        for cap in &set.captures {
            let tp = cap.true_pose.as_ref().unwrap();
            let (r, c) = cap.nominal_index;
            let nominal = (
                (c as f64 - 1.0) * plan.nominal_step,
                (r as f64 - 1.0) * plan.nominal_step,
            );
            assert_eq!(tp.actual_center, nominal);
            assert_eq!(tp.twist, [0.0; 3]);
            assert!(tp.induced_homography.max_entry_deviation(&Homography33::identity()) < 1e-12);
            let cx = (dc.0 as i64 + (nominal.0 * budget.ratio1).round() as i64) as usize;
            let cy = (dc.1 as i64 + (nominal.1 * budget.ratio1).round() as i64) as usize;
            let direct = capture(&s, &preset.pupil, (cx, cy), 64).unwrap();
            assert_eq!(cap.intensity.data(), direct.data());
        }
    }

    #[test]
    fn same_seed_reproduces_identical_datasets() {
        let preset = calib_preset();
        let mut geom = preset.geometry.clone();
        geom.corner_noise_sigma = 0.5;
        let scene = ObjectScene::bar_target(256, geom.object_pitch, 0.5).unwrap();
        let plan = preset.plan(3, 3, 15.0, 2.0, 99);
        let a = simulate_dataset(&scene, &preset.pupil, &plan, &geom).unwrap();
        let b = simulate_dataset(&scene, &preset.pupil, &plan, &geom).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.5).unwrap();
        let a = simulate_dataset(&scene, &preset.pupil, &preset.plan(3, 3, 4.5, 2.0, 1), &preset.geometry)
            .unwrap();
        let b = simulate_dataset(&scene, &preset.pupil, &preset.plan(3, 3, 4.5, 2.0, 2), &preset.geometry)
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn twist_bound_is_respected() {
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.5).unwrap();
        let plan = preset.plan(3, 3, 0.0, 2.0, 11);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap();
        let mut saw_twist = false;
        for cap in &set.captures {
            let tw = cap.true_pose.as_ref().unwrap().twist;
            let d = twist_pixel_displacement(&preset.geometry.intrinsics, tw, 64);
            assert!(d <= 2.0 + 1e-9, "twist displacement {d} exceeds bound");
            saw_twist |= d > 0.1;
        }
        assert!(saw_twist, "all sampled twists were negligible");
    }

    #[test]
    fn zero_twist_warps_are_pure_translations() {
        let preset = calib_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.5).unwrap();
        let plan = preset.plan(3, 3, 15.0, 0.0, 5);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap();
        let k = &preset.geometry.intrinsics;
        let z = preset.geometry.board_distance;
        let e_ref = {
            let tp = set.capture_at(set.ref_index).unwrap().true_pose.clone().unwrap();
            // With zero twist the actual center minus the nominal center is
            // the camera error; for the reference the nominal is (0, 0).
            tp.actual_center
        };
        for cap in &set.captures {
            let tp = cap.true_pose.as_ref().unwrap();
            let g = tp.induced_homography.matrix();
            // Off-diagonal / projective parts vanish for a pure translation.
            let scale = g[(0, 0)];
            for (i, j) in [(0, 1), (1, 0), (2, 0), (2, 1)] {
                assert!(g[(i, j)].abs() < 1e-12 * scale.abs().max(1.0));
            }
            let (r, c) = cap.nominal_index;
            let nominal = (
                (c as f64 - 1.0) * plan.nominal_step,
                (r as f64 - 1.0) * plan.nominal_step,
            );
            let e = (tp.actual_center.0 - nominal.0, tp.actual_center.1 - nominal.1);
            let (tx, ty) = tp.induced_homography.apply(0.0, 0.0).unwrap();
            assert_relative_eq!(tx, k.fx * (e.0 - e_ref.0) / z, epsilon = 1e-9);
            assert_relative_eq!(ty, k.fy * (e.1 - e_ref.1) / z, epsilon = 1e-9);
        }
    }

    #[test]
    fn calibration_path_recovers_true_origin_offsets() {
        // End-to-end: DLT from exact corners, extrinsics with the known
        // intrinsics, world-origin projection, offsets vs. the directly
        // projected true poses.
        let preset = calib_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.5).unwrap();
        let plan = preset.plan(3, 3, 15.0, 2.0, 21);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap();
        let k = &preset.geometry.intrinsics;
        let mut origins = Vec::new();
        let mut truth = Vec::new();
        for cap in &set.captures {
            let est = estimate_homography_dlt(&cap.correspondences).unwrap();
            let pose = decompose_extrinsics(&est.homography, k).unwrap();
            origins.push((cap.nominal_index, project_world_origin(k, &pose).unwrap()));
            let tp = cap.true_pose.as_ref().unwrap();
            let (r, c) = cap.nominal_index;
            let nominal = (
                (c as f64 - 1.0) * plan.nominal_step,
                (r as f64 - 1.0) * plan.nominal_step,
            );
            let e = (tp.actual_center.0 - nominal.0, tp.actual_center.1 - nominal.1);
            let true_pose = pose_from_error(&preset.geometry, e, tp.twist).unwrap();
            truth.push((cap.nominal_index, project_world_origin(k, &true_pose).unwrap()));
        }
        let extracted = pixel_offsets(&origins, set.ref_index).unwrap();
        let expected = pixel_offsets(&truth, set.ref_index).unwrap();
        for (a, b) in extracted.iter().zip(&expected) {
            assert!((a.1 .0 - b.1 .0).abs() < 1e-6, "du {} vs {}", a.1 .0, b.1 .0);
            assert!((a.1 .1 - b.1 .1).abs() < 1e-6, "dv {} vs {}", a.1 .1, b.1 .1);
        }
    }

    #[test]
    fn reference_capture_span_yields_object_scale() {
        let preset = recon_preset();
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.5).unwrap();
        let plan = preset.plan(1, 1, 0.0, 0.0, 0);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap();
        let corr = &set.captures[0].correspondences;
        let (h, v) = adjacent_corner_spans(corr, &preset.geometry.board).unwrap();
        assert_relative_eq!(h, v, max_relative = 5e-3);
        let ratio2 = ratio2_from_calibration(preset.geometry.board.square, 0.5 * (h + v)).unwrap();
        // Ground truth: one capture pixel spans (object grid / capture grid)
        // object pixels of the sample plane.
        let true_scale = preset.geometry.object_pitch * 256.0 / 64.0;
        assert_relative_eq!(ratio2, true_scale, max_relative = 5e-3);
    }

    #[test]
    fn presets_have_designed_scales() {
        let rp = recon_preset();
        let rb = rp.budget().unwrap();
        assert!((rb.d_pixel - 30.0).abs() < 0.05, "recon pupil {} px", rb.d_pixel);
        // Image-to-spectrum pixel conversion near 1 for the recon preset.
        let kappa_r = rb.ratio1 * rp.meters_per_image_px;
        assert_relative_eq!(kappa_r, 1.0, max_relative = 2e-3);
        assert_relative_eq!(rp.nominal_step * rb.ratio1, 9.0, max_relative = 2e-3);

        let cp = calib_preset();
        let cb = cp.budget().unwrap();
        assert!((cb.d_pixel - 30.0).abs() < 0.05, "calib pupil {} px", cb.d_pixel);
        let kappa_c = cb.ratio1 * cp.meters_per_image_px;
        assert_relative_eq!(kappa_c, 0.1, max_relative = 2e-3);
        assert_relative_eq!(cp.nominal_step * cb.ratio1, 3.0, max_relative = 2e-3);
    }

    #[test]
    fn quantization_flag_discretizes_intensities() {
        let preset = recon_preset();
        let mut geom = preset.geometry.clone();
        geom.quantize_bits = Some(8);
        let scene = ObjectScene::bar_target(256, geom.object_pitch, 0.5).unwrap();
        let plan = preset.plan(1, 1, 0.0, 0.0, 0);
        let set = simulate_dataset(&scene, &preset.pupil, &plan, &geom).unwrap();
        let max = set.captures[0].intensity.data().iter().cloned().fold(0.0, f64::max);
        let step = max / 255.0;
        for v in set.captures[0].intensity.data() {
            let q = v / step;
            assert!((q - q.round()).abs() < 1e-9, "value {v} not on the 8-bit lattice");
        }
    }

    #[test]
    fn aberration_screen_is_unit_modulus_on_disk() {
        let screen = aberration_screen(64, 30.0, &[0.8, -0.5, 0.3, 0.2, -0.1, 0.4]).unwrap();
        let c = 32.0;
        let mut inside = 0;
        for y in 0..64 {
            for x in 0..64 {
                let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                let v = screen.get(x, y);
                if r <= 15.0 {
                    assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
                    inside += 1;
                } else if r > 15.1 {
                    assert_eq!(v, Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!(inside > 600);
    }

    #[test]
    fn pupil_window_applies_aberration_inside_disk_only() {
        let pupil = test_pupil_for_d(64, 12.0);
        let screen = aberration_screen(16, 12.0, &[0.7]).unwrap();
        let ab = pupil.clone().with_aberration(screen.clone());
        let w = pupil_window(&ab, 64, 16).unwrap();
        let plain = pupil_window(&pupil, 64, 16).unwrap();
        for i in 0..w.data().len() {
            if plain.data()[i].re != 0.0 {
                assert_relative_eq!(w.data()[i].norm(), 1.0, epsilon = 1e-12);
            } else {
                assert_eq!(w.data()[i], Complex64::new(0.0, 0.0));
            }
        }
    }
}
