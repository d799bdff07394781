//! Alternating-projection Fourier-ptychographic reconstruction with
//! simultaneous pupil recovery.
//!
//! One capture update: take the pupil-windowed sub-spectrum, propagate to
//! the sensor plane, replace the amplitude with the measured one, propagate
//! back, and apply multiplicative-conjugate corrections to the object
//! spectrum and the pupil. Initialization seeds the object spectrum from
//! the reference capture's square-root amplitude instead of zero: a zero
//! spectrum makes the amplitude-replacement step degenerate on the first
//! capture, so the standard seed is used and an epsilon guard protects the
//! division in general.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{
    embed_window, extract_window, fft2_centered, ifft2_centered, ComplexGrid, EmbedMode, RealGrid,
    SpectrumGrid,
};
use crate::freqmap::OpticalBudget;
use crate::scene::{pupil_disk, CaptureSet};

/// Order in which captures are visited within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraversalOrder {
    /// Reference capture first, then outward by spectrum-center distance.
    Spiral,
    /// Input order.
    Raster,
    /// Seeded shuffle.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    /// Relative misfit-change tolerance; convergence requires it to hold
    /// over 3 consecutive iterations.
    pub tol: f64,
    pub order: TraversalOrder,
    /// Update the pupil estimate alongside the spectrum.
    pub recover_pupil: bool,
    /// Division guard for the amplitude-replacement and update steps.
    pub epsilon: f64,
    /// Seed for the Random traversal order.
    pub order_seed: u64,
    /// Down-weight capture pixels whose validity mask is zero (warp
    /// zero-fill): they neither constrain the amplitude nor count toward
    /// the misfit. Off by default.
    pub use_masks: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            max_iters: 50,
            tol: 1e-4,
            order: TraversalOrder::Spiral,
            recover_pupil: true,
            epsilon: 1e-12,
            order_seed: 0,
            use_masks: false,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0 && self.beta > 0.0 && self.beta <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "step sizes must lie in (0, 2], got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Mutable solver state: object spectrum, pupil, and the misfit history.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub o: SpectrumGrid,
    pub p: ComplexGrid,
    pub k: usize,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
    support: Vec<bool>,
}

impl ReconState {
    /// Build a state from explicit spectrum and pupil estimates; the pupil
    /// support is taken from its nonzero entries.
    pub fn from_parts(o: SpectrumGrid, p: ComplexGrid) -> Result<Self> {
        if p.width() != p.height() {
            return Err(Error::Dimension("pupil window must be square".into()));
        }
        if p.width() > o.width() || p.height() > o.height() {
            return Err(Error::Dimension("pupil window larger than the spectrum".into()));
        }
        let support = p.data().iter().map(|z| z.norm_sqr() > 0.0).collect();
        Ok(Self { o, p, k: 0, history: Vec::new(), warnings: Vec::new(), support })
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }
}

/// Seed the solver: object spectrum = transform of the reference capture's
/// square-root amplitude embedded at the spectrum center, pupil = ideal
/// unit disk of the budget's pixel diameter.
pub fn initialize_state(
    set: &CaptureSet,
    budget: &OpticalBudget,
    ref_index: (u32, u32),
) -> Result<ReconState> {
    let m = budget.m_px;
    let w = set.geometry.capture_size;
    if m % 2 != 0 || w % 2 != 0 || m < w {
        return Err(Error::Dimension(format!(
            "need even grids with spectrum ({m}) >= capture window ({w})"
        )));
    }
    let reference = set
        .capture_at(ref_index)
        .ok_or_else(|| Error::MissingData(format!("reference capture ({}, {}) not present", ref_index.0, ref_index.1)))?;
    if reference.intensity.width() != w || reference.intensity.height() != w {
        return Err(Error::Dimension(format!(
            "reference capture is {}x{}, expected {w}x{w}",
            reference.intensity.width(),
            reference.intensity.height()
        )));
    }
    let freq_pitch = 2.0 * budget.k_max / m as f64;
    let capture_pitch = 1.0 / (w as f64 * freq_pitch);
    let sqrt_ref = ComplexGrid::from_data(
        w,
        w,
        capture_pitch,
        reference
            .intensity
            .data()
            .iter()
            .map(|&v| Complex64::new(v.max(0.0).sqrt(), 0.0))
            .collect(),
    )?;
    let seed_spectrum = fft2_centered(&sqrt_ref)?;
    let mut o = SpectrumGrid::from_grid(ComplexGrid::zeros(m, m, freq_pitch)?);
    embed_window(&mut o, seed_spectrum.grid(), (m / 2, m / 2), EmbedMode::Replace)?;
    let p = pupil_disk(w, budget.d_pixel)?;
    ReconState::from_parts(o, p)
}

/// Amplitude-replacement step: keep the phase of `phi`, impose the measured
/// amplitude, with an epsilon guard against vanishing modulus.
pub fn impose_amplitude(phi: &ComplexGrid, intensity: &RealGrid, epsilon: f64) -> Result<ComplexGrid> {
    if phi.width() != intensity.width() || phi.height() != intensity.height() {
        return Err(Error::Dimension("field and intensity grids differ in size".into()));
    }
    let data = phi
        .data()
        .iter()
        .zip(intensity.data())
        .map(|(z, &i)| z * (i.max(0.0).sqrt() / (z.norm() + epsilon)))
        .collect();
    ComplexGrid::from_data(phi.width(), phi.height(), phi.pitch(), data)
}

/// Visit order for one iteration, computed once and reused every pass.
pub fn traversal_order(
    set: &CaptureSet,
    centers: &[(usize, usize)],
    cfg: &ReconConfig,
) -> Result<Vec<usize>> {
    if centers.len() != set.captures.len() {
        return Err(Error::Dimension(format!(
            "{} centers for {} captures",
            centers.len(),
            set.captures.len()
        )));
    }
    let mut idx: Vec<usize> = (0..set.captures.len()).collect();
    match cfg.order {
        TraversalOrder::Raster => {}
        TraversalOrder::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.order_seed);
            idx.shuffle(&mut rng);
        }
        TraversalOrder::Spiral => {
            let anchor = set
                .captures
                .iter()
                .position(|c| c.nominal_index == set.ref_index)
                .map(|i| centers[i])
                .unwrap_or_else(|| {
                    // Pruned reference would have been rejected upstream;
                    // fall back to the mean center.
                    let n = centers.len().max(1);
                    (
                        centers.iter().map(|c| c.0).sum::<usize>() / n,
                        centers.iter().map(|c| c.1).sum::<usize>() / n,
                    )
                });
            idx.sort_by_key(|&i| {
                let dx = centers[i].0 as i64 - anchor.0 as i64;
                let dy = centers[i].1 as i64 - anchor.1 as i64;
                (dx * dx + dy * dy, i as i64)
            });
        }
    }
    Ok(idx)
}

fn pass(
    state: &mut ReconState,
    set: &CaptureSet,
    centers: &[(usize, usize)],
    order: &[usize],
    cfg: &ReconConfig,
    update: bool,
) -> Result<f64> {
    let w = state.p.width();
    let freq_pitch = state.o.freq_pitch();
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in order {
        let cap = &set.captures[i];
        let center = centers[i];
        let win = extract_window(&state.o, center, w)?;
        let psi_data: Vec<Complex64> = win
            .data()
            .iter()
            .zip(state.p.data())
            .map(|(o, p)| o * p)
            .collect();
        let psi = ComplexGrid::from_data(w, w, freq_pitch, psi_data)?;
        let phi = ifft2_centered(&SpectrumGrid::from_grid(psi.clone()))?;
        let mask = if cfg.use_masks { cap.mask.as_ref() } else { None };
        for (j, (z, &iv)) in phi.data().iter().zip(cap.intensity.data()).enumerate() {
            if let Some(m) = mask {
                if m.data()[j] < 0.5 {
                    continue;
                }
            }
            let sqrt_i = iv.max(0.0).sqrt();
            num += (sqrt_i - z.norm()).powi(2);
            den += iv.max(0.0);
        }
        if !update {
            continue;
        }
        let mut phi_hat = impose_amplitude(&phi, &cap.intensity, cfg.epsilon)?;
        if let Some(m) = mask {
            // Invalid (zero-filled) pixels keep the model field: the warp
            // recorded no measurement there.
            for (j, z) in phi_hat.data_mut().iter_mut().enumerate() {
                if m.data()[j] < 0.5 {
                    *z = phi.data()[j];
                }
            }
        }
        let psi_hat = fft2_centered(&phi_hat)?.into_grid();

        let max_p = state.p.max_norm_sqr();
        let max_w = win.max_norm_sqr();
        if max_p <= cfg.epsilon {
            state
                .warnings
                .push(format!("pupil magnitude vanished at capture {i} of iteration {}", state.k));
        }
        if max_w <= cfg.epsilon {
            state
                .warnings
                .push(format!("spectrum window vanished at capture {i} of iteration {}", state.k));
        }
        let inv_p = cfg.alpha / max_p.max(cfg.epsilon);
        let inv_w = cfg.beta / max_w.max(cfg.epsilon);

        let mut new_win = win.clone();
        for j in 0..w * w {
            let d = psi_hat.data()[j] - psi.data()[j];
            new_win.data_mut()[j] += state.p.data()[j].conj() * d * inv_p;
            if cfg.recover_pupil {
                let upd = win.data()[j].conj() * d * inv_w;
                let v = state.p.data()[j] + upd;
                state.p.data_mut()[j] = if state.support[j] { v } else { Complex64::new(0.0, 0.0) };
            }
        }
        embed_window(&mut state.o, &new_win, center, EmbedMode::Replace)?;
    }
    if den <= cfg.epsilon {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Evaluate the current data misfit sum_i sum (sqrt(I_i) - |phi_i|)^2 /
/// sum_i sum I_i without touching the state.
pub fn evaluate_misfit(
    state: &ReconState,
    set: &CaptureSet,
    centers: &[(usize, usize)],
    cfg: &ReconConfig,
) -> Result<f64> {
    let order: Vec<usize> = (0..set.captures.len()).collect();
    let mut snapshot = state.clone();
    pass(&mut snapshot, set, centers, &order, cfg, false)
}

/// One full pass over the dataset; returns the pre-update misfit of the
/// pass and increments the iteration counter.
pub fn epie_iteration(
    state: &mut ReconState,
    set: &CaptureSet,
    centers: &[(usize, usize)],
    cfg: &ReconConfig,
) -> Result<f64> {
    cfg.validate()?;
    let order = traversal_order(set, centers, cfg)?;
    let misfit = pass(state, set, centers, &order, cfg, true)?;
    state.k += 1;
    Ok(misfit)
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    /// Spatial-domain object estimate, inverse transform of the spectrum.
    pub object: ComplexGrid,
    pub spectrum: SpectrumGrid,
    pub pupil: ComplexGrid,
    /// history[0] is the misfit of the initial state; one entry per
    /// iteration follows.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Run the solver until max_iters or until the relative misfit change stays
/// below tol for 3 consecutive iterations.
pub fn reconstruct(
    set: &CaptureSet,
    centers: &[(usize, usize)],
    budget: &OpticalBudget,
    cfg: &ReconConfig,
) -> Result<ReconOutput> {
    cfg.validate()?;
    if set.captures.is_empty() {
        return Err(Error::MissingData("capture set is empty".into()));
    }
    if centers.len() != set.captures.len() {
        return Err(Error::Dimension(format!(
            "{} centers for {} captures",
            centers.len(),
            set.captures.len()
        )));
    }
    let mut state = initialize_state(set, budget, set.ref_index)?;
    let order = traversal_order(set, centers, cfg)?;
    let initial = pass(&mut state, set, centers, &order, cfg, false)?;
    state.history.push(initial);
    let mut stable = 0usize;
    for _ in 0..cfg.max_iters {
        let prev = *state.history.last().expect("seeded above");
        let misfit = pass(&mut state, set, centers, &order, cfg, true)?;
        state.k += 1;
        state.history.push(misfit);
        let rel = (misfit - prev).abs() / prev.max(1e-300);
        stable = if rel < cfg.tol { stable + 1 } else { 0 };
        if stable >= 3 {
            break;
        }
    }
    let object = ifft2_centered(&state.o)?;
    Ok(ReconOutput {
        object,
        spectrum: state.o,
        pupil: state.p,
        history: state.history,
        iterations: state.k,
        warnings: state.warnings,
    })
}
