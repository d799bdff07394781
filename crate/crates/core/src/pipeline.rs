//! End-to-end orchestration: calibrate a capture set, align it to the
//! reference capture, place every pupil window in the spectrum (with or
//! without the calibrated correction), optionally prune junction captures,
//! and reconstruct.

use std::str::FromStr;

use crate::align::{align_dataset, warp_with_mask};
use crate::calib::{
    decompose_extrinsics, estimate_homography_dlt, estimate_intrinsics_zhang, pixel_offsets,
    project_world_origin, CameraIntrinsics, Homography33,
};
use crate::error::{Error, Result};
use crate::field::RealGrid;
use crate::freqmap::{
    adjacent_corner_spans, classify_and_prune, frequency_offsets, ratio2_from_calibration,
    ClassifyBands, FreqOffset, OpticalBudget, PruneReport,
};
use crate::recon::{reconstruct, ReconConfig, ReconOutput};
use crate::scene::CaptureSet;

/// How much of the recovered pose information feeds the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    /// Integer-translation alignment from the calibrated pixel offsets;
    /// nominal spectrum centers.
    LocationOnly,
    /// Full homography alignment; nominal spectrum centers.
    HomographyOnly,
    /// Full homography alignment plus calibrated spectrum-center offsets.
    Full,
}

impl FromStr for CorrectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location_only" => Ok(CorrectionMode::LocationOnly),
            "homography_only" => Ok(CorrectionMode::HomographyOnly),
            "full" => Ok(CorrectionMode::Full),
            other => Err(Error::InvalidParameter(format!(
                "unknown correction mode {other:?}; expected location_only, homography_only, or full"
            ))),
        }
    }
}

impl CorrectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::LocationOnly => "location_only",
            CorrectionMode::HomographyOnly => "homography_only",
            CorrectionMode::Full => "full",
        }
    }
}

/// Everything the downstream stages need from calibration. Vectors are
/// parallel to `set.captures`.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub homographies: Vec<Homography33>,
    /// RMS reprojection residual (pixels) of each homography fit.
    pub rms_px: Vec<f64>,
    /// Intrinsics used for pose decomposition.
    pub intrinsics: CameraIntrinsics,
    /// Residual of the closed-form intrinsics solve, when it was usable.
    pub zhang_residual: Option<f64>,
    /// False when the solve failed or was degenerate and the dataset's
    /// recorded intrinsics were used instead.
    pub used_estimated_intrinsics: bool,
    /// Projected world-origin pixel positions per capture.
    pub origins: Vec<((u32, u32), (f64, f64))>,
    /// Origin offsets relative to the reference capture.
    pub offsets_px: Vec<((u32, u32), (f64, f64))>,
    /// Sample-plane meters per image pixel, from the reference capture's
    /// checkerboard spans.
    pub ratio2: f64,
}

fn origins_for(
    set: &CaptureSet,
    homographies: &[Homography33],
    k: &CameraIntrinsics,
) -> Result<Vec<((u32, u32), (f64, f64))>> {
    set.captures
        .iter()
        .zip(homographies)
        .map(|(cap, h)| {
            let pose = decompose_extrinsics(h, k)?;
            Ok((cap.nominal_index, project_world_origin(k, &pose)?))
        })
        .collect()
}

/// Estimate per-capture board homographies, intrinsics (closed-form solve
/// with fallback to the dataset's recorded intrinsics when the views are
/// degenerate for it), world-origin pixel offsets, and the image-to-sample
/// scale.
pub fn calibrate_set(set: &CaptureSet) -> Result<CalibrationReport> {
    if set.captures.is_empty() {
        return Err(Error::MissingData("capture set is empty".into()));
    }
    let mut homographies = Vec::with_capacity(set.captures.len());
    let mut rms_px = Vec::with_capacity(set.captures.len());
    for cap in &set.captures {
        if cap.correspondences.len() < 4 {
            return Err(Error::MissingData(format!(
                "capture ({}, {}) has {} correspondences; homography estimation needs >= 4",
                cap.nominal_index.0,
                cap.nominal_index.1,
                cap.correspondences.len()
            )));
        }
        let est = estimate_homography_dlt(&cap.correspondences)?;
        homographies.push(est.homography);
        rms_px.push(est.rms_px);
    }

    // The translation column of each homography fixes the projected origin
    // independently of the intrinsics, so a failed or ill-conditioned
    // intrinsics solve (e.g. twist-only pose variation) must not sink the
    // offset extraction: fall back to the recorded intrinsics.
    let mut zhang_residual = None;
    let mut used_estimated = false;
    let mut intrinsics = set.geometry.intrinsics;
    let mut origins = None;
    if let Ok(est) = estimate_intrinsics_zhang(&homographies) {
        if let Ok(o) = origins_for(set, &homographies, &est.intrinsics) {
            zhang_residual = Some(est.residual);
            used_estimated = true;
            intrinsics = est.intrinsics;
            origins = Some(o);
        }
    }
    let origins = match origins {
        Some(o) => o,
        None => origins_for(set, &homographies, &intrinsics)?,
    };
    let offsets_px = pixel_offsets(&origins, set.ref_index)?;

    let reference = set
        .capture_at(set.ref_index)
        .ok_or_else(|| Error::MissingData("reference capture not present".into()))?;
    let spans = adjacent_corner_spans(&reference.correspondences, &set.geometry.board)?;
    let ratio2 = ratio2_from_calibration(set.geometry.board.square, 0.5 * (spans.0 + spans.1))?;

    Ok(CalibrationReport {
        homographies,
        rms_px,
        intrinsics,
        zhang_residual,
        used_estimated_intrinsics: used_estimated,
        origins,
        offsets_px,
        ratio2,
    })
}

fn checked_center(cx: i64, cy: i64, m: usize, w: usize, idx: (u32, u32)) -> Result<(usize, usize)> {
    let half = (w / 2) as i64;
    if cx < half || cy < half || cx + half > m as i64 || cy + half > m as i64 {
        return Err(Error::OutOfRange(format!(
            "capture ({}, {}): pupil window at ({cx}, {cy}) leaves the {m}-pixel spectrum",
            idx.0, idx.1
        )));
    }
    Ok((cx as usize, cy as usize))
}

/// Spectrum-pixel pupil centers assuming the scan went exactly as planned.
pub fn nominal_centers(set: &CaptureSet, budget: &OpticalBudget) -> Result<Vec<(usize, usize)>> {
    let m = budget.m_px;
    let w = set.geometry.capture_size;
    let dc = (m / 2) as i64;
    let refi = set.ref_index;
    set.captures
        .iter()
        .map(|cap| {
            let (r, c) = cap.nominal_index;
            let nx = (c as f64 - refi.1 as f64) * set.plan.nominal_step;
            let ny = (r as f64 - refi.0 as f64) * set.plan.nominal_step;
            checked_center(
                dc + (nx * budget.ratio1).round() as i64,
                dc + (ny * budget.ratio1).round() as i64,
                m,
                w,
                cap.nominal_index,
            )
        })
        .collect()
}

/// Calibrated frequency-domain pupil-center offsets, parallel to the
/// captures.
pub fn calibrated_freq_offsets(report: &CalibrationReport, budget: &OpticalBudget) -> Vec<FreqOffset> {
    let px: Vec<(f64, f64)> = report.offsets_px.iter().map(|&(_, uv)| uv).collect();
    frequency_offsets(&px, budget, report.ratio2)
}

/// Pupil centers for a correction mode: nominal, plus the calibrated
/// frequency offsets when the mode corrects pupil locations.
pub fn spectrum_centers(
    set: &CaptureSet,
    budget: &OpticalBudget,
    report: &CalibrationReport,
    mode: CorrectionMode,
) -> Result<Vec<(usize, usize)>> {
    let nominal = nominal_centers(set, budget)?;
    if mode != CorrectionMode::Full {
        return Ok(nominal);
    }
    let freq = calibrated_freq_offsets(report, budget);
    nominal
        .iter()
        .zip(freq)
        .zip(&set.captures)
        .map(|((&(nx, ny), f), cap)| {
            checked_center(
                nx as i64 + f.rounded.0,
                ny as i64 + f.rounded.1,
                budget.m_px,
                set.geometry.capture_size,
                cap.nominal_index,
            )
        })
        .collect()
}

fn full_mask(w: usize, h: usize) -> Result<RealGrid> {
    RealGrid::from_data(w, h, vec![1.0; w * h])
}

/// Align a capture set according to the correction mode: rounded integer
/// translations for `LocationOnly`, full homography warps otherwise.
pub fn align_for_mode(
    set: &CaptureSet,
    report: &CalibrationReport,
    mode: CorrectionMode,
) -> Result<CaptureSet> {
    if report.homographies.len() != set.captures.len() {
        return Err(Error::Dimension("calibration report does not match the capture set".into()));
    }
    match mode {
        CorrectionMode::HomographyOnly | CorrectionMode::Full => {
            align_dataset(set, &report.homographies, set.ref_index)
        }
        CorrectionMode::LocationOnly => {
            let mut out = set.clone();
            out.aligned = true;
            for (cap, &(_, (du, dv))) in out.captures.iter_mut().zip(&report.offsets_px) {
                let (tx, ty) = (du.round(), dv.round());
                if cap.nominal_index == set.ref_index || (tx == 0.0 && ty == 0.0) {
                    cap.mask = Some(full_mask(cap.intensity.width(), cap.intensity.height())?);
                    continue;
                }
                // The capture drifted by +(du, dv); shifting by the negated
                // rounded offset brings it back onto the reference frame.
                let (warped, mask) =
                    warp_with_mask(&cap.intensity, &Homography33::translation(-tx, -ty))?;
                cap.intensity = warped;
                cap.mask = Some(mask);
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: CorrectionMode,
    pub recon: ReconConfig,
    /// Remove junction captures before reconstructing.
    pub prune: bool,
    /// Intensity threshold as a fraction of the reference capture's mean.
    pub threshold_fraction: f64,
    pub bands: ClassifyBands,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: CorrectionMode::Full,
            recon: ReconConfig::default(),
            prune: true,
            threshold_fraction: 0.15,
            bands: ClassifyBands::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub recon: ReconOutput,
    /// Spectrum centers of the captures that were reconstructed, parallel
    /// to `kept`.
    pub centers: Vec<(usize, usize)>,
    /// Nominal indices of the captures that survived pruning.
    pub kept: Vec<(u32, u32)>,
    pub prune: Option<PruneReport>,
}

/// Align, place, optionally prune, and reconstruct one capture set under
/// one correction mode.
pub fn run_reconstruction(
    set: &CaptureSet,
    report: &CalibrationReport,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    let budget = set.pupil.budget(set.geometry.object_size)?;
    let aligned = align_for_mode(set, report, cfg.mode)?;
    let centers = spectrum_centers(&aligned, &budget, report, cfg.mode)?;

    let (working, centers, prune) = if cfg.prune {
        let (pruned, prune_report) = classify_and_prune(&aligned, cfg.threshold_fraction, cfg.bands)?;
        let by_index: std::collections::HashMap<(u32, u32), (usize, usize)> = aligned
            .captures
            .iter()
            .map(|c| c.nominal_index)
            .zip(centers.iter().copied())
            .collect();
        let kept_centers = pruned
            .captures
            .iter()
            .map(|c| by_index[&c.nominal_index])
            .collect();
        (pruned, kept_centers, Some(prune_report))
    } else {
        (aligned, centers, None)
    };

    let kept = working.captures.iter().map(|c| c.nominal_index).collect();
    let recon = reconstruct(&working, &centers, &budget, &cfg.recon)?;
    Ok(RunOutput { recon, centers, kept, prune })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::relative_homography;
    use crate::recon::TraversalOrder;
    use crate::scene::{calib_preset, pose_from_error, recon_preset, simulate_dataset, ObjectScene};

    fn simulate(preset: &crate::scene::SimPreset, rows: u32, cols: u32, err_px: f64, twist_px: f64, seed: u64) -> CaptureSet {
        let scene = ObjectScene::bar_target(256, preset.geometry.object_pitch, 0.7).unwrap();
        let plan = preset.plan(rows, cols, err_px, twist_px, seed);
        simulate_dataset(&scene, &preset.pupil, &plan, &preset.geometry).unwrap()
    }

    /// True origin offsets via the direct pose-projection path, independent
    /// of the homography-fitting path under test.
    fn truth_offsets(set: &CaptureSet) -> Vec<(f64, f64)> {
        let geom = &set.geometry;
        let k = &geom.intrinsics;
        let origins: Vec<(f64, f64)> = set
            .captures
            .iter()
            .map(|cap| {
                let tp = cap.true_pose.as_ref().unwrap();
                let refi = set.ref_index;
                let (r, c) = cap.nominal_index;
                let nominal = (
                    (c as f64 - refi.1 as f64) * set.plan.nominal_step,
                    (r as f64 - refi.0 as f64) * set.plan.nominal_step,
                );
                let e = (tp.actual_center.0 - nominal.0, tp.actual_center.1 - nominal.1);
                let pose = pose_from_error(geom, e, tp.twist).unwrap();
                project_world_origin(k, &pose).unwrap()
            })
            .collect();
        let ref_pos = set.captures.iter().position(|c| c.nominal_index == set.ref_index).unwrap();
        let r = origins[ref_pos];
        origins.iter().map(|o| (o.0 - r.0, o.1 - r.1)).collect()
    }

    #[test]
    fn noise_free_offsets_match_truth_to_micro_pixels() {
        let set = simulate(&calib_preset(), 3, 3, 15.0, 2.0, 21);
        let report = calibrate_set(&set).unwrap();
        let truth = truth_offsets(&set);
        for ((_, got), want) in report.offsets_px.iter().zip(truth) {
            assert!(
                (got.0 - want.0).abs() < 1e-6 && (got.1 - want.1).abs() < 1e-6,
                "offset ({}, {}) vs truth ({}, {})",
                got.0,
                got.1,
                want.0,
                want.1
            );
        }
    }

    #[test]
    fn relative_homography_matches_truth_induced_warp() {
        let set = simulate(&calib_preset(), 2, 2, 15.0, 2.0, 8);
        let report = calibrate_set(&set).unwrap();
        let ref_pos = set.captures.iter().position(|c| c.nominal_index == set.ref_index).unwrap();
        for (cap, h_i) in set.captures.iter().zip(&report.homographies) {
            let h_rel = relative_homography(h_i, &report.homographies[ref_pos]).unwrap();
            let g_inv = cap.true_pose.as_ref().unwrap().induced_homography.inverse().unwrap();
            assert!(
                h_rel.max_entry_deviation(&g_inv) < 1e-6,
                "H_rel deviates from the truth warp inverse by {}",
                h_rel.max_entry_deviation(&g_inv)
            );
        }
    }

    #[test]
    fn zero_twist_alignment_has_no_residual_twist() {
        let set = simulate(&calib_preset(), 3, 3, 15.0, 0.0, 4);
        let report = calibrate_set(&set).unwrap();
        let ref_pos = set.captures.iter().position(|c| c.nominal_index == set.ref_index).unwrap();
        for (cap, h_i) in set.captures.iter().zip(&report.homographies) {
            let h_rel = relative_homography(h_i, &report.homographies[ref_pos]).unwrap();
            // Undo-warp composed with the truth warp must be the identity:
            // any leftover measures residual (twist) misalignment.
            let residual = h_rel
                .compose(&cap.true_pose.as_ref().unwrap().induced_homography)
                .unwrap()
                .max_entry_deviation(&Homography33::identity());
            assert!(residual < 1e-6, "residual misalignment {residual}");
        }
    }

    #[test]
    fn corrected_centers_track_true_centers_up_to_reference_gauge() {
        let preset = recon_preset();
        let set = simulate(&preset, 3, 3, 4.5, 0.0, 17);
        let budget = preset.budget().unwrap();
        let report = calibrate_set(&set).unwrap();

        // Exact (unrounded) frequency offsets must reproduce the true pose
        // errors scaled into spectrum pixels, relative to the reference.
        let freq = calibrated_freq_offsets(&report, &budget);
        let refi = set.ref_index;
        let ref_pos = set.captures.iter().position(|c| c.nominal_index == refi).unwrap();
        let err_m: Vec<(f64, f64)> = set
            .captures
            .iter()
            .map(|cap| {
                let tp = cap.true_pose.as_ref().unwrap();
                let (r, c) = cap.nominal_index;
                (
                    tp.actual_center.0 - (c as f64 - refi.1 as f64) * set.plan.nominal_step,
                    tp.actual_center.1 - (r as f64 - refi.0 as f64) * set.plan.nominal_step,
                )
            })
            .collect();
        let e_ref = err_m[ref_pos];
        for (f, e) in freq.iter().zip(&err_m) {
            let want = ((e.0 - e_ref.0) * budget.ratio1, (e.1 - e_ref.1) * budget.ratio1);
            assert!(
                (f.exact.0 - want.0).abs() < 1e-6 && (f.exact.1 - want.1).abs() < 1e-6,
                "frequency offset {:?} vs truth {:?}",
                f.exact,
                want
            );
        }

        // After rounding, corrected centers match the true window centers up
        // to the constant reference-error gauge within 1 spectrum pixel.
        let centers = spectrum_centers(&set, &budget, &report, CorrectionMode::Full).unwrap();
        let true_centers: Vec<(i64, i64)> = set
            .captures
            .iter()
            .map(|cap| {
                let tp = cap.true_pose.as_ref().unwrap();
                let dc = (budget.m_px / 2) as i64;
                (
                    dc + (tp.actual_center.0 * budget.ratio1).round() as i64,
                    dc + (tp.actual_center.1 * budget.ratio1).round() as i64,
                )
            })
            .collect();
        let gauge = (
            centers[ref_pos].0 as i64 - true_centers[ref_pos].0,
            centers[ref_pos].1 as i64 - true_centers[ref_pos].1,
        );
        for (got, want) in centers.iter().zip(&true_centers) {
            assert!(
                (got.0 as i64 - want.0 - gauge.0).abs() <= 1
                    && (got.1 as i64 - want.1 - gauge.1).abs() <= 1,
                "corrected center {:?} vs true {:?} (gauge {:?})",
                got,
                want,
                gauge
            );
        }
    }

    #[test]
    fn zero_error_run_is_identical_across_modes() {
        let preset = recon_preset();
        let set = simulate(&preset, 3, 3, 0.0, 0.0, 1);
        let report = calibrate_set(&set).unwrap();
        let cfg = |mode| RunConfig {
            mode,
            recon: ReconConfig { max_iters: 3, order: TraversalOrder::Raster, ..ReconConfig::default() },
            prune: false,
            ..RunConfig::default()
        };
        let a = run_reconstruction(&set, &report, &cfg(CorrectionMode::LocationOnly)).unwrap();
        let b = run_reconstruction(&set, &report, &cfg(CorrectionMode::HomographyOnly)).unwrap();
        let c = run_reconstruction(&set, &report, &cfg(CorrectionMode::Full)).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(b.centers, c.centers);
        for (x, y) in a.recon.object.data().iter().zip(b.recon.object.data()) {
            assert!((x - y).norm() < 1e-9);
        }
        for (x, y) in b.recon.object.data().iter().zip(c.recon.object.data()) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn pruning_keeps_centers_parallel_to_survivors() {
        let preset = recon_preset();
        let mut set = simulate(&preset, 3, 3, 0.0, 0.0, 6);
        // Force one non-reference capture into the junction band: half its
        // pixels far above the threshold, half at zero.
        let victim = set
            .captures
            .iter()
            .position(|c| c.nominal_index != set.ref_index)
            .unwrap();
        let mean = set.capture_at(set.ref_index).unwrap().intensity.mean();
        let n = set.captures[victim].intensity.data().len();
        for (j, v) in set.captures[victim].intensity.data_mut().iter_mut().enumerate() {
            *v = if j < n / 2 { 10.0 * mean } else { 0.0 };
        }
        let idx = set.captures[victim].nominal_index;
        let report = calibrate_set(&set).unwrap();
        let cfg = RunConfig {
            recon: ReconConfig { max_iters: 2, ..ReconConfig::default() },
            ..RunConfig::default()
        };
        let out = run_reconstruction(&set, &report, &cfg).unwrap();
        assert_eq!(out.prune.as_ref().unwrap().removed, 1);
        assert_eq!(out.kept.len(), set.captures.len() - 1);
        assert!(!out.kept.contains(&idx));
        assert_eq!(out.centers.len(), out.kept.len());
    }

    #[test]
    fn missing_correspondences_give_a_clear_error() {
        let mut set = simulate(&calib_preset(), 2, 2, 15.0, 1.0, 5);
        set.captures[1].correspondences.clear();
        match calibrate_set(&set) {
            Err(Error::MissingData(msg)) => assert!(msg.contains("correspondences")),
            other => panic!("expected a missing-data error, got {other:?}"),
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [CorrectionMode::LocationOnly, CorrectionMode::HomographyOnly, CorrectionMode::Full] {
            assert_eq!(mode.as_str().parse::<CorrectionMode>().unwrap(), mode);
        }
        assert!("nope".parse::<CorrectionMode>().is_err());
    }
}
