//! Command implementations for the experiment pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use camfp_core::calib::project_world_origin;
use camfp_core::io::{read_capture_set, write_capture_set, write_complex_grid, write_spectrum_grid, GridKind};
use camfp_core::metrics::{amplitude_of, amplitude_rmse, percentile, phase_rmse, psnr, Rect};
use camfp_core::pipeline::{
    align_for_mode, calibrate_set, run_reconstruction, CalibrationReport, CorrectionMode, RunConfig,
};
use camfp_core::scene::{pose_from_error, simulate_dataset, CaptureSet};
use camfp_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::render::{panel, read_pgm, render_magnitude, render_phase, write_pgm};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let preset = cfg.sim_preset();
    let scene = cfg.scene(&preset)?;
    let pupil = cfg.pupil(&preset)?;
    let plan = cfg.scan_plan(&preset);
    let set = simulate_dataset(&scene, &pupil, &plan, &preset.geometry)?;
    ensure_dir(out)?;
    write_capture_set(&out.join("truth"), &set, true)?;
    write_capture_set(&out.join("blind"), &set, false)?;
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    println!(
        "simulated {} captures ({}x{}, seed {}) into {}",
        set.captures.len(),
        plan.rows,
        plan.cols,
        plan.rng_seed,
        out.display()
    );
    Ok(())
}

/// True pixel offsets relative to the reference capture, from the recorded
/// poses. None when any pose is missing (blind dataset).
fn truth_offsets(set: &CaptureSet) -> Option<Vec<((u32, u32), (f64, f64))>> {
    let refi = set.ref_index;
    let mut origins = Vec::with_capacity(set.captures.len());
    for cap in &set.captures {
        let tp = cap.true_pose.as_ref()?;
        let (r, c) = cap.nominal_index;
        let nominal = (
            (c as f64 - refi.1 as f64) * set.plan.nominal_step,
            (r as f64 - refi.0 as f64) * set.plan.nominal_step,
        );
        let e = (tp.actual_center.0 - nominal.0, tp.actual_center.1 - nominal.1);
        let pose = pose_from_error(&set.geometry, e, tp.twist).ok()?;
        let origin = project_world_origin(&set.geometry.intrinsics, &pose).ok()?;
        origins.push((cap.nominal_index, origin));
    }
    let r = origins.iter().find(|(i, _)| *i == refi)?.1;
    Some(origins.into_iter().map(|(i, o)| (i, (o.0 - r.0, o.1 - r.1))).collect())
}

fn calibration_text(set: &CaptureSet, report: &CalibrationReport) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "captures = {}", set.captures.len()).unwrap();
    writeln!(s, "fx = {}", report.intrinsics.fx).unwrap();
    writeln!(s, "fy = {}", report.intrinsics.fy).unwrap();
    writeln!(s, "u0 = {}", report.intrinsics.u0).unwrap();
    writeln!(s, "v0 = {}", report.intrinsics.v0).unwrap();
    writeln!(s, "used_estimated_intrinsics = {}", report.used_estimated_intrinsics).unwrap();
    match report.zhang_residual {
        Some(r) => writeln!(s, "zhang_residual = {r}").unwrap(),
        None => writeln!(s, "zhang_residual = n/a").unwrap(),
    }
    writeln!(s, "ratio2 = {}", report.ratio2).unwrap();
    let n = report.rms_px.len().max(1) as f64;
    writeln!(s, "reprojection_rms_px_mean = {}", report.rms_px.iter().sum::<f64>() / n).unwrap();
    writeln!(
        s,
        "reprojection_rms_px_max = {}",
        report.rms_px.iter().cloned().fold(0.0f64, f64::max)
    )
    .unwrap();

    match truth_offsets(set) {
        Some(truth) => {
            let lookup: BTreeMap<(u32, u32), (f64, f64)> = truth.into_iter().collect();
            let mut errors: Vec<f64> = Vec::with_capacity(report.offsets_px.len());
            for (idx, off) in &report.offsets_px {
                let t = lookup.get(idx).ok_or_else(|| {
                    Error::MissingData(format!("no truth offset for capture {idx:?}"))
                })?;
                errors.push(((off.0 - t.0).powi(2) + (off.1 - t.1).powi(2)).sqrt());
            }
            writeln!(s, "extraction_error_p50_px = {}", percentile(&errors, 50.0)?).unwrap();
            writeln!(s, "extraction_error_p90_px = {}", percentile(&errors, 90.0)?).unwrap();
            writeln!(s, "extraction_error_max_px = {}", percentile(&errors, 100.0)?).unwrap();
        }
        None => {
            writeln!(s, "extraction_error_p50_px = n/a").unwrap();
            writeln!(s, "extraction_error_p90_px = n/a").unwrap();
            writeln!(s, "extraction_error_max_px = n/a").unwrap();
        }
    }
    for (idx, o) in &report.origins {
        writeln!(s, "origin_{}_{} = {} {}", idx.0, idx.1, o.0, o.1).unwrap();
    }
    for (idx, o) in &report.offsets_px {
        writeln!(s, "offset_{}_{} = {} {}", idx.0, idx.1, o.0, o.1).unwrap();
    }
    Ok(s)
}

pub fn cmd_calibrate(data: &Path, out: &Path) -> Result<()> {
    let set = read_capture_set(data)?;
    let report = calibrate_set(&set)?;
    ensure_dir(out)?;
    write_text(&out.join("calibration.txt"), &calibration_text(&set, &report)?)?;
    println!(
        "calibrated {} captures; report written to {}",
        set.captures.len(),
        out.join("calibration.txt").display()
    );
    Ok(())
}

pub fn cmd_align(data: &Path, out: &Path, mode: CorrectionMode) -> Result<()> {
    let set = read_capture_set(data)?;
    let report = calibrate_set(&set)?;
    let aligned = align_for_mode(&set, &report, mode)?;
    let has_truth = aligned.captures.iter().all(|c| c.true_pose.is_some());
    ensure_dir(out)?;
    write_capture_set(out, &aligned, has_truth)?;
    println!("aligned {} captures ({}) into {}", aligned.captures.len(), mode.as_str(), out.display());
    Ok(())
}

pub fn cmd_reconstruct(
    data: &Path,
    out: &Path,
    cfg: &ExperimentConfig,
    have_scene_reference: bool,
) -> Result<()> {
    let set = read_capture_set(data)?;
    let report = calibrate_set(&set)?;
    let run_cfg = RunConfig {
        mode: cfg.mode,
        recon: cfg.recon.clone(),
        prune: cfg.prune,
        threshold_fraction: cfg.threshold_fraction,
        ..RunConfig::default()
    };
    let run = run_reconstruction(&set, &report, &run_cfg)?;
    ensure_dir(out)?;

    let rec = &run.recon;
    write_complex_grid(&out.join("object.f32"), &rec.object, GridKind::Spatial)?;
    write_spectrum_grid(&out.join("spectrum.f32"), &rec.spectrum)?;
    write_complex_grid(&out.join("pupil.f32"), &rec.pupil, GridKind::Spectrum)?;
    write_pgm(&out.join("object_amplitude.pgm"), &render_magnitude(&amplitude_of(&rec.object)))?;
    write_pgm(&out.join("object_phase.pgm"), &render_phase(&rec.object))?;
    write_pgm(&out.join("pupil_phase.pgm"), &render_phase(&rec.pupil))?;

    let mut csv = String::from("iteration,misfit\n");
    for (i, m) in rec.history.iter().enumerate() {
        writeln!(csv, "{i},{m}").unwrap();
    }
    write_text(&out.join("misfit.csv"), &csv)?;

    let mut metrics = String::new();
    writeln!(metrics, "mode = {}", cfg.mode.as_str()).unwrap();
    writeln!(metrics, "iterations = {}", rec.iterations).unwrap();
    writeln!(metrics, "misfit_initial = {}", rec.history.first().unwrap_or(&f64::NAN)).unwrap();
    writeln!(metrics, "misfit_final = {}", rec.history.last().unwrap_or(&f64::NAN)).unwrap();
    writeln!(
        metrics,
        "pruned_captures = {}",
        run.prune.as_ref().map(|p| p.removed.to_string()).unwrap_or_else(|| "0".into())
    )
    .unwrap();
    writeln!(metrics, "captures_used = {}", run.kept.len()).unwrap();

    // Object-quality metrics need the reference scene; it is reproducible
    // only when a config described it, never fabricated for blind data.
    if have_scene_reference {
        let preset = cfg.sim_preset();
        let scene = cfg.scene(&preset)?;
        let truth = scene.field();
        let region = Rect::full(truth.width(), truth.height());
        writeln!(metrics, "amplitude_rmse = {}", amplitude_rmse(&rec.object, truth, region)?).unwrap();
        writeln!(metrics, "phase_rmse = {}", phase_rmse(&rec.object, truth, region, 0.1)?).unwrap();
        writeln!(
            metrics,
            "psnr_db = {}",
            psnr(&amplitude_of(&rec.object), &amplitude_of(truth), region)?
        )
        .unwrap();
    } else {
        writeln!(metrics, "amplitude_rmse = n/a").unwrap();
        writeln!(metrics, "phase_rmse = n/a").unwrap();
        writeln!(metrics, "psnr_db = n/a").unwrap();
    }
    for w in &rec.warnings {
        writeln!(metrics, "warning = {w}").unwrap();
    }
    write_text(&out.join("metrics.txt"), &metrics)?;
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    println!(
        "reconstructed {} captures ({}) in {} iterations; outputs in {}",
        run.kept.len(),
        cfg.mode.as_str(),
        rec.iterations,
        out.display()
    );
    Ok(())
}

pub fn cmd_report(runs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::MissingData("report needs at least one run directory".into()));
    }
    let mut names = Vec::new();
    let mut tables: Vec<BTreeMap<String, String>> = Vec::new();
    let mut images = Vec::new();
    for dir in runs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let text = std::fs::read_to_string(dir.join("metrics.txt")).map_err(|e| {
            Error::Format(format!("cannot read {}: {e}", dir.join("metrics.txt").display()))
        })?;
        let mut table = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let k = k.trim();
                if k != "warning" {
                    table.insert(k.to_string(), v.trim().to_string());
                }
            }
        }
        images.push(read_pgm(&dir.join("object_amplitude.pgm"))?);
        names.push(name);
        tables.push(table);
    }

    let mut keys: Vec<String> = Vec::new();
    for t in &tables {
        for k in t.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let mut csv = String::from("metric");
    for n in &names {
        write!(csv, ",{n}").unwrap();
    }
    csv.push('\n');
    for k in &keys {
        write!(csv, "{k}").unwrap();
        for t in &tables {
            write!(csv, ",{}", t.get(k).map(String::as_str).unwrap_or("n/a")).unwrap();
        }
        csv.push('\n');
    }
    ensure_dir(out)?;
    write_text(&out.join("comparison.csv"), &csv)?;
    write_pgm(&out.join("panel.pgm"), &panel(&images)?)?;
    println!(
        "compared {} runs; wrote {} and {}",
        runs.len(),
        out.join("comparison.csv").display(),
        out.join("panel.pgm").display()
    );
    Ok(())
}
