//! Experiment configuration: UTF-8 key=value files with `[section]` headers.
//! Every run writes its fully resolved configuration back into the output
//! directory so results are reproducible from the artifacts alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camfp_core::pipeline::CorrectionMode;
use camfp_core::recon::{ReconConfig, TraversalOrder};
use camfp_core::scene::{
    aberration_screen, calib_preset, recon_preset, ObjectScene, PupilSpec, ScanPlan, SimPreset,
};
use camfp_core::{io as coreio, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// Procedural resolution-bar chart.
    Bars { phase_amp: f64 },
    /// Constant amplitude, flat phase.
    Uniform { amplitude: f64 },
    /// Complex field loaded from a raw grid file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Recon,
    Calib,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: PresetKind,
    pub scene: SceneSource,
    /// Pupil aberration polynomial coefficients (empty = ideal pupil).
    pub aberration: Vec<f64>,
    pub rows: u32,
    pub cols: u32,
    pub step_error_px: f64,
    pub twist_px: f64,
    pub seed: u64,
    pub corner_noise_sigma: f64,
    pub quantize_bits: Option<u32>,
    pub recon: ReconConfig,
    pub mode: CorrectionMode,
    pub prune: bool,
    pub threshold_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: PresetKind::Recon,
            scene: SceneSource::Bars { phase_amp: 0.8 },
            aberration: Vec::new(),
            rows: 15,
            cols: 15,
            step_error_px: 4.5,
            twist_px: 2.0,
            seed: 42,
            corner_noise_sigma: 0.0,
            quantize_bits: None,
            recon: ReconConfig::default(),
            mode: CorrectionMode::Full,
            prune: true,
            threshold_fraction: 0.15,
        }
    }
}

fn order_name(o: TraversalOrder) -> &'static str {
    match o {
        TraversalOrder::Spiral => "spiral",
        TraversalOrder::Raster => "raster",
        TraversalOrder::Random => "random",
    }
}

fn parse_order(s: &str) -> Result<TraversalOrder> {
    match s {
        "spiral" => Ok(TraversalOrder::Spiral),
        "raster" => Ok(TraversalOrder::Raster),
        "random" => Ok(TraversalOrder::Random),
        other => Err(Error::Format(format!(
            "unknown traversal order '{other}' (expected spiral, raster, or random)"
        ))),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Format(format!("{key} must be true or false, got '{other}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("{key}: cannot parse '{s}'")))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        let mut section = String::new();
        // Collected first so scene keys can be validated together.
        let mut scene_keys: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected key = value, got '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let qualified = format!("{section}.{key}");
            match qualified.as_str() {
                "scene.preset" => {
                    cfg.preset = match value {
                        "recon" => PresetKind::Recon,
                        "calib" => PresetKind::Calib,
                        other => {
                            return Err(Error::Format(format!(
                                "scene.preset must be recon or calib, got '{other}'"
                            )))
                        }
                    }
                }
                "scene.target" | "scene.phase_amp" | "scene.amplitude" | "scene.field" => {
                    scene_keys.insert(key.to_string(), value.to_string());
                }
                "pupil.aberration" => {
                    cfg.aberration = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_num("pupil.aberration", s.trim()))
                        .collect::<Result<_>>()?;
                }
                "plan.rows" => cfg.rows = parse_num(&qualified, value)?,
                "plan.cols" => cfg.cols = parse_num(&qualified, value)?,
                "plan.step_error_px" => cfg.step_error_px = parse_num(&qualified, value)?,
                "plan.twist_px" => cfg.twist_px = parse_num(&qualified, value)?,
                "plan.seed" => cfg.seed = parse_num(&qualified, value)?,
                "sim.corner_noise_sigma" => cfg.corner_noise_sigma = parse_num(&qualified, value)?,
                "sim.quantize_bits" => {
                    cfg.quantize_bits =
                        if value.is_empty() { None } else { Some(parse_num(&qualified, value)?) }
                }
                "recon.alpha" => cfg.recon.alpha = parse_num(&qualified, value)?,
                "recon.beta" => cfg.recon.beta = parse_num(&qualified, value)?,
                "recon.max_iters" => cfg.recon.max_iters = parse_num(&qualified, value)?,
                "recon.tol" => cfg.recon.tol = parse_num(&qualified, value)?,
                "recon.order" => cfg.recon.order = parse_order(value)?,
                "recon.order_seed" => cfg.recon.order_seed = parse_num(&qualified, value)?,
                "recon.recover_pupil" => cfg.recon.recover_pupil = parse_bool(&qualified, value)?,
                "recon.use_masks" => cfg.recon.use_masks = parse_bool(&qualified, value)?,
                "run.mode" => {
                    cfg.mode = value
                        .parse()
                        .map_err(|e: Error| Error::Format(format!("run.mode: {e}")))?
                }
                "run.prune" => cfg.prune = parse_bool(&qualified, value)?,
                "run.threshold_fraction" => cfg.threshold_fraction = parse_num(&qualified, value)?,
                other => return Err(Error::Format(format!("unknown config key '{other}'"))),
            }
        }
        cfg.scene = Self::scene_from_keys(&scene_keys, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn scene_from_keys(keys: &BTreeMap<String, String>, config_path: &Path) -> Result<SceneSource> {
        let target = keys.get("target").map(String::as_str).unwrap_or("bars");
        match target {
            "bars" => {
                let phase_amp = match keys.get("phase_amp") {
                    Some(v) => parse_num("scene.phase_amp", v)?,
                    None => 0.8,
                };
                Ok(SceneSource::Bars { phase_amp })
            }
            "uniform" => {
                let amplitude = match keys.get("amplitude") {
                    Some(v) => parse_num("scene.amplitude", v)?,
                    None => 0.8,
                };
                Ok(SceneSource::Uniform { amplitude })
            }
            "file" => {
                let rel = keys.get("field").ok_or_else(|| {
                    Error::Format("scene.target = file requires scene.field = <path>".into())
                })?;
                // Relative paths resolve against the config file's directory.
                let base = config_path.parent().unwrap_or(Path::new("."));
                let path = base.join(rel);
                if !path.is_file() {
                    return Err(Error::Format(format!(
                        "scene.field does not exist: {}",
                        path.display()
                    )));
                }
                Ok(SceneSource::File { path })
            }
            other => Err(Error::Format(format!(
                "scene.target must be bars, uniform, or file, got '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.recon.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter("plan.rows and plan.cols must be >= 1".into()));
        }
        if !(self.step_error_px >= 0.0 && self.twist_px >= 0.0) {
            return Err(Error::InvalidParameter("error bounds must be >= 0".into()));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(Error::InvalidParameter(
                "run.threshold_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.aberration.len() > 6 {
            return Err(Error::InvalidParameter(
                "pupil.aberration takes at most 6 coefficients".into(),
            ));
        }
        Ok(())
    }

    pub fn sim_preset(&self) -> SimPreset {
        let mut p = match self.preset {
            PresetKind::Recon => recon_preset(),
            PresetKind::Calib => calib_preset(),
        };
        p.geometry.corner_noise_sigma = self.corner_noise_sigma;
        p.geometry.quantize_bits = self.quantize_bits;
        p
    }

    pub fn scan_plan(&self, preset: &SimPreset) -> ScanPlan {
        preset.plan(self.rows, self.cols, self.step_error_px, self.twist_px, self.seed)
    }

    pub fn pupil(&self, preset: &SimPreset) -> Result<PupilSpec> {
        if self.aberration.is_empty() {
            return Ok(preset.pupil.clone());
        }
        let budget = preset.budget()?;
        let screen =
            aberration_screen(preset.geometry.capture_size, budget.d_pixel, &self.aberration)?;
        Ok(preset.pupil.clone().with_aberration(screen))
    }

    pub fn scene(&self, preset: &SimPreset) -> Result<ObjectScene> {
        let n = preset.geometry.object_size;
        let pitch = preset.geometry.object_pitch;
        match &self.scene {
            SceneSource::Bars { phase_amp } => ObjectScene::bar_target(n, pitch, *phase_amp),
            SceneSource::Uniform { amplitude } => ObjectScene::uniform(n, pitch, *amplitude),
            SceneSource::File { path } => {
                let (grid, _) = coreio::read_complex_grid(path)?;
                if grid.width() != n || grid.height() != n {
                    return Err(Error::Dimension(format!(
                        "scene field is {}x{}, preset expects {n}x{n}",
                        grid.width(),
                        grid.height()
                    )));
                }
                ObjectScene::new(grid)
            }
        }
    }

    /// Fully resolved key=value form, parseable by [`ExperimentConfig::load`].
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[scene]").unwrap();
        writeln!(
            s,
            "preset = {}",
            match self.preset {
                PresetKind::Recon => "recon",
                PresetKind::Calib => "calib",
            }
        )
        .unwrap();
        match &self.scene {
            SceneSource::Bars { phase_amp } => {
                writeln!(s, "target = bars").unwrap();
                writeln!(s, "phase_amp = {phase_amp}").unwrap();
            }
            SceneSource::Uniform { amplitude } => {
                writeln!(s, "target = uniform").unwrap();
                writeln!(s, "amplitude = {amplitude}").unwrap();
            }
            SceneSource::File { path } => {
                writeln!(s, "target = file").unwrap();
                writeln!(s, "field = {}", path.display()).unwrap();
            }
        }
        writeln!(s, "\n[pupil]").unwrap();
        let coeffs: Vec<String> = self.aberration.iter().map(f64::to_string).collect();
        writeln!(s, "aberration = {}", coeffs.join(",")).unwrap();
        writeln!(s, "\n[plan]").unwrap();
        writeln!(s, "rows = {}", self.rows).unwrap();
        writeln!(s, "cols = {}", self.cols).unwrap();
        writeln!(s, "step_error_px = {}", self.step_error_px).unwrap();
        writeln!(s, "twist_px = {}", self.twist_px).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "\n[sim]").unwrap();
        writeln!(s, "corner_noise_sigma = {}", self.corner_noise_sigma).unwrap();
        writeln!(
            s,
            "quantize_bits = {}",
            self.quantize_bits.map(|b| b.to_string()).unwrap_or_default()
        )
        .unwrap();
        writeln!(s, "\n[recon]").unwrap();
        writeln!(s, "alpha = {}", self.recon.alpha).unwrap();
        writeln!(s, "beta = {}", self.recon.beta).unwrap();
        writeln!(s, "max_iters = {}", self.recon.max_iters).unwrap();
        writeln!(s, "tol = {}", self.recon.tol).unwrap();
        writeln!(s, "order = {}", order_name(self.recon.order)).unwrap();
        writeln!(s, "order_seed = {}", self.recon.order_seed).unwrap();
        writeln!(s, "recover_pupil = {}", self.recon.recover_pupil).unwrap();
        writeln!(s, "use_masks = {}", self.recon.use_masks).unwrap();
        writeln!(s, "\n[run]").unwrap();
        writeln!(s, "mode = {}", self.mode.as_str()).unwrap();
        writeln!(s, "prune = {}", self.prune).unwrap();
        writeln!(s, "threshold_fraction = {}", self.threshold_fraction).unwrap();
        s
    }
}
