//! On-disk formats.
//!
//! Raw complex grid: little-endian 32-bit float (re, im) pairs, row-major,
//! no header, plus a `<name>.meta` sidecar in UTF-8 `key=value` lines
//! carrying `width`, `height`, `pitch`, and `kind` (`spatial` or
//! `spectrum`). Write -> read -> write reproduces the bytes exactly.
//!
//! Capture-set directory: a `manifest` file (`key=value`), one raw float32
//! intensity file `cap_RR_CC.f32` per capture, correspondences in
//! `cap_RR_CC.corr` (text lines `Xw_mm Yw_mm u_px v_px`), true poses in
//! `truth.txt` (text lines `row col cx_m cy_m h11..h33 [twist xyz]`, absent
//! in blind exports), validity bitmaps `cap_RR_CC.mask` for aligned sets,
//! and the optional aberration screen as a raw complex grid.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::calib::{CameraIntrinsics, Correspondence, Homography33};
use crate::error::{Error, Result};
use crate::field::{ComplexGrid, RealGrid, SpectrumGrid};
use crate::scene::{BoardSpec, Capture, CaptureSet, PupilSpec, ScanPlan, SimGeometry, TruePose};

/// Domain tag stored in a raw grid's sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Spatial,
    Spectrum,
}

impl GridKind {
    fn as_str(self) -> &'static str {
        match self {
            GridKind::Spatial => "spatial",
            GridKind::Spectrum => "spectrum",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(GridKind::Spatial),
            "spectrum" => Ok(GridKind::Spectrum),
            other => Err(Error::Format(format!("unknown grid kind {other:?}"))),
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta");
    path.with_file_name(name)
}

/// Write a complex grid as raw f32 pairs plus its sidecar.
pub fn write_complex_grid(path: &Path, grid: &ComplexGrid, kind: GridKind) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.data().len() * 8);
    for z in grid.data() {
        bytes.extend_from_slice(&(z.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let meta = format!(
        "width={}\nheight={}\npitch={}\nkind={}\n",
        grid.width(),
        grid.height(),
        grid.pitch(),
        kind.as_str()
    );
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

/// Write a spectrum grid; the sidecar pitch is the frequency-domain pitch.
pub fn write_spectrum_grid(path: &Path, grid: &SpectrumGrid) -> Result<()> {
    write_complex_grid(path, grid.grid(), GridKind::Spectrum)
}

/// Read a raw complex grid and its domain tag back from disk.
pub fn read_complex_grid(path: &Path) -> Result<(ComplexGrid, GridKind)> {
    let meta = parse_kv(&fs::read_to_string(sidecar_path(path))?)?;
    let width = get_usize(&meta, "width")?;
    let height = get_usize(&meta, "height")?;
    let pitch = get_f64(&meta, "pitch")?;
    let kind = GridKind::parse(get_str(&meta, "kind")?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != width * height * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {width}x{height} complex grid, found {}",
            path.display(),
            width * height * 8,
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(width * height);
    for ch in bytes.chunks_exact(8) {
        let re = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64;
        let im = f32::from_le_bytes([ch[4], ch[5], ch[6], ch[7]]) as f64;
        data.push(Complex64::new(re, im));
    }
    Ok((ComplexGrid::from_data(width, height, pitch, data)?, kind))
}

fn write_real_grid_f32(path: &Path, grid: &RealGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.data().len() * 4);
    for &v in grid.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_real_grid_f32(path: &Path, width: usize, height: usize) -> Result<RealGrid> {
    let bytes = fs::read(path)?;
    if bytes.len() != width * height * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {width}x{height} grid, found {}",
            path.display(),
            width * height * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64)
        .collect();
    RealGrid::from_data(width, height, data)
}

fn parse_kv(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get_str<'a>(map: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("missing key {key:?}")))
}

fn get_f64(map: &HashMap<String, String>, key: &str) -> Result<f64> {
    get_str(map, key)?
        .parse()
        .map_err(|_| Error::Format(format!("key {key:?} is not a number")))
}

fn get_u64(map: &HashMap<String, String>, key: &str) -> Result<u64> {
    get_str(map, key)?
        .parse()
        .map_err(|_| Error::Format(format!("key {key:?} is not an integer")))
}

fn get_usize(map: &HashMap<String, String>, key: &str) -> Result<usize> {
    get_str(map, key)?
        .parse()
        .map_err(|_| Error::Format(format!("key {key:?} is not an integer")))
}

fn cap_stem(idx: (u32, u32)) -> String {
    format!("cap_{:02}_{:02}", idx.0, idx.1)
}

/// Write a capture set to `dir` (created if needed). `include_truth`
/// controls whether true poses go to `truth.txt`; blind exports omit it.
pub fn write_capture_set(dir: &Path, set: &CaptureSet, include_truth: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = &set.geometry;
    let p = &set.plan;
    let pu = &set.pupil;
    let mut manifest = String::new();
    let mut kv = |k: &str, v: String| {
        manifest.push_str(k);
        manifest.push('=');
        manifest.push_str(&v);
        manifest.push('\n');
    };
    kv("width", g.capture_size.to_string());
    kv("height", g.capture_size.to_string());
    kv("rows", p.rows.to_string());
    kv("cols", p.cols.to_string());
    kv("nominal_step", p.nominal_step.to_string());
    kv("step_error_bound", p.step_error_bound.to_string());
    kv("twist_pixel_bound", p.twist_pixel_bound.to_string());
    kv("rng_seed", p.rng_seed.to_string());
    kv("wavelength", pu.wavelength.to_string());
    kv("focal_length", pu.focal_length.to_string());
    kv("aperture", pu.aperture.to_string());
    kv("sensor_pixel", pu.sensor_pixel.to_string());
    kv("aberration", if pu.aberration.is_some() { "1" } else { "0" }.to_string());
    kv("object_size", g.object_size.to_string());
    kv("object_pitch", g.object_pitch.to_string());
    kv("capture_size", g.capture_size.to_string());
    kv("fx", g.intrinsics.fx.to_string());
    kv("fy", g.intrinsics.fy.to_string());
    kv("u0", g.intrinsics.u0.to_string());
    kv("v0", g.intrinsics.v0.to_string());
    kv("board_distance", g.board_distance.to_string());
    kv("board_rows", g.board.corner_rows.to_string());
    kv("board_cols", g.board.corner_cols.to_string());
    kv("board_square", g.board.square.to_string());
    kv("corner_noise_sigma", g.corner_noise_sigma.to_string());
    if let Some(bits) = g.quantize_bits {
        kv("quantize_bits", bits.to_string());
    }
    kv("ref_row", set.ref_index.0.to_string());
    kv("ref_col", set.ref_index.1.to_string());
    kv("aligned", set.aligned.to_string());
    fs::write(dir.join("manifest"), manifest)?;

    if let Some(screen) = &pu.aberration {
        write_complex_grid(&dir.join("aberration.f32"), screen, GridKind::Spectrum)?;
    }

    let mut truth = String::new();
    for cap in &set.captures {
        let stem = cap_stem(cap.nominal_index);
        write_real_grid_f32(&dir.join(format!("{stem}.f32")), &cap.intensity)?;

        let mut corr = String::new();
        for c in &cap.correspondences {
            corr.push_str(&format!(
                "{} {} {} {}\n",
                c.world.0 * 1e3,
                c.world.1 * 1e3,
                c.pixel.0,
                c.pixel.1
            ));
        }
        fs::write(dir.join(format!("{stem}.corr")), corr)?;

        if let Some(mask) = &cap.mask {
            let bytes: Vec<u8> = mask.data().iter().map(|&v| if v != 0.0 { 1u8 } else { 0u8 }).collect();
            fs::write(dir.join(format!("{stem}.mask")), bytes)?;
        }

        if include_truth {
            if let Some(tp) = &cap.true_pose {
                let m = tp.induced_homography.matrix();
                truth.push_str(&format!(
                    "{} {} {} {}",
                    cap.nominal_index.0, cap.nominal_index.1, tp.actual_center.0, tp.actual_center.1
                ));
                for r in 0..3 {
                    for c in 0..3 {
                        truth.push_str(&format!(" {}", m[(r, c)]));
                    }
                }
                truth.push_str(&format!(" {} {} {}\n", tp.twist[0], tp.twist[1], tp.twist[2]));
            }
        }
    }
    if include_truth && !truth.is_empty() {
        fs::write(dir.join("truth.txt"), truth)?;
    }
    Ok(())
}

fn parse_truth(text: &str) -> Result<HashMap<(u32, u32), TruePose>> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("truth line {}: bad number {t:?}", lineno + 1))))
            .collect::<Result<_>>()?;
        if fields.len() != 13 && fields.len() != 16 {
            return Err(Error::Format(format!(
                "truth line {}: expected 13 or 16 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let idx = (fields[0] as u32, fields[1] as u32);
        let m = Matrix3::from_iterator(fields[4..13].iter().cloned()).transpose();
        let twist = if fields.len() == 16 {
            [fields[13], fields[14], fields[15]]
        } else {
            [0.0; 3]
        };
        map.insert(
            idx,
            TruePose {
                actual_center: (fields[2], fields[3]),
                twist,
                induced_homography: Homography33::new(m)?,
            },
        );
    }
    Ok(map)
}

fn parse_corr(text: &str) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("corr line {}: bad number {t:?}", lineno + 1))))
            .collect::<Result<_>>()?;
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "corr line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        out.push(Correspondence {
            world: (fields[0] * 1e-3, fields[1] * 1e-3),
            pixel: (fields[2], fields[3]),
        });
    }
    Ok(out)
}

/// Read a capture set directory written by [`write_capture_set`]. Captures
/// are returned in row-major nominal-index order; indices whose files are
/// absent (pruned captures) are skipped.
pub fn read_capture_set(dir: &Path) -> Result<CaptureSet> {
    let manifest = parse_kv(&fs::read_to_string(dir.join("manifest"))?)?;
    let width = get_usize(&manifest, "width")?;
    let height = get_usize(&manifest, "height")?;
    let plan = ScanPlan {
        rows: get_u64(&manifest, "rows")? as u32,
        cols: get_u64(&manifest, "cols")? as u32,
        nominal_step: get_f64(&manifest, "nominal_step")?,
        step_error_bound: get_f64(&manifest, "step_error_bound")?,
        twist_pixel_bound: get_f64(&manifest, "twist_pixel_bound")?,
        rng_seed: get_u64(&manifest, "rng_seed")?,
    };
    let mut pupil = PupilSpec::new(
        get_f64(&manifest, "wavelength")?,
        get_f64(&manifest, "focal_length")?,
        get_f64(&manifest, "aperture")?,
        get_f64(&manifest, "sensor_pixel")?,
    )?;
    if get_str(&manifest, "aberration")? == "1" {
        let (screen, _) = read_complex_grid(&dir.join("aberration.f32"))?;
        pupil = pupil.with_aberration(screen);
    }
    let geometry = SimGeometry {
        object_size: get_usize(&manifest, "object_size")?,
        object_pitch: get_f64(&manifest, "object_pitch")?,
        capture_size: get_usize(&manifest, "capture_size")?,
        intrinsics: CameraIntrinsics::new(
            get_f64(&manifest, "fx")?,
            get_f64(&manifest, "fy")?,
            get_f64(&manifest, "u0")?,
            get_f64(&manifest, "v0")?,
        )?,
        board_distance: get_f64(&manifest, "board_distance")?,
        board: BoardSpec {
            corner_rows: get_usize(&manifest, "board_rows")?,
            corner_cols: get_usize(&manifest, "board_cols")?,
            square: get_f64(&manifest, "board_square")?,
        },
        corner_noise_sigma: get_f64(&manifest, "corner_noise_sigma")?,
        quantize_bits: match manifest.get("quantize_bits") {
            Some(_) => Some(get_u64(&manifest, "quantize_bits")? as u32),
            None => None,
        },
    };
    let ref_index = (get_u64(&manifest, "ref_row")? as u32, get_u64(&manifest, "ref_col")? as u32);
    let aligned = match get_str(&manifest, "aligned")? {
        "true" => true,
        "false" => false,
        other => return Err(Error::Format(format!("aligned must be true or false, got {other:?}"))),
    };

    let truth = match fs::read_to_string(dir.join("truth.txt")) {
        Ok(text) => parse_truth(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
        Err(e) => return Err(e.into()),
    };

    let mut captures = Vec::new();
    for r in 0..plan.rows {
        for c in 0..plan.cols {
            let stem = cap_stem((r, c));
            let img_path = dir.join(format!("{stem}.f32"));
            if !img_path.exists() {
                continue;
            }
            let intensity = read_real_grid_f32(&img_path, width, height)?;
            let correspondences = parse_corr(&fs::read_to_string(dir.join(format!("{stem}.corr")))?)?;
            let mask_path = dir.join(format!("{stem}.mask"));
            let mask = if mask_path.exists() {
                let bytes = fs::read(&mask_path)?;
                if bytes.len() != width * height {
                    return Err(Error::Format(format!(
                        "{}: expected {} mask bytes, found {}",
                        mask_path.display(),
                        width * height,
                        bytes.len()
                    )));
                }
                Some(RealGrid::from_data(
                    width,
                    height,
                    bytes.iter().map(|&b| if b != 0 { 1.0 } else { 0.0 }).collect(),
                )?)
            } else {
                None
            };
            captures.push(Capture {
                intensity,
                nominal_index: (r, c),
                true_pose: truth.get(&(r, c)).cloned(),
                correspondences,
                mask,
            });
        }
    }
    if captures.is_empty() {
        return Err(Error::MissingData(format!("no capture files found in {}", dir.display())));
    }
    Ok(CaptureSet { captures, pupil, plan, geometry, ref_index, aligned })
}
