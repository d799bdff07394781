//! Dataset alignment: relative homographies between captures and inverse-
//! mapping bilinear image warps, so every capture is registered point-to-
//! point with the reference capture before reconstruction.

use crate::calib::Homography33;
use crate::error::{Error, Result};
use crate::field::RealGrid;
use crate::scene::CaptureSet;

/// Pixel-plane map from capture `i` to the reference capture. Both inputs
/// are board-plane homographies (board point -> pixel); because the board is
/// fixed, the board-to-board leg is the identity and the relative map is
/// `H_ref * H_i^-1`.
pub fn relative_homography(h_i: &Homography33, h_ref: &Homography33) -> Result<Homography33> {
    h_ref.compose(&h_i.inverse()?)
}

/// Inverse-mapping bilinear warp: `out(p) = img(H^-1 p)`, zero outside the
/// source. Output dimensions equal input dimensions.
pub fn warp_image(img: &RealGrid, h: &Homography33) -> Result<RealGrid> {
    Ok(warp_with_mask(img, h)?.0)
}

/// Same as [`warp_image`], also returning a validity mask that is 1 where
/// all four bilinear source neighbors were inside the image and 0 where the
/// output was zero-filled.
pub fn warp_with_mask(img: &RealGrid, h: &Homography33) -> Result<(RealGrid, RealGrid)> {
    let h_inv = h.inverse()?;
    let (w, ht) = (img.width(), img.height());
    let mut out = RealGrid::zeros(w, ht)?;
    let mut mask = RealGrid::zeros(w, ht)?;
    for y in 0..ht {
        for x in 0..w {
            let (sx, sy) = h_inv.apply(x as f64, y as f64)?;
            // Normalized-homography round-off perturbs exact integer source
            // coordinates by an ulp; snap so integer maps stay exact.
            let sx = if (sx - sx.round()).abs() < 1e-9 { sx.round() } else { sx };
            let sy = if (sy - sy.round()).abs() < 1e-9 { sy.round() } else { sy };
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (ix, iy) = (x0 as i64, y0 as i64);
            let (fx, fy) = (sx - x0, sy - y0);
            // When the source coordinate is an exact integer the second
            // neighbor has zero weight and need not be in bounds.
            let (jx, jy) = (if fx == 0.0 { ix } else { ix + 1 }, if fy == 0.0 { iy } else { iy + 1 });
            if ix < 0 || iy < 0 || jx > w as i64 - 1 || jy > ht as i64 - 1 {
                continue;
            }
            let (ix, iy) = (ix as usize, iy as usize);
            let (jx, jy) = (jx as usize, jy as usize);
            let v = img.get(ix, iy) * (1.0 - fx) * (1.0 - fy)
                + img.get(jx, iy) * fx * (1.0 - fy)
                + img.get(ix, jy) * (1.0 - fx) * fy
                + img.get(jx, jy) * fx * fy;
            out.set(x, y, v);
            mask.set(x, y, 1.0);
        }
    }
    Ok((out, mask))
}

/// Warp every capture onto the reference capture's pixel frame using the
/// per-capture board homographies. The reference capture is passed through
/// unchanged; each warped capture gains a validity mask and the returned set
/// is marked aligned.
pub fn align_dataset(
    set: &CaptureSet,
    board_homographies: &[Homography33],
    ref_index: (u32, u32),
) -> Result<CaptureSet> {
    if board_homographies.len() != set.captures.len() {
        return Err(Error::Dimension(format!(
            "{} homographies for {} captures",
            board_homographies.len(),
            set.captures.len()
        )));
    }
    let ref_pos = set
        .captures
        .iter()
        .position(|c| c.nominal_index == ref_index)
        .ok_or_else(|| {
            Error::MissingData(format!("reference capture ({}, {}) not present", ref_index.0, ref_index.1))
        })?;
    let h_ref = &board_homographies[ref_pos];

    let mut out = set.clone();
    out.aligned = true;
    out.ref_index = ref_index;
    for (cap, h_i) in out.captures.iter_mut().zip(board_homographies) {
        if cap.nominal_index == ref_index {
            let full = RealGrid::from_data(
                cap.intensity.width(),
                cap.intensity.height(),
                vec![1.0; cap.intensity.width() * cap.intensity.height()],
            )?;
            cap.mask = Some(full);
            continue;
        }
        let h_rel = relative_homography(h_i, h_ref)?;
        if h_rel.max_entry_deviation(&Homography33::identity()) < 1e-12 {
            let full = RealGrid::from_data(
                cap.intensity.width(),
                cap.intensity.height(),
                vec![1.0; cap.intensity.width() * cap.intensity.height()],
            )?;
            cap.mask = Some(full);
            continue;
        }
        let (warped, mask) = warp_with_mask(&cap.intensity, &h_rel)?;
        cap.intensity = warped;
        cap.mask = Some(mask);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    /// Smooth band-limited test image: a few low-frequency sinusoids.
    fn smooth_image(n: usize) -> RealGrid {
        let mut g = RealGrid::zeros(n, n).unwrap();
        let s = 2.0 * std::f64::consts::PI / n as f64;
        for y in 0..n {
            for x in 0..n {
                let v = 0.5
                    + 0.2 * (1.7 * s * x as f64).sin() * (2.3 * s * y as f64).cos()
                    + 0.15 * (3.1 * s * (x + y) as f64).cos()
                    + 0.1 * (2.0 * s * x as f64).cos();
                g.set(x, y, v);
            }
        }
        g
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = smooth_image(32);
        let out = warp_image(&img, &Homography33::identity()).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn integer_translation_warp_shifts_exactly() {
        let img = smooth_image(32);
        // out(p) = img(H^-1 p) with H = translation(3, 2): out(x, y) = img(x-3, y-2).
        let out = warp_image(&img, &Homography33::translation(3.0, 2.0)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expect = if x >= 3 && y >= 2 { img.get(x - 3, y - 2) } else { 0.0 };
                assert_relative_eq!(out.get(x, y), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn warp_round_trip_corridor_on_smooth_image() {
        // Corridor (max interior deviation < 0.02 of dynamic range) measured
        // on band-limited images before locking.
        let img = smooth_image(64);
        let h = Homography33::new(Matrix3::new(
            0.999, 0.012, 1.3, -0.010, 1.002, -0.8, 1e-5, -2e-5, 1.0,
        ))
        .unwrap();
        let fwd = warp_image(&img, &h).unwrap();
        let back = warp_image(&fwd, &h.inverse().unwrap()).unwrap();
        let range = img.data().iter().cloned().fold(f64::MIN, f64::max)
            - img.data().iter().cloned().fold(f64::MAX, f64::min);
        let mut max_dev: f64 = 0.0;
        for y in 8..56 {
            for x in 8..56 {
                max_dev = max_dev.max((back.get(x, y) - img.get(x, y)).abs());
            }
        }
        assert!(
            max_dev / range < 0.02,
            "round-trip interior deviation {} of range",
            max_dev / range
        );
    }

    #[test]
    fn mask_marks_zero_filled_border() {
        let img = smooth_image(16);
        let (out, mask) = warp_with_mask(&img, &Homography33::translation(4.0, 0.0)).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(mask.get(x, y), if x >= 4 { 1.0 } else { 0.0 });
                if x < 4 {
                    assert_eq!(out.get(x, y), 0.0);
                }
            }
        }
        // Masked total equals the corresponding source region exactly for an
        // integer translation: intensity change is confined to the border.
        let masked_total: f64 = (0..16)
            .flat_map(|y| (4..16).map(move |x| (x, y)))
            .map(|(x, y)| out.get(x, y))
            .sum();
        let source_total: f64 = (0..16)
            .flat_map(|y| (0..12).map(move |x| (x, y)))
            .map(|(x, y)| img.get(x, y))
            .sum();
        assert_relative_eq!(masked_total, source_total, max_relative = 1e-12);
    }

    #[test]
    fn relative_homography_of_equal_inputs_is_identity() {
        let h = Homography33::new(Matrix3::new(1.1, 0.01, 4.0, -0.02, 0.93, 2.0, 1e-4, 2e-4, 1.0)).unwrap();
        let rel = relative_homography(&h, &h).unwrap();
        assert!(rel.max_entry_deviation(&Homography33::identity()) < 1e-12);
    }

    #[test]
    fn relative_homography_of_translated_capture_is_inverse_translation() {
        // H_i = T_t * H_ref (capture i sees everything shifted by t) implies
        // H_rel = H_ref * H_i^-1 = T_{-t}.
        let h_ref =
            Homography33::new(Matrix3::new(1.05, 0.0, 10.0, 0.0, 0.98, -5.0, 0.0, 0.0, 1.0)).unwrap();
        let t = Homography33::translation(7.0, -3.0);
        let h_i = t.compose(&h_ref).unwrap();
        let rel = relative_homography(&h_i, &h_ref).unwrap();
        assert!(rel.max_entry_deviation(&Homography33::translation(-7.0, 3.0)) < 1e-12);
    }
}
