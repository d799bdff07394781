//! Pinhole-model calibration: homography estimation from plane
//! correspondences, closed-form intrinsics from multiple views, extrinsics
//! decomposition, and the world-origin projection that yields per-capture
//! pixel offsets.
//!
//! The world frame is the checkerboard frame: corners live in the Z_w = 0
//! plane, coordinates in meters.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Zero-skew pinhole intrinsics. Only the products fx = f/dx and fy = f/dy
/// are observable from correspondences, so those are what is stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(Self { fx, fy, u0, v0 })
    }

    /// From physical focal length (m) and pixel sizes (m/pixel).
    pub fn from_physical(f: f64, dx: f64, dy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(f > 0.0 && dx > 0.0 && dy > 0.0) {
            return Err(Error::InvalidParameter("f, dx, dy must be positive".into()));
        }
        Self::new(f / dx, f / dy, u0, v0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.u0, 0.0, self.fy, self.v0, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.u0 / self.fx,
            0.0,
            1.0 / self.fy,
            -self.v0 / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Perspective projection of a camera-frame point; requires Z_c > 0.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if p.z <= 0.0 {
            return Err(Error::Projection(format!("point behind camera, Z_c = {}", p.z)));
        }
        Ok((self.u0 + self.fx * p.x / p.z, self.v0 + self.fy * p.y / p.z))
    }
}

/// Rigid world-to-camera transform: X_c = R X_w + T.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl ExtrinsicPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (||R'R - I|| = {ortho:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }
}

/// 3x3 plane-to-plane projective map, stored with unit Frobenius norm and a
/// non-negative bottom-right entry so "equal up to scale" is plain equality.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography33 {
    m: Matrix3<f64>,
}

impl Homography33 {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidParameter("homography entries must be finite and nonzero".into()));
        }
        let mut m = m / norm;
        if m[(2, 2)] < 0.0 {
            m = -m;
        }
        let det = m.determinant();
        if !det.is_finite() || det.abs() < 1e-15 {
            return Err(Error::Degenerate(format!(
                "homography is not invertible (det = {det:.3e} after normalization)"
            )));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() / (3.0f64).sqrt() }
    }

    /// Pure pixel translation.
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)).expect("translation is invertible")
    }

    /// Board-plane homography K [r1 r2 T] of a pose.
    pub fn from_pose(k: &CameraIntrinsics, pose: &ExtrinsicPose) -> Result<Self> {
        let r = pose.rotation();
        let t = pose.translation();
        let plane = Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), *t]);
        Self::new(k.matrix() * plane)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Homography33> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Homography33::new(inv)
    }

    /// Compose: self after other (matrix product).
    pub fn compose(&self, other: &Homography33) -> Result<Homography33> {
        Homography33::new(self.m * other.m)
    }

    /// Map a point, dehomogenizing.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-300 {
            return Err(Error::Projection(format!("point ({x}, {y}) maps to infinity")));
        }
        Ok((p.x / p.z, p.y / p.z))
    }

    /// Max absolute entry difference to another normalized homography.
    pub fn max_entry_deviation(&self, other: &Homography33) -> f64 {
        (self.m - other.m).abs().max()
    }
}

/// One plane-to-image point pair: board-plane point (meters, Z_w = 0)
/// and its pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Board-plane coordinates in meters.
    pub world: (f64, f64),
    /// Pixel coordinates.
    pub pixel: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct HomographyEstimate {
    pub homography: Homography33,
    /// RMS reprojection residual in pixels over the input pairs.
    pub rms_px: f64,
}

/// Hartley-style similarity normalization: centroid to origin, mean
/// distance sqrt(2).
fn normalizing_transform(points: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if mean_dist < 1e-300 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = (2.0f64).sqrt() / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0))
}

/// Normalized DLT homography estimation from >= 4 point pairs.
pub fn estimate_homography_dlt(corr: &[Correspondence]) -> Result<HomographyEstimate> {
    if corr.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "homography estimation needs >= 4 pairs, got {}",
            corr.len()
        )));
    }
    let src: Vec<Vector2<f64>> = corr.iter().map(|c| Vector2::new(c.world.0, c.world.1)).collect();
    let dst: Vec<Vector2<f64>> = corr.iter().map(|c| Vector2::new(c.pixel.0, c.pixel.1)).collect();
    let t_src = normalizing_transform(&src)?;
    let t_dst = normalizing_transform(&dst)?;

    let n = corr.len();
    // At least 9 rows so the thin SVD's V^T contains all 9 right singular
    // vectors, including the nullspace (zero rows do not change A^T A).
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let sp = t_src * Vector3::new(s.x, s.y, 1.0);
        let dp = t_dst * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (sp.x, sp.y);
        let (u, v) = (dp.x, dp.y);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sing = &svd.singular_values;
    let k = sing.len();
    // A one-dimensional nullspace is expected; a second vanishing singular
    // value means the configuration does not pin down H.
    if k >= 2 && sing[k - 2] < 1e-10 * sing[0].max(1e-300) {
        return Err(Error::Degenerate(
            "rank-deficient design matrix (collinear or coincident points)".into(),
        ));
    }
    let h_vec = v_t.row(k - 1);
    let h_norm = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization transform not invertible".into()))?;
    let h = Homography33::new(t_dst_inv * h_norm * t_src)?;

    let mut sq = 0.0;
    for c in corr {
        let (u, v) = h.apply(c.world.0, c.world.1)?;
        sq += (u - c.pixel.0).powi(2) + (v - c.pixel.1).powi(2);
    }
    let rms_px = (sq / corr.len() as f64).sqrt();
    Ok(HomographyEstimate { homography: h, rms_px })
}

#[derive(Debug, Clone)]
pub struct IntrinsicsEstimate {
    pub intrinsics: CameraIntrinsics,
    /// Smallest singular value of the absolute-conic system, relative to the
    /// largest: the residual of the linear solve.
    pub residual: f64,
}

fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Closed-form zero-skew intrinsics from >= 3 board homographies via the
/// image of the absolute conic.
pub fn estimate_intrinsics_zhang(homographies: &[Homography33]) -> Result<IntrinsicsEstimate> {
    if homographies.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "intrinsics estimation needs >= 3 views, got {}",
            homographies.len()
        )));
    }
    let n = homographies.len();
    let mut a = DMatrix::<f64>::zeros(2 * n + 1, 6);
    for (i, h) in homographies.iter().enumerate() {
        let m = h.matrix();
        let v12 = conic_row(m, 0, 1);
        let v11 = conic_row(m, 0, 0);
        let v22 = conic_row(m, 1, 1);
        for c in 0..6 {
            a[(2 * i, c)] = v12[c];
            a[(2 * i + 1, c)] = v11[c] - v22[c];
        }
    }
    // Zero-skew constraint: B12 = 0.
    a[(2 * n, 1)] = 1.0;

    let svd = a.svd(false, true);
    let sing = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let k = sing.len();
    if sing[k - 2] < 1e-9 * sing[0].max(1e-300) {
        return Err(Error::Degenerate(
            "absolute-conic system is rank deficient (insufficient rotation variation across views)".into(),
        ));
    }
    let b = v_t.row(k - 1);
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);
    let (b11, b12, b22, b13, b23, b33) = if b11 < 0.0 {
        (-b11, -b12, -b22, -b13, -b23, -b33)
    } else {
        (b11, b12, b22, b13, b23, b33)
    };

    let denom = b11 * b22 - b12 * b12;
    if denom <= 0.0 || b11 <= 0.0 {
        return Err(Error::Degenerate("absolute-conic solution is not positive definite".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if lambda <= 0.0 {
        return Err(Error::Degenerate("absolute-conic solution is not positive definite".into()));
    }
    let fx = (lambda / b11).sqrt();
    let fy = (lambda * b11 / denom).sqrt();
    let u0 = -b13 * fx * fx / lambda;

    Ok(IntrinsicsEstimate {
        intrinsics: CameraIntrinsics::new(fx, fy, u0, v0)?,
        residual: sing[k - 1] / sing[0].max(1e-300),
    })
}

/// Nearest proper rotation to an approximate one (orthogonal polar factor).
fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    Ok(u * fix * v_t)
}

/// Recover (R, T) from a board homography and known intrinsics. The sign is
/// chosen so the board sits in front of the camera (T_z > 0) and R is
/// re-orthonormalized through its polar factor.
pub fn decompose_extrinsics(h: &Homography33, k: &CameraIntrinsics) -> Result<ExtrinsicPose> {
    let k_inv = k.inverse_matrix();
    let m = h.matrix();
    let h1 = k_inv * m.column(0);
    let h2 = k_inv * m.column(1);
    let h3 = k_inv * m.column(2);
    let norm = h1.norm();
    if norm < 1e-14 {
        return Err(Error::Degenerate("||K^-1 h1|| is ~0, cannot fix scale".into()));
    }
    let lambda = 1.0 / norm;
    let mut r1 = lambda * h1;
    let mut r2 = lambda * h2;
    let mut t = lambda * h3;
    if t.z <= 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let r = nearest_rotation(&approx)?;
    ExtrinsicPose::new(r, t)
}

/// Pixel coordinates of the world origin: dehomogenized K (R * 0 + T) = K T.
pub fn project_world_origin(k: &CameraIntrinsics, pose: &ExtrinsicPose) -> Result<(f64, f64)> {
    k.project_camera_point(pose.translation())
}

/// Per-capture offsets relative to the capture at `center_index`; the center
/// capture itself maps to (0, 0).
pub fn pixel_offsets(
    origins: &[((u32, u32), (f64, f64))],
    center_index: (u32, u32),
) -> Result<Vec<((u32, u32), (f64, f64))>> {
    let center = origins
        .iter()
        .find(|(idx, _)| *idx == center_index)
        .map(|(_, uv)| *uv)
        .ok_or_else(|| {
            Error::MissingData(format!(
                "center capture ({}, {}) not present",
                center_index.0, center_index.1
            ))
        })?;
    Ok(origins
        .iter()
        .map(|(idx, (u, v))| (*idx, (u - center.0, v - center.1)))
        .collect())
}
