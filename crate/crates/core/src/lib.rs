//! Simulation, calibration, and reconstruction toolkit for camera-scanning
//! Fourier ptychography with pose correction: homography-based dataset
//! alignment plus frequency-domain pupil-location correction.
//!
//! Module map:
//! - [`field`]: complex grids and the centered unitary 2D FFT.
//! - [`scene`]: ground-truth objects, the scanning forward model, pose-error
//!   injection, synthetic checkerboard correspondences.
//! - [`calib`]: homography estimation, intrinsics, extrinsics, per-capture
//!   pixel offsets.
//! - [`align`]: relative homographies and bilinear dataset alignment.
//! - [`freqmap`]: optical budget, pixel-to-frequency offset conversion,
//!   bright/darkfield pruning.
//! - [`recon`]: alternating-projection reconstruction with pupil recovery.
//! - [`metrics`]: comparison metrics (RMSE, PSNR, correlation).
//! - [`io`]: raw grid files and capture-set directories.
//! - [`pipeline`]: calibration + correction-mode orchestration.

pub mod align;
pub mod calib;
pub mod error;
pub mod field;
pub mod freqmap;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod recon;
pub mod scene;

pub use error::{Error, Result};
