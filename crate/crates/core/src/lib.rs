//! Semiparametric activation detection for fMRI time series.
//!
//! A voxel series is modelled as `y = S h + d + e`: a stimulus convolution
//! `S h` with an unknown finite impulse response `h`, a smooth drift `d`, and
//! stationary banded noise `e`. The drift is removed with a local linear
//! smoother, the noise correlation is estimated from second differences, and
//! `h` is estimated by generalised least squares. Activation is tested with
//! chi-square calibrated Wald statistics and controlled across voxels with
//! the Benjamini-Hochberg procedure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN. Index
// loops mirror the matrix notation in the numerical kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod design;
pub mod error;
pub mod inference;
pub mod io;
pub mod noise;
pub mod pipeline;
pub mod sim;
pub mod smoother;
pub mod stats;

pub use design::{assemble_design, build_toeplitz, DesignMatrix, StimulusGrid, StimulusRun};
pub use error::{Error, Result};
pub use inference::{
    asymptotic_power, fit_gls, fixed_alternative_limit, make_hypothesis, noncentrality, test_k,
    test_k_bc, HrfFit, HypothesisKind, HypothesisMatrix, TestResult,
};
pub use noise::{estimate_noise, NoiseModel};
pub use pipeline::{analyze_voxel, BandwidthMode, NoiseMode, PipelineConfig, VoxelAnalysis};
pub use smoother::{build_smoother, select_bandwidth_gcv, Kernel, Smoother};
pub use stats::{bh_fdr, chi2_cdf, chi2_quantile, chi2_sf, FdrResult, PValueSet};
