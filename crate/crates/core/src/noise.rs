//! Banded error-correlation model and its estimation by second differencing.
//!
//! The residual series is second-differenced within each run, which removes
//! any locally linear drift. The autocovariances of the differenced series
//! are a fixed linear image of the autocovariances of the noise, so the noise
//! autocovariances up to lag `g` follow from one small linear solve.

use nalgebra::{DMatrix, DVector};

use crate::banded::BandedCholesky;
use crate::error::{Error, Result};

/// Second-difference filter applied to the residual.
const DIFF_COEFS: [f64; 3] = [1.0, -2.0, 1.0];

/// Shrinkage factors tried on the off-diagonal band, mildest first.
const SHRINK_STEPS: [f64; 12] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01, 0.0];

/// Stationary `g`-dependent noise: correlation `R(i, j) = rho(|i - j|)` for
/// `|i - j| <= g`, zero beyond, block diagonal across runs.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    gamma: Vec<f64>,
    rho: Vec<f64>,
    runs: Vec<usize>,
    factors: Vec<BandedCholesky>,
    shrinkage: Option<f64>,
}

impl NoiseModel {
    /// White noise, `R = I`.
    pub fn identity(runs: &[usize]) -> Self {
        NoiseModel::from_autocov(&[1.0], runs).expect("identity is positive definite")
    }

    /// Build `R` from autocovariances `gamma[0..=g]`, shrinking the
    /// off-diagonal band when the raw band matrix is not positive definite.
    pub fn from_autocov(gamma: &[f64], runs: &[usize]) -> Result<Self> {
        check_feasible(gamma)?;
        let raw: Vec<f64> = gamma.iter().map(|g| g / gamma[0]).collect();
        for (step, &lambda) in std::iter::once(&1.0).chain(SHRINK_STEPS.iter()).enumerate() {
            let rho: Vec<f64> = raw
                .iter()
                .enumerate()
                .map(|(j, &r)| if j == 0 { 1.0 } else { lambda * r })
                .collect();
            if let Ok(factors) = factor_runs(&rho, runs) {
                return Ok(NoiseModel {
                    gamma: gamma.to_vec(),
                    rho,
                    runs: runs.to_vec(),
                    factors,
                    shrinkage: (step > 0).then_some(lambda),
                });
            }
        }
        unreachable!("identity correlation always factors")
    }

    /// Band parameter `g`.
    pub fn g(&self) -> usize {
        self.rho.len() - 1
    }

    /// Autocovariances as supplied, before any shrinkage.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma2(&self) -> f64 {
        self.gamma[0]
    }

    /// Correlations actually used in `R` (after shrinkage).
    pub fn correlations(&self) -> &[f64] {
        &self.rho
    }

    pub fn shrinkage(&self) -> Option<f64> {
        self.shrinkage
    }

    pub fn runs(&self) -> &[usize] {
        &self.runs
    }

    pub fn dim(&self) -> usize {
        self.runs.iter().sum()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut offset = 0;
        for &len in &self.runs {
            if i < offset + len {
                if j < offset || j >= offset + len {
                    return 0.0;
                }
                let lag = i.abs_diff(j);
                return self.rho.get(lag).copied().unwrap_or(0.0);
            }
            offset += len;
        }
        panic!("index {i} outside noise model of size {offset}");
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }

    /// `R^{-1} b` through the banded factors.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: b.len(),
            });
        }
        let mut x = b.to_vec();
        let mut offset = 0;
        for (factor, &len) in self.factors.iter().zip(&self.runs) {
            factor.solve_in_place(&mut x[offset..offset + len])?;
            offset += len;
        }
        Ok(x)
    }

    /// `R^{-1} B`, column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            let solved = self.solve(col.as_slice())?;
            col.copy_from_slice(&solved);
        }
        Ok(out)
    }

    /// `v^T R^{-1} v`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        let w = self.solve(v)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum())
    }
}

fn check_feasible(gamma: &[f64]) -> Result<()> {
    if gamma.is_empty() {
        return Err(Error::InfeasibleCovariance("no autocovariances".into()));
    }
    if !(gamma[0] > 0.0) || !gamma[0].is_finite() {
        return Err(Error::InfeasibleCovariance(format!(
            "lag-0 autocovariance {} is not positive",
            gamma[0]
        )));
    }
    if let Some((j, g)) = gamma
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, g)| !g.is_finite() || g.abs() > gamma[0])
    {
        return Err(Error::InfeasibleCovariance(format!(
            "|gamma({j})| = {} exceeds gamma(0) = {}",
            g.abs(),
            gamma[0]
        )));
    }
    Ok(())
}

fn factor_runs(rho: &[f64], runs: &[usize]) -> Result<Vec<BandedCholesky>> {
    let g = rho.len() - 1;
    let mut factors: Vec<BandedCholesky> = Vec::with_capacity(runs.len());
    for &len in runs {
        if let Some(existing) = factors.iter().find(|f| f.dim() == len) {
            factors.push(existing.clone());
            continue;
        }
        let bw = g.min(len.saturating_sub(1));
        factors.push(BandedCholesky::factor(len, bw, |i, j| rho[i - j])?);
    }
    Ok(factors)
}

/// Single-run correlation model of dimension `n`.
pub fn build_correlation(gamma: &[f64], n: usize) -> Result<NoiseModel> {
    NoiseModel::from_autocov(gamma, &[n])
}

/// `x_i - 2 x_{i-1} + x_{i-2}` within each run; one output segment per run.
pub fn second_difference(series: &[f64], runs: &[usize]) -> Result<Vec<Vec<f64>>> {
    let total: usize = runs.iter().sum();
    if total != series.len() {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: series.len(),
        });
    }
    let mut out = Vec::with_capacity(runs.len());
    let mut offset = 0;
    for &len in runs {
        if len < 3 {
            return Err(Error::InsufficientLength(format!(
                "run of length {len} cannot be second-differenced"
            )));
        }
        let x = &series[offset..offset + len];
        out.push(x.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect());
        offset += len;
    }
    Ok(out)
}

/// Mean-removed autocovariances up to lag `g`, divided by the full length.
pub fn estimate_autocov_diff(e: &[f64], g: usize) -> Result<Vec<f64>> {
    estimate_autocov_pooled(&[e.to_vec()], g)
}

/// Pooled version over run segments: one common mean, lagged products taken
/// only within a segment, normalised by the total length.
pub fn estimate_autocov_pooled(segments: &[Vec<f64>], g: usize) -> Result<Vec<f64>> {
    let total: usize = segments.iter().map(Vec::len).sum();
    if total <= g + 1 || segments.iter().any(|s| s.len() <= g) {
        return Err(Error::InsufficientLength(format!(
            "{total} differenced values are too few for lag {g}"
        )));
    }
    let mean = segments.iter().flatten().sum::<f64>() / total as f64;
    let mut gamma = vec![0.0; g + 1];
    for seg in segments {
        let c: Vec<f64> = seg.iter().map(|v| v - mean).collect();
        for (lag, out) in gamma.iter_mut().enumerate() {
            *out += c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for v in &mut gamma {
        *v /= total as f64;
    }
    Ok(gamma)
}

/// Matrix `M` with `gamma_e = M gamma` for a `g`-dependent noise, where
/// `gamma_e` are the autocovariances of the second-differenced series.
pub fn differencing_map(g: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(g + 1, g + 1);
    for j in 0..=g {
        for (a, ca) in DIFF_COEFS.iter().enumerate() {
            for (b, cb) in DIFF_COEFS.iter().enumerate() {
                let lag = (j as i64 + a as i64 - b as i64).unsigned_abs() as usize;
                if lag <= g {
                    m[(j, lag)] += ca * cb;
                }
            }
        }
    }
    m
}

/// Autocovariances of the second-differenced noise given those of a
/// `g`-dependent noise.
pub fn differenced_autocov(gamma: &[f64]) -> Vec<f64> {
    let g = gamma.len() - 1;
    (differencing_map(g) * DVector::from_column_slice(gamma))
        .as_slice()
        .to_vec()
}

/// Invert the differencing map: noise autocovariances `gamma[0..=g]` from the
/// differenced ones. For `g = 2`:
///
/// ```text
/// gamma_e(0) =  6 gamma(0) - 8 gamma(1) + 2 gamma(2)
/// gamma_e(1) = -4 gamma(0) + 7 gamma(1) - 4 gamma(2)
/// gamma_e(2) =    gamma(0) - 4 gamma(1) + 6 gamma(2)
/// ```
pub fn solve_gamma_system(gamma_e: &[f64]) -> Result<Vec<f64>> {
    if gamma_e.is_empty() {
        return Err(Error::InsufficientLength(
            "no differenced autocovariances".into(),
        ));
    }
    let g = gamma_e.len() - 1;
    let gamma = differencing_map(g)
        .lu()
        .solve(&DVector::from_column_slice(gamma_e))
        .ok_or_else(|| Error::InfeasibleCovariance("singular differencing system".into()))?;
    let gamma = gamma.as_slice().to_vec();
    check_feasible(&gamma)?;
    Ok(gamma)
}

#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    pub model: NoiseModel,
    /// Solved autocovariances, `None` when infeasible.
    pub gamma: Option<Vec<f64>>,
    /// True when the estimate was infeasible and white noise was used.
    pub fallback: bool,
}

/// Second-difference a working residual, estimate `gamma[0..=g]` and build
/// `R`. Infeasible estimates fall back to white noise.
pub fn estimate_noise(residual: &[f64], runs: &[usize], g: usize) -> Result<NoiseEstimate> {
    let diffs = second_difference(residual, runs)?;
    let gamma_e = estimate_autocov_pooled(&diffs, g)?;
    let solved = solve_gamma_system(&gamma_e).and_then(|gamma| {
        let model = NoiseModel::from_autocov(&gamma, runs)?;
        Ok((gamma, model))
    });
    match solved {
        Ok((gamma, model)) => Ok(NoiseEstimate {
            model,
            gamma: Some(gamma),
            fallback: false,
        }),
        Err(Error::InfeasibleCovariance(msg)) => {
            log::warn!("noise estimate infeasible ({msg}); using white noise");
            Ok(NoiseEstimate {
                model: NoiseModel::identity(runs),
                gamma: None,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
