//! GLS estimation of the HRF coefficients on drift-projected data, the
//! chi-square calibrated statistics `K` and `K_bc`, and the asymptotic power
//! quantities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::smoother::Smoother;
use crate::stats::{chi2_quantile, chi2_sf, noncentral_chi2_density_series};

/// Gram matrices with a larger condition number are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct HrfFit {
    pub h_hat: DVector<f64>,
    pub h_hat_bc: DVector<f64>,
    /// `r = y~ - S~ h`.
    pub residual: DVector<f64>,
    /// `r_bc = r - d~`.
    pub residual_bc: DVector<f64>,
    /// `d = S_d (y - S h)`.
    pub drift_hat: DVector<f64>,
    /// `d~ = (I - S_d) d`.
    pub drift_tilde: DVector<f64>,
    /// `r^T R^{-1} r / (n - rm)`.
    pub sigma2_hat: f64,
    /// `r_bc^T R^{-1} r_bc / (n - rm)`.
    pub sigma2_hat_bc: f64,
    /// `S~^T R^{-1} S~`.
    pub gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    pub n: usize,
}

impl HrfFit {
    pub fn num_coefficients(&self) -> usize {
        self.h_hat.len()
    }

    /// `(S~^T R^{-1} S~)^{-1} b`.
    pub fn gram_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(b)
    }

    pub fn gram_inverse(&self) -> DMatrix<f64> {
        self.gram_chol.inverse()
    }

    /// Empirical `M = n^{-1} S~^T R^{-1} S~`.
    pub fn empirical_m(&self) -> DMatrix<f64> {
        &self.gram / self.n as f64
    }
}

/// GLS fit of `y~ = S~ h + e~` with weight `R^{-1}`, plus the drift estimate
/// and bias-corrected quantities.
pub fn fit_gls(
    y: &[f64],
    design: &DesignMatrix,
    smoother: &Smoother,
    noise: &NoiseModel,
) -> Result<HrfFit> {
    let n = y.len();
    let p = design.ncols();
    for found in [design.nrows(), smoother.len(), noise.dim()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    if n <= p {
        return Err(Error::InsufficientData { n, p });
    }

    let y_tilde = DVector::from_vec(smoother.residual_project(y)?);
    let s_tilde = smoother.residual_project_matrix(design.entries())?;
    let weighted = noise.solve_matrix(&s_tilde)?;
    let mut gram = s_tilde.transpose() * &weighted;
    gram = (&gram + gram.transpose()) * 0.5;

    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (emin, emax) = (eig.min(), eig.max());
    if !(emin > 0.0) || emax / emin > MAX_GRAM_CONDITION {
        let condition = if emin > 0.0 {
            emax / emin
        } else {
            f64::INFINITY
        };
        return Err(Error::IllPosedDesign { condition });
    }
    let gram_chol = gram.clone().cholesky().ok_or(Error::IllPosedDesign {
        condition: emax / emin,
    })?;

    let h_hat = gram_chol.solve(&(weighted.tr_mul(&y_tilde)));
    let residual = &y_tilde - &s_tilde * &h_hat;

    let fitted = design.entries() * &h_hat;
    let partial: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let drift_hat = DVector::from_vec(smoother.apply(&partial)?);
    let drift_tilde = DVector::from_vec(smoother.residual_project(drift_hat.as_slice())?);

    let h_hat_bc = &h_hat - gram_chol.solve(&weighted.tr_mul(&drift_tilde));
    let residual_bc = &residual - &drift_tilde;

    let dof = (n - p) as f64;
    let sigma2_hat = noise.quad_form(residual.as_slice())? / dof;
    let sigma2_hat_bc = noise.quad_form(residual_bc.as_slice())? / dof;

    Ok(HrfFit {
        h_hat,
        h_hat_bc,
        residual,
        residual_bc,
        drift_hat,
        drift_tilde,
        sigma2_hat,
        sigma2_hat_bc,
        gram,
        gram_chol,
        n,
    })
}

/// Full-row-rank restriction matrix `A` of `H0: A h = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMatrix {
    a: DMatrix<f64>,
}

const RANK_REL_TOL: f64 = 1e-10;

impl HypothesisMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if k == 0 || k > a.ncols() {
            return Err(Error::InvalidHypothesis(format!(
                "{} x {} restriction cannot have full row rank",
                k,
                a.ncols()
            )));
        }
        let sv = a.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count();
        if rank < k {
            return Err(Error::InvalidHypothesis(format!(
                "restriction has rank {rank} < {k} rows"
            )));
        }
        Ok(HypothesisMatrix { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Number of restrictions `k`.
    pub fn k(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HypothesisKind {
    /// `h = 0`.
    AllZero,
    /// `h_{j1} = h_{j2}` for 1-based stimulus types.
    Contrast {
        j1: usize,
        j2: usize,
    },
    Custom(DMatrix<f64>),
}

pub fn make_hypothesis(kind: &HypothesisKind, r: usize, m: usize) -> Result<HypothesisMatrix> {
    let p = r * m;
    match kind {
        HypothesisKind::AllZero => HypothesisMatrix::new(DMatrix::identity(p, p)),
        &HypothesisKind::Contrast { j1, j2 } => {
            if j1 == j2 || j1 == 0 || j2 == 0 || j1 > r || j2 > r {
                return Err(Error::InvalidHypothesis(format!(
                    "contrast ({j1}, {j2}) needs two distinct types in 1..={r}"
                )));
            }
            let mut a = DMatrix::zeros(m, p);
            for l in 0..m {
                a[(l, (j1 - 1) * m + l)] = 1.0;
                a[(l, (j2 - 1) * m + l)] = -1.0;
            }
            HypothesisMatrix::new(a)
        }
        HypothesisKind::Custom(a) => {
            if a.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: a.ncols(),
                });
            }
            HypothesisMatrix::new(a.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    BiasCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub variant: Variant,
}

fn wald_form(fit: &HrfFit, a: &HypothesisMatrix, h: &DVector<f64>) -> Result<f64> {
    let amat = a.matrix();
    if amat.ncols() != fit.num_coefficients() {
        return Err(Error::DimensionMismatch {
            expected: fit.num_coefficients(),
            found: amat.ncols(),
        });
    }
    let ah = amat * h;
    let ginv_at = fit.gram_chol.solve(&amat.transpose());
    let c = amat * ginv_at;
    let c = (&c + c.transpose()) * 0.5;
    let chol = c.cholesky().ok_or(Error::IllPosedHypothesis)?;
    Ok(ah.dot(&chol.solve(&ah)))
}

fn finish(numerator: f64, denominator: f64, k: usize, variant: Variant) -> Result<TestResult> {
    let statistic = if numerator <= 0.0 {
        0.0
    } else if denominator > 0.0 {
        numerator / denominator
    } else {
        f64::INFINITY
    };
    Ok(TestResult {
        statistic,
        df: k,
        p_value: chi2_sf(statistic, k as f64)?,
        variant,
    })
}

/// `K = (A h)^T {A G^{-1} A^T}^{-1} (A h) / {r^T R^{-1} r / (n - rm)}`.
pub fn test_k(fit: &HrfFit, a: &HypothesisMatrix) -> Result<TestResult> {
    let num = wald_form(fit, a, &fit.h_hat)?;
    finish(num, fit.sigma2_hat, a.k(), Variant::Plain)
}

/// `K_bc`: as [`test_k`] with `h_bc` and `r_bc`.
pub fn test_k_bc(fit: &HrfFit, a: &HypothesisMatrix) -> Result<TestResult> {
    let num = wald_form(fit, a, &fit.h_hat_bc)?;
    finish(num, fit.sigma2_hat_bc, a.k(), Variant::BiasCorrected)
}

/// `tau^2 = c^T (A M^{-1} A^T)^{-1} c / sigma^2`.
pub fn noncentrality(
    c: &DVector<f64>,
    a: &HypothesisMatrix,
    m: &DMatrix<f64>,
    sigma2: f64,
) -> Result<f64> {
    let amat = a.matrix();
    if c.len() != a.k() {
        return Err(Error::DimensionMismatch {
            expected: a.k(),
            found: c.len(),
        });
    }
    if m.nrows() != amat.ncols() || m.ncols() != amat.ncols() {
        return Err(Error::DimensionMismatch {
            expected: amat.ncols(),
            found: m.nrows(),
        });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "sigma^2 must be positive, got {sigma2}"
        )));
    }
    let mchol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let inner = amat * mchol.solve(&amat.transpose());
    let inner = (&inner + inner.transpose()) * 0.5;
    let chol = inner.cholesky().ok_or(Error::IllPosedHypothesis)?;
    Ok(c.dot(&chol.solve(c)) / sigma2)
}

/// Probability limit of `K / n` under the fixed alternative `h`.
pub fn fixed_alternative_limit(
    h: &DVector<f64>,
    a: &HypothesisMatrix,
    m: &DMatrix<f64>,
    sigma2: f64,
) -> Result<f64> {
    if h.len() != a.matrix().ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.matrix().ncols(),
            found: h.len(),
        });
    }
    noncentrality(&(a.matrix() * h), a, m, sigma2)
}

/// Local power: the integral of the noncentral chi-square density series from
/// the central `1 - alpha` quantile to infinity, by adaptive Gauss-Kronrod
/// quadrature.
pub fn asymptotic_power(k: usize, tau2: f64, alpha: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(Error::Domain(format!(
            "tau^2 must be nonnegative, got {tau2}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let kf = k as f64;
    let crit = chi2_quantile(1.0 - alpha, kf)?;
    let sd = (2.0 * (kf + 2.0 * tau2)).sqrt();
    let upper = crit.max(kf + tau2) + 60.0 * sd + 100.0;
    let f = |x: f64| noncentral_chi2_density_series(x, kf, tau2);
    let panels = 64;
    let width = (upper - crit) / panels as f64;
    let total: f64 = (0..panels)
        .map(|i| {
            let a = crit + i as f64 * width;
            adaptive_gk15(&f, a, a + width, 1e-15, 40)
        })
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD_W: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for nodes 1, 3, 5, 7 of the Kronrod set
const GK_GAUSS_W: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_KRONROD_W[7] * fc;
    let mut gauss = GK_GAUSS_W[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kron += GK_KRONROD_W[i] * s;
        if i % 2 == 1 {
            gauss += GK_GAUSS_W[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adaptive_gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    // below this the error estimate is dominated by round-off
    let floor = 50.0 * f64::EPSILON * val.abs();
    if err <= tol.max(floor) || depth == 0 {
        return val;
    }
    let mid = 0.5 * (a + b);
    adaptive_gk15(f, a, mid, tol / 2.0, depth - 1) + adaptive_gk15(f, mid, b, tol / 2.0, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{assemble_design, DesignMatrix, StimulusGrid};
    use crate::smoother::{build_smoother, Kernel};
    use approx::assert_abs_diff_eq;

    fn lcg_train(n: usize, seed: u64) -> Vec<u8> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 33) & 1) as u8
            })
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let n = 120;
        let m = 5;
        let grid = StimulusGrid::single(lcg_train(n, 9), 1.0).unwrap();
        let design = assemble_design(&grid, m).unwrap();
        let h = [0.5, 1.0, -0.3, 0.2, 0.05];
        let y = design.apply(&h).unwrap();
        let sm = build_smoother(n, 0.2, Kernel::Epanechnikov).unwrap();
        let fit = fit_gls(&y, &design, &sm, &NoiseModel::identity(&[n])).unwrap();
        for (a, e) in fit.h_hat.iter().zip(h) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-8);
        }
        assert!(fit.residual.amax() < 1e-8);
    }

    #[test]
    fn zero_estimate_gives_zero_statistic() {
        let n = 60;
        let grid = StimulusGrid::single(lcg_train(n, 4), 1.0).unwrap();
        let design = assemble_design(&grid, 3).unwrap();
        let sm = build_smoother(n, 0.3, Kernel::Epanechnikov).unwrap();
        let fit = fit_gls(&vec![0.0; n], &design, &sm, &NoiseModel::identity(&[n])).unwrap();
        let a = make_hypothesis(&HypothesisKind::AllZero, 1, 3).unwrap();
        let k = test_k(&fit, &a).unwrap();
        assert_eq!(k.statistic, 0.0);
        assert_eq!(k.p_value, 1.0);
        assert_eq!(test_k_bc(&fit, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn insufficient_and_mismatched() {
        let grid = StimulusGrid::single(lcg_train(12, 1), 1.0).unwrap();
        let design = assemble_design(&grid, 3).unwrap();
        let sm = build_smoother(12, 0.5, Kernel::Epanechnikov).unwrap();
        let y = vec![1.0; 12];
        assert!(matches!(
            fit_gls(&y[..11], &design, &sm, &NoiseModel::identity(&[11])),
            Err(Error::DimensionMismatch { .. })
        ));
        let wide =
            DesignMatrix::from_parts(DMatrix::from_element(12, 12, 1.0), 12, 1, vec![12]).unwrap();
        assert!(matches!(
            fit_gls(&y, &wide, &sm, &NoiseModel::identity(&[12])),
            Err(Error::InsufficientData { n: 12, p: 12 })
        ));
    }

    #[test]
    fn hypothesis_shapes() {
        let all = make_hypothesis(&HypothesisKind::AllZero, 1, 18).unwrap();
        assert_eq!(all.matrix(), &DMatrix::<f64>::identity(18, 18));
        let c = make_hypothesis(&HypothesisKind::Contrast { j1: 1, j2: 2 }, 2, 2).unwrap();
        assert_eq!(
            c.matrix(),
            &DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0])
        );
        let dup = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(
            make_hypothesis(&HypothesisKind::Custom(dup), 1, 3),
            Err(Error::InvalidHypothesis(_))
        ));
        assert!(make_hypothesis(&HypothesisKind::Contrast { j1: 2, j2: 2 }, 2, 3).is_err());
        assert!(make_hypothesis(&HypothesisKind::Contrast { j1: 1, j2: 3 }, 2, 3).is_err());
    }

    #[test]
    fn noncentrality_identities() {
        let a = HypothesisMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let m = DMatrix::identity(3, 3);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_abs_diff_eq!(
            noncentrality(&c, &a, &m, 1.0).unwrap(),
            5.25,
            epsilon = 1e-14
        );
        assert_eq!(noncentrality(&DVector::zeros(3), &a, &m, 1.0).unwrap(), 0.0);
        let h = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let l1 = fixed_alternative_limit(&h, &a, &m, 2.0).unwrap();
        let l2 = fixed_alternative_limit(&(&h * 2.0), &a, &m, 2.0).unwrap();
        assert_abs_diff_eq!(l2, 4.0 * l1, epsilon = 1e-14);
    }

    #[test]
    fn power_limits() {
        for &k in &[1usize, 6, 18] {
            assert_abs_diff_eq!(
                asymptotic_power(k, 0.0, 0.05).unwrap(),
                0.05,
                epsilon = 1e-10
            );
        }
        assert!(asymptotic_power(1, 100.0, 0.05).unwrap() > 0.999);
        assert!(asymptotic_power(0, 1.0, 0.05).is_err());
        assert!(asymptotic_power(1, 1.0, 1.0).is_err());
    }
}
