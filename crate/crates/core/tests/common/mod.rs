//! Dense brute-force reference implementations used to cross-check the
//! banded and sparse production code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local linear smoother built row by row from an explicit weighted least
/// squares fit of `(1, t_j - t_i)` with kernel weights, block-diagonal across
/// runs. Returns `None` when some local fit is singular.
pub fn dense_smoother(runs: &[usize], b: f64) -> Option<DMatrix<f64>> {
    let n: usize = runs.iter().sum();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for &len in runs {
        let t: Vec<f64> = (1..=len).map(|i| i as f64 / len as f64).collect();
        for i in 0..len {
            let x = DMatrix::from_fn(len, 2, |j, c| if c == 0 { 1.0 } else { t[j] - t[i] });
            let w = DMatrix::from_diagonal(&DVector::from_iterator(
                len,
                t.iter().map(|tj| epanechnikov((tj - t[i]) / b) / b),
            ));
            let xtw = x.transpose() * &w;
            let xtwx = &xtw * &x;
            let inv = xtwx.try_inverse()?;
            let coef = inv * xtw;
            for j in 0..len {
                out[(offset + i, offset + j)] = coef[(0, j)];
            }
        }
        offset += len;
    }
    Some(out)
}

/// Banded Toeplitz correlation `gamma[|i-j|] / gamma[0]`, block-diagonal.
pub fn dense_correlation(gamma: &[f64], runs: &[usize]) -> DMatrix<f64> {
    let n: usize = runs.iter().sum();
    let mut r = DMatrix::zeros(n, n);
    let mut offset = 0;
    for &len in runs {
        for i in 0..len {
            for j in 0..len {
                let lag = i.abs_diff(j);
                if lag < gamma.len() {
                    r[(offset + i, offset + j)] = gamma[lag] / gamma[0];
                }
            }
        }
        offset += len;
    }
    r
}

pub struct DenseFit {
    pub h: DVector<f64>,
    pub h_bc: DVector<f64>,
    pub k: f64,
    pub k_bc: f64,
}

/// Textbook GLS on drift-projected data with explicit inverses.
pub fn dense_fit(
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    sd: &DMatrix<f64>,
    r: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> DenseFit {
    let n = y.len();
    let p = s.ncols();
    let i_sd = DMatrix::identity(n, n) - sd;
    let yt = &i_sd * y;
    let st = &i_sd * s;
    let rinv = r.clone().try_inverse().expect("invertible R");
    let g = st.transpose() * &rinv * &st;
    let ginv = g.try_inverse().expect("invertible gram");
    let h = &ginv * st.transpose() * &rinv * &yt;
    let resid = &yt - &st * &h;
    let d_hat = sd * (y - s * &h);
    let d_tilde = &i_sd * d_hat;
    let h_bc = &h - &ginv * st.transpose() * &rinv * &d_tilde;
    let resid_bc = &resid - &d_tilde;
    let middle = (a * &ginv * a.transpose())
        .try_inverse()
        .expect("invertible");
    let quad = |v: &DVector<f64>| {
        let av = a * v;
        (av.transpose() * &middle * av)[(0, 0)]
    };
    let sigma2 = (resid.transpose() * &rinv * &resid)[(0, 0)] / (n - p) as f64;
    let sigma2_bc = (resid_bc.transpose() * &rinv * &resid_bc)[(0, 0)] / (n - p) as f64;
    DenseFit {
        k: quad(&h) / sigma2,
        k_bc: quad(&h_bc) / sigma2_bc,
        h,
        h_bc,
    }
}

/// Step-up decisions by scanning every candidate cut-off.
pub fn brute_force_bh(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len();
    let mut best = 0;
    for i in 1..=m {
        let thr = i as f64 * q / m as f64;
        let count = p.iter().filter(|&&v| v <= thr).count();
        if count >= i {
            best = best.max(i);
        }
    }
    if best == 0 {
        return vec![false; m];
    }
    let thr = best as f64 * q / m as f64;
    p.iter().map(|&v| v <= thr).collect()
}

/// Small deterministic generator for oracle instances.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, k: usize) -> usize {
        ((self.next_f64() * k as f64) as usize).min(k - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
