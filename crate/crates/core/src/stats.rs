//! Central and noncentral chi-square distributions and Benjamini-Hochberg
//! false discovery rate control.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Stop adding Poisson mixture terms once the neglected mass is below this.
pub const POISSON_TAIL_TOL: f64 = 1e-14;

fn check_df(k: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {k}"
        )));
    }
    Ok(())
}

/// Lower-tail probability of the central chi-square with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if x.is_nan() {
        return Err(Error::Domain("NaN argument".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(k / 2.0, x / 2.0))
}

/// Upper-tail probability, computed directly for accuracy far in the tail.
pub fn chi2_sf(x: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if x.is_nan() {
        return Err(Error::Domain("NaN argument".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(k / 2.0, x / 2.0))
}

/// Inverse of [`chi2_cdf`] by safeguarded Newton iteration on a bracket.
pub fn chi2_quantile(p: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while chi2_cdf(hi, k)? < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, k)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chi2_pdf(x, k);
        let newton = x - f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-14 * x.max(1e-300) || hi - lo <= 1e-14 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

fn chi2_pdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half = k / 2.0;
    ((half - 1.0) * x.ln() - x / 2.0 - half * std::f64::consts::LN_2 - ln_gamma(half)).exp()
}

/// Upper tail of the noncentral chi-square `chi2_k(tau2)` as a Poisson
/// mixture of central tails, `sum_j Pois(j; tau2/2) Q(k/2 + j, x/2)`.
pub fn noncentral_chi2_sf(x: f64, k: f64, tau2: f64) -> Result<f64> {
    check_df(k)?;
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(Error::Domain(format!(
            "noncentrality must be nonnegative, got {tau2}"
        )));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if tau2 == 0.0 {
        return chi2_sf(x, k);
    }
    let lambda = tau2 / 2.0;
    let ln_lambda = lambda.ln();
    let mut mass = 0.0;
    let mut total = 0.0;
    let mut j = 0usize;
    loop {
        let jf = j as f64;
        let w = (-lambda + jf * ln_lambda - ln_gamma(jf + 1.0)).exp();
        mass += w;
        total += w * gamma_ur(k / 2.0 + jf, x / 2.0);
        if jf > lambda && 1.0 - mass < POISSON_TAIL_TOL {
            break;
        }
        j += 1;
        if j > 100_000 {
            break;
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Density of the noncentral chi-square written as the series
/// `exp{-(x + tau2)/2} / 2^{k/2} sum_j x^{k/2+j-1} tau2^j / {Gamma(k/2+j) 2^{2j} j!}`.
pub fn noncentral_chi2_density_series(x: f64, k: f64, tau2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln2 = std::f64::consts::LN_2;
    let ln_x = x.ln();
    let ln_tau2 = if tau2 > 0.0 {
        tau2.ln()
    } else {
        f64::NEG_INFINITY
    };
    let base = -(x + tau2) / 2.0 - (k / 2.0) * ln2;
    let mut sum = 0.0;
    let mut j = 0usize;
    let mut passed_peak = false;
    let mut prev = f64::NEG_INFINITY;
    loop {
        let jf = j as f64;
        let ln_term = if j == 0 {
            (k / 2.0 - 1.0) * ln_x - ln_gamma(k / 2.0)
        } else {
            (k / 2.0 + jf - 1.0) * ln_x + jf * ln_tau2
                - ln_gamma(k / 2.0 + jf)
                - 2.0 * jf * ln2
                - ln_gamma(jf + 1.0)
        };
        let term = (base + ln_term).exp();
        sum += term;
        if tau2 == 0.0 {
            break;
        }
        if ln_term < prev {
            passed_peak = true;
        }
        prev = ln_term;
        if passed_peak && term <= 1e-18 * sum {
            break;
        }
        j += 1;
        if j > 100_000 {
            break;
        }
    }
    sum
}

/// Largest gap between the empirical distribution of `sample` and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted: Vec<f64> = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Linear-interpolation sample quantile (the common "type 7" definition).
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// P-values keyed by voxel label.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueSet {
    values: Vec<f64>,
    labels: Vec<usize>,
}

impl PValueSet {
    pub fn new(values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: labels.len(),
            });
        }
        if let Some(p) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
        }
        Ok(PValueSet { values, labels })
    }

    /// Labels `0..n` in order.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let labels = (0..values.len()).collect();
        PValueSet::new(values, labels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Multiplicity procedure used to produce an [`FdrResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdrProcedure {
    BenjaminiHochberg,
}

impl FdrProcedure {
    pub fn name(self) -> &'static str {
        match self {
            FdrProcedure::BenjaminiHochberg => "bh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub procedure: FdrProcedure,
    pub level: f64,
    /// Aligned with the input order.
    pub reject: Vec<bool>,
    pub q_values: Vec<f64>,
    /// Largest p-value rejected, if any.
    pub threshold: Option<f64>,
}

impl FdrResult {
    pub fn num_rejected(&self) -> usize {
        self.reject.iter().filter(|&&r| r).count()
    }
}

/// Benjamini-Hochberg step-up at level `q`. Ties in p are ordered by label.
pub fn bh_fdr(pvals: &PValueSet, q: f64) -> Result<FdrResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "FDR level must lie in (0, 1), got {q}"
        )));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        pvals.values[a]
            .total_cmp(&pvals.values[b])
            .then(pvals.labels[a].cmp(&pvals.labels[b]))
    });
    let mf = m as f64;
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank, &idx)| pvals.values[idx] <= (rank + 1) as f64 * q / mf)
        .map(|(rank, _)| rank + 1)
        .max()
        .unwrap_or(0);

    let mut reject = vec![false; m];
    for &idx in &order[..cutoff] {
        reject[idx] = true;
    }
    let mut q_values = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(pvals.values[idx] * mf / (rank + 1) as f64);
        q_values[idx] = running.min(1.0);
    }
    Ok(FdrResult {
        procedure: FdrProcedure::BenjaminiHochberg,
        level: q,
        reject,
        q_values,
        threshold: (cutoff > 0).then(|| pvals.values[order[cutoff - 1]]),
    })
}
