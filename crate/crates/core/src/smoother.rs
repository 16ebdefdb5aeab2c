//! Local linear smoothing matrix for the nonparametric drift.
//!
//! Row `i` of `S_d` holds the weights of the local linear fit at
//! `t_i = i / n`:
//!
//! ```text
//! S_d(i, j) = (1, 0) {X(t_i)^T W(t_i) X(t_i)}^{-1} (1, t_j - t_i)^T K((t_j - t_i) / b) / b
//! ```
//!
//! With compact kernels each row is a short band, stored as a start column
//! plus the nonzero weights. Runs are smoothed independently, each on its own
//! rescaled grid, so the full operator is block diagonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => epanechnikov(u),
        }
    }

    /// Half-width `L` of the support `[-L, L]`.
    pub fn support_halfwidth(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 1.0,
        }
    }
}

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BandRow {
    start: usize,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoother {
    rows: Vec<BandRow>,
    runs: Vec<usize>,
    bandwidth: f64,
    kernel: Kernel,
}

const DET_REL_TOL: f64 = 1e-12;

/// Single-run smoother on `t_i = i / n`.
pub fn build_smoother(n: usize, bandwidth: f64, kernel: Kernel) -> Result<Smoother> {
    Smoother::for_runs(&[n], bandwidth, kernel)
}

impl Smoother {
    /// Block-diagonal smoother, one block per run.
    pub fn for_runs(runs: &[usize], bandwidth: f64, kernel: Kernel) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth < 1.0) {
            return Err(Error::Domain(format!(
                "bandwidth must lie in (0, 1), got {bandwidth}"
            )));
        }
        if let Some(&short) = runs.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidDimension(format!(
                "smoother needs at least 3 points per run, got {short}"
            )));
        }
        let total: usize = runs.iter().sum();
        let mut rows = Vec::with_capacity(total);
        let mut offset = 0;
        for &n in runs {
            for i in 0..n {
                let mut row = local_linear_row(n, i, bandwidth, kernel).map_err(|_| {
                    Error::SingularWindow {
                        row: offset + i,
                        bandwidth,
                    }
                })?;
                row.start += offset;
                rows.push(row);
            }
            offset += n;
        }
        Ok(Smoother {
            rows,
            runs: runs.to_vec(),
            bandwidth,
            kernel,
        })
    }

    /// `S_d = 0`: no drift removal. Bandwidth is reported as zero.
    pub fn zero(runs: &[usize]) -> Self {
        let total: usize = runs.iter().sum();
        Smoother {
            rows: (0..total)
                .map(|i| BandRow {
                    start: i,
                    weights: Vec::new(),
                })
                .collect(),
            runs: runs.to_vec(),
            bandwidth: 0.0,
            kernel: Kernel::Epanechnikov,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn support_halfwidth(&self) -> f64 {
        self.kernel.support_halfwidth()
    }

    pub fn runs(&self) -> &[usize] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        if j < row.start || j >= row.start + row.weights.len() {
            0.0
        } else {
            row.weights[j - row.start]
        }
    }

    /// Column range holding the nonzero weights of row `i`.
    pub fn row_support(&self, i: usize) -> std::ops::Range<usize> {
        let row = &self.rows[i];
        row.start..row.start + row.weights.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.len()).map(|i| self.entry(i, i)).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.weights.iter())
            .fold(0.0f64, |acc, &w| acc.max(w.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, &w) in row.weights.iter().enumerate() {
                out[(i, row.start + k)] = w;
            }
        }
        out
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: len,
            });
        }
        Ok(())
    }

    /// `S_d v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                row.weights
                    .iter()
                    .zip(&v[row.start..])
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect())
    }

    /// `(I - S_d) v`.
    pub fn residual_project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let smooth = self.apply(v)?;
        Ok(v.iter().zip(smooth).map(|(a, b)| a - b).collect())
    }

    /// `(I - S_d) B`, column by column.
    pub fn residual_project_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut out = b.clone();
        for (c, col) in b.column_iter().enumerate() {
            let projected = self.residual_project(col.as_slice())?;
            out.column_mut(c).copy_from_slice(&projected);
        }
        Ok(out)
    }

    /// `n ||(I - S_d) u||^2 / (n - tr S_d)^2`.
    pub fn gcv_score(&self, u: &[f64]) -> Result<f64> {
        let resid = self.residual_project(u)?;
        let n = self.len() as f64;
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let denom = n - self.trace();
        Ok(if denom > 0.0 {
            n * rss / (denom * denom)
        } else {
            f64::INFINITY
        })
    }
}

fn local_linear_row(n: usize, i: usize, bandwidth: f64, kernel: Kernel) -> Result<BandRow> {
    let nb = n as f64 * bandwidth * kernel.support_halfwidth();
    let reach = nb.floor() as usize;
    let lo = i.saturating_sub(reach);
    let hi = (i + reach).min(n - 1);
    let scale = n as f64 * bandwidth;
    // distances in units of b; the row weights are invariant to this scaling
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut kw = Vec::with_capacity(hi - lo + 1);
    let mut positive = 0;
    for j in lo..=hi {
        let u = (j as f64 - i as f64) / scale;
        let w = kernel.eval(u);
        if w > 0.0 {
            positive += 1;
        }
        s0 += w;
        s1 += w * u;
        s2 += w * u * u;
        kw.push((u, w));
    }
    let det = s0 * s2 - s1 * s1;
    if positive < 2 || !(det > DET_REL_TOL * s0 * s2) {
        return Err(Error::SingularWindow { row: i, bandwidth });
    }
    let mut weights: Vec<f64> = kw.iter().map(|&(u, w)| (s2 - s1 * u) * w / det).collect();
    let mut start = lo;
    // trim exact zeros at the support boundary
    while weights.first() == Some(&0.0) {
        weights.remove(0);
        start += 1;
    }
    while weights.last() == Some(&0.0) {
        weights.pop();
    }
    Ok(BandRow { start, weights })
}

/// `count` log-spaced bandwidths in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || lo >= hi {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Ten log-spaced values in `[2m/n, 0.5]`; the floor keeps the smoother from
/// absorbing HRF-scale structure.
pub fn default_bandwidth_grid(n: usize, m: usize) -> Vec<f64> {
    let lo = (2.0 * m as f64 / n as f64).min(0.5);
    log_grid(lo, 0.5, 10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    /// GCV score per candidate, `None` where the smoother was singular.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Pick the candidate minimising GCV on the working residual `u`; ties go to
/// the larger bandwidth.
pub fn select_bandwidth_gcv(
    u: &[f64],
    runs: &[usize],
    candidates: &[f64],
    kernel: Kernel,
) -> Result<BandwidthSelection> {
    let total: usize = runs.iter().sum();
    if u.len() != total {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: u.len(),
        });
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &b in candidates {
        let score = match Smoother::for_runs(runs, b, kernel) {
            Ok(sm) => Some(sm.gcv_score(u)?),
            Err(Error::SingularWindow { .. }) | Err(Error::Domain(_)) => None,
            Err(e) => return Err(e),
        };
        if let Some(g) = score.filter(|g| g.is_finite()) {
            best = match best {
                Some((bb, bg)) if g > bg || (g == bg && b < bb) => Some((bb, bg)),
                _ => Some((b, g)),
            };
        }
        scores.push((b, score));
    }
    match best {
        Some((bandwidth, _)) => Ok(BandwidthSelection { bandwidth, scores }),
        None => Err(Error::NoValidBandwidth),
    }
}
