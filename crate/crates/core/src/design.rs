//! Convolution design matrices built from binary stimulus trains.
//!
//! For one stimulus type the design is the lower-triangular Toeplitz matrix
//! whose column `l` is the stimulus train delayed by `l` ticks, so that
//! `S h` is the discrete convolution of the train with an HRF supported on
//! `m` ticks. Several stimulus types are concatenated horizontally and several
//! runs are stacked vertically; the per-run row counts are kept so that
//! downstream smoothing and differencing never cross a run boundary.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// One run of stimulus trains, one train per stimulus type.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusRun {
    trains: Vec<Vec<u8>>,
}

impl StimulusRun {
    pub fn new(trains: Vec<Vec<u8>>) -> Result<Self> {
        if trains.is_empty() {
            return Err(Error::InvalidStimulus("run has no stimulus trains".into()));
        }
        let len = trains[0].len();
        for (j, train) in trains.iter().enumerate() {
            if train.len() != len {
                return Err(Error::InvalidStimulus(format!(
                    "train {} has length {}, expected {}",
                    j + 1,
                    train.len(),
                    len
                )));
            }
            check_binary(train)?;
        }
        Ok(StimulusRun { trains })
    }

    pub fn len(&self) -> usize {
        self.trains[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_types(&self) -> usize {
        self.trains.len()
    }

    pub fn trains(&self) -> &[Vec<u8>] {
        &self.trains
    }
}

/// Binary stimulus trains on the fine time grid, grouped by run.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusGrid {
    names: Vec<String>,
    runs: Vec<StimulusRun>,
    resolution_s: f64,
}

impl StimulusGrid {
    pub fn new(names: Vec<String>, runs: Vec<StimulusRun>, resolution_s: f64) -> Result<Self> {
        if !(resolution_s > 0.0) || !resolution_s.is_finite() {
            return Err(Error::InvalidStimulus(format!(
                "resolution must be positive, got {resolution_s}"
            )));
        }
        if runs.is_empty() {
            return Err(Error::InvalidStimulus("no runs".into()));
        }
        let r = runs[0].num_types();
        if runs.iter().any(|run| run.num_types() != r) {
            return Err(Error::InvalidStimulus(
                "runs disagree on the number of stimulus types".into(),
            ));
        }
        if names.len() != r {
            return Err(Error::InvalidStimulus(format!(
                "{} type names for {} stimulus types",
                names.len(),
                r
            )));
        }
        Ok(StimulusGrid {
            names,
            runs,
            resolution_s,
        })
    }

    /// Single run, single stimulus type.
    pub fn single(train: Vec<u8>, resolution_s: f64) -> Result<Self> {
        StimulusGrid::new(
            vec!["stim".into()],
            vec![StimulusRun::new(vec![train])?],
            resolution_s,
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn runs(&self) -> &[StimulusRun] {
        &self.runs
    }

    pub fn resolution_s(&self) -> f64 {
        self.resolution_s
    }

    pub fn num_types(&self) -> usize {
        self.names.len()
    }

    pub fn run_lengths(&self) -> Vec<usize> {
        self.runs.iter().map(StimulusRun::len).collect()
    }

    /// Fraction of ticks carrying each stimulus type.
    pub fn stimulus_frequencies(&self) -> Vec<f64> {
        let total: usize = self.run_lengths().iter().sum();
        (0..self.num_types())
            .map(|j| {
                let ones: usize = self
                    .runs
                    .iter()
                    .map(|run| run.trains[j].iter().filter(|&&v| v == 1).count())
                    .sum();
                ones as f64 / total as f64
            })
            .collect()
    }
}

fn check_binary(train: &[u8]) -> Result<()> {
    match train.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::InvalidStimulus(format!(
            "value {} at position {} is not 0 or 1",
            train[i],
            i + 1
        ))),
        None => Ok(()),
    }
}

/// Stacked Toeplitz design `S = [S_1, ..., S_r]` with per-run row blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    entries: DMatrix<f64>,
    m: usize,
    r: usize,
    runs: Vec<usize>,
}

impl DesignMatrix {
    /// Wrap an explicit matrix with `r * m` columns and rows split into `runs`.
    pub fn from_parts(entries: DMatrix<f64>, m: usize, r: usize, runs: Vec<usize>) -> Result<Self> {
        if m == 0 || r == 0 || entries.ncols() != r * m {
            return Err(Error::InvalidDimension(format!(
                "{} columns do not match r = {r}, m = {m}",
                entries.ncols()
            )));
        }
        let total: usize = runs.iter().sum();
        if total != entries.nrows() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: total,
            });
        }
        Ok(DesignMatrix {
            entries,
            m,
            r,
            runs,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of coefficients `r * m`.
    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Row count of each run, in row order.
    pub fn runs(&self) -> &[usize] {
        &self.runs
    }

    /// First column of block `S_j` (0-based `j`).
    pub fn block_offset(&self, j: usize) -> usize {
        j * self.m
    }

    pub fn block_offsets(&self) -> Vec<usize> {
        (0..self.r).map(|j| self.block_offset(j)).collect()
    }

    /// Run index of every row.
    pub fn run_ids(&self) -> Vec<usize> {
        self.runs
            .iter()
            .enumerate()
            .flat_map(|(k, &len)| std::iter::repeat_n(k, len))
            .collect()
    }

    /// `S h` for a coefficient vector of length `r * m`.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: h.len(),
            });
        }
        let hv = nalgebra::DVector::from_column_slice(h);
        Ok((&self.entries * hv).as_slice().to_vec())
    }
}

/// Lower-triangular Toeplitz block with `block(i, l) = train[i - l]` for
/// `i >= l` (0-based) and zero above the diagonal.
pub fn build_toeplitz(train: &[u8], m: usize) -> Result<DMatrix<f64>> {
    let n = train.len();
    if m == 0 || m >= n {
        return Err(Error::InvalidDimension(format!(
            "HRF length m = {m} must satisfy 0 < m < n = {n}"
        )));
    }
    check_binary(train)?;
    Ok(DMatrix::from_fn(n, m, |i, l| {
        if i >= l {
            f64::from(train[i - l])
        } else {
            0.0
        }
    }))
}

/// Horizontal concatenation of per-type blocks and vertical stacking of runs.
pub fn assemble_design(grid: &StimulusGrid, m: usize) -> Result<DesignMatrix> {
    let r = grid.num_types();
    let runs = grid.run_lengths();
    for (k, &len) in runs.iter().enumerate() {
        if len <= m {
            return Err(Error::InvalidDimension(format!(
                "run {} has {} samples, need more than m = {}",
                k + 1,
                len,
                m
            )));
        }
    }
    let n: usize = runs.iter().sum();
    let mut entries = DMatrix::zeros(n, r * m);
    let mut row0 = 0;
    for run in grid.runs() {
        for (j, train) in run.trains().iter().enumerate() {
            let block = build_toeplitz(train, m)?;
            entries
                .view_mut((row0, j * m), (run.len(), m))
                .copy_from(&block);
        }
        row0 += run.len();
    }
    Ok(DesignMatrix {
        entries,
        m,
        r,
        runs,
    })
}

/// Keep rows whose within-run index is congruent to `phase` modulo
/// `decimation`. Used when the acquisition TR is a multiple of the stimulus
/// resolution; `phase = 0` keeps the odd (1-based) rows.
pub fn subsample_rows(
    design: &DesignMatrix,
    decimation: usize,
    phase: usize,
) -> Result<DesignMatrix> {
    if decimation == 0 {
        return Err(Error::InvalidDimension(
            "decimation must be at least 1".into(),
        ));
    }
    if phase >= decimation {
        return Err(Error::InvalidDimension(format!(
            "phase {phase} must be below decimation {decimation}"
        )));
    }
    if let Some(&short) = design.runs.iter().find(|&&len| decimation > len) {
        return Err(Error::InvalidDimension(format!(
            "decimation {decimation} exceeds run length {short}"
        )));
    }
    let mut keep = Vec::new();
    let mut runs = Vec::with_capacity(design.runs.len());
    let mut row0 = 0;
    for &len in &design.runs {
        let before = keep.len();
        keep.extend((phase..len).step_by(decimation).map(|i| row0 + i));
        runs.push(keep.len() - before);
        row0 += len;
    }
    let entries = design.entries.select_rows(keep.iter());
    Ok(DesignMatrix {
        entries,
        m: design.m,
        r: design.r,
        runs,
    })
}

/// Finite-sample diagnostics standing in for the positive-definiteness of the
/// row covariance of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub rank: usize,
    /// Smallest eigenvalue of the column covariance over complete rows.
    pub min_cov_eigenvalue: f64,
    pub max_cov_eigenvalue: f64,
    /// Condition number of `S^T S` (infinite when singular).
    pub gram_condition: f64,
    pub flagged: bool,
}

const VALIDITY_REL_TOL: f64 = 1e-8;

/// Rank, covariance eigenvalues and conditioning of an assembled design.
///
/// The covariance is taken over the complete rows of each run (within-run
/// index `>= m - 1`), where every column sees a full lag window; this is the
/// stationary part of the Toeplitz structure and makes a constant train
/// register as degenerate.
pub fn design_validity_check(design: &DesignMatrix) -> DesignReport {
    let s = &design.entries;
    let p = s.ncols();

    let svd = s.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * (s.nrows().max(p) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();

    let mut rows = Vec::new();
    let mut row0 = 0;
    for &len in &design.runs {
        rows.extend((design.m.saturating_sub(1)..len).map(|i| row0 + i));
        row0 += len;
    }
    let sub = s.select_rows(rows.iter());
    let count = sub.nrows() as f64;
    let means = sub.row_mean();
    let mut centered = sub.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / count;
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let min_cov = eig.min();
    let max_cov = eig.max();

    let gram_eig = SymmetricEigen::new(s.transpose() * s).eigenvalues;
    let gmin = gram_eig.min();
    let gram_condition = if gmin > 0.0 {
        gram_eig.max() / gmin
    } else {
        f64::INFINITY
    };

    let flagged = rank < p || !(max_cov > 0.0) || min_cov <= VALIDITY_REL_TOL * max_cov;
    DesignReport {
        rank,
        min_cov_eigenvalue: min_cov,
        max_cov_eigenvalue: max_cov,
        gram_condition,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
        mat.row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    #[test]
    fn toeplitz_small_example() {
        let s = build_toeplitz(&[1, 0, 1, 1], 2).unwrap();
        assert_eq!(
            rows(&s),
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
    }

    #[test]
    fn toeplitz_zero_and_impulse() {
        let z = build_toeplitz(&[0, 0, 0, 0], 2).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let imp = build_toeplitz(&[1, 0, 0, 0], 3).unwrap();
        assert_eq!(
            rows(&imp),
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0]
            ]
        );
    }

    #[test]
    fn toeplitz_errors() {
        assert!(matches!(
            build_toeplitz(&[1, 0, 1], 3),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            build_toeplitz(&[1, 2, 1, 0], 2),
            Err(Error::InvalidStimulus(_))
        ));
    }

    #[test]
    fn two_types_side_by_side() {
        let a = vec![1, 0, 1, 1, 0];
        let b = vec![0, 1, 1, 0, 1];
        let grid = StimulusGrid::new(
            vec!["a".into(), "b".into()],
            vec![StimulusRun::new(vec![a.clone(), b.clone()]).unwrap()],
            1.0,
        )
        .unwrap();
        let d = assemble_design(&grid, 2).unwrap();
        let sa = build_toeplitz(&a, 2).unwrap();
        let sb = build_toeplitz(&b, 2).unwrap();
        assert_eq!(d.entries().columns(0, 2), sa);
        assert_eq!(d.entries().columns(2, 2), sb);
        assert_eq!(d.block_offsets(), vec![0, 2]);
    }

    #[test]
    fn runs_are_stacked() {
        let r1 = vec![1, 0, 1, 1];
        let r2 = vec![0, 1, 1, 0];
        let grid = StimulusGrid::new(
            vec!["s".into()],
            vec![
                StimulusRun::new(vec![r1.clone()]).unwrap(),
                StimulusRun::new(vec![r2.clone()]).unwrap(),
            ],
            1.0,
        )
        .unwrap();
        let d = assemble_design(&grid, 2).unwrap();
        assert_eq!(d.nrows(), 8);
        assert_eq!(d.runs(), &[4, 4]);
        assert_eq!(d.entries().rows(0, 4), build_toeplitz(&r1, 2).unwrap());
        // the second run starts fresh: no carry-over of the first run's tail
        assert_eq!(d.entries().rows(4, 4), build_toeplitz(&r2, 2).unwrap());
        assert_eq!(d.run_ids(), vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn short_run_rejected() {
        let grid = StimulusGrid::single(vec![1, 0, 1], 1.0).unwrap();
        assert!(matches!(
            assemble_design(&grid, 3),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn subsample_keeps_odd_rows() {
        let grid = StimulusGrid::single(vec![1, 0, 1, 1, 0, 1], 1.0).unwrap();
        let d = assemble_design(&grid, 2).unwrap();
        let sub = subsample_rows(&d, 2, 0).unwrap();
        assert_eq!(sub.nrows(), 3);
        for (k, i) in [0usize, 2, 4].iter().enumerate() {
            assert_eq!(sub.entries().row(k), d.entries().row(*i));
        }
        assert_eq!(subsample_rows(&d, 1, 0).unwrap(), d);
    }

    #[test]
    fn subsample_phase_one() {
        let grid = StimulusGrid::single(vec![1, 1, 0, 1, 0], 1.0).unwrap();
        let d = assemble_design(&grid, 2).unwrap();
        let sub = subsample_rows(&d, 2, 1).unwrap();
        assert_eq!(sub.nrows(), 2);
        assert_eq!(sub.entries().row(0), d.entries().row(1));
        assert_eq!(sub.entries().row(1), d.entries().row(3));
        assert!(subsample_rows(&d, 6, 0).is_err());
        assert!(subsample_rows(&d, 2, 2).is_err());
        assert!(subsample_rows(&d, 0, 0).is_err());
    }

    #[test]
    fn validity_flags_degenerate_designs() {
        let ones = StimulusGrid::single(vec![1; 60], 1.0).unwrap();
        assert!(design_validity_check(&assemble_design(&ones, 4).unwrap()).flagged);

        let train: Vec<u8> = (0..80).map(|i| ((i * 7 + i / 3) % 2) as u8).collect();
        let dup = StimulusGrid::new(
            vec!["a".into(), "b".into()],
            vec![StimulusRun::new(vec![train.clone(), train]).unwrap()],
            1.0,
        )
        .unwrap();
        let report = design_validity_check(&assemble_design(&dup, 3).unwrap());
        assert!(report.flagged);
        assert!(report.rank < 6);
    }

    #[test]
    fn stimulus_frequencies() {
        let grid = StimulusGrid::single(vec![1, 0, 1, 1], 1.0).unwrap();
        assert_eq!(grid.stimulus_frequencies(), vec![0.75]);
    }
}
