//! Cholesky factorisation of symmetric positive definite band matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower factor `L` of a band matrix with half-bandwidth `bw`, stored row by
/// row: `rows[i][k] = L(i, i - bw + k)` for the columns inside the band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    rows: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// Factor the symmetric matrix whose lower band is given by `entry(i, j)`
    /// for `i - bw <= j <= i`. Costs `O(n bw^2)`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut row = vec![0.0; i - j0 + 1];
            for j in j0..=i {
                let mut sum = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    let ljk = if j == i {
                        row[k - j0]
                    } else {
                        rows[j][k - j.saturating_sub(bw)]
                    };
                    sum -= row[k - j0] * ljk;
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    row[j - j0] = sum.sqrt();
                } else {
                    let djj = *rows[j].last().expect("nonempty factor row");
                    row[j - j0] = sum / djj;
                }
            }
            rows.push(row);
        }
        Ok(BandedCholesky { n, bw, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j - i.saturating_sub(self.bw)]
    }

    /// Solve `L L^T x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut sum = x[i];
            for j in j0..i {
                sum -= self.l(i, j) * x[j];
            }
            x[i] = sum / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let j1 = (i + self.bw).min(self.n - 1);
            let mut sum = x[i];
            for j in i + 1..=j1 {
                sum -= self.l(j, i) * x[j];
            }
            x[i] = sum / self.l(i, i);
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn to_dense_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if j <= i && i - j <= self.bw {
                self.l(i, j)
            } else {
                0.0
            }
        })
    }
}
