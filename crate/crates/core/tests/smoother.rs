mod common;

use proptest::prelude::*;
use spfmri_core::smoother::{default_bandwidth_grid, log_grid};
use spfmri_core::{build_smoother, select_bandwidth_gcv, Kernel, Smoother};

use common::dense_smoother;

proptest! {
    #[test]
    fn matches_dense_local_fits(n in 8usize..=30, b in 0.25f64..0.9) {
        let sm = build_smoother(n, b, Kernel::Epanechnikov).unwrap();
        let dense = dense_smoother(&[n], b).unwrap();
        let diff = (sm.to_dense() - dense).amax();
        prop_assert!(diff < 1e-10, "max difference {}", diff);
    }

    #[test]
    fn reproduces_lines(n in 30usize..200, b in 0.08f64..0.5, c0 in -5.0f64..5.0, c1 in -5.0f64..5.0) {
        let sm = build_smoother(n, b, Kernel::Epanechnikov).unwrap();
        let v: Vec<f64> = (1..=n).map(|i| c0 + c1 * i as f64 / n as f64).collect();
        let out = sm.apply(&v).unwrap();
        for (a, e) in out.iter().zip(&v) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }
}

#[test]
fn multi_run_blocks_match_dense_oracle() {
    let runs = [20, 25];
    let sm = Smoother::for_runs(&runs, 0.4, Kernel::Epanechnikov).unwrap();
    let dense = dense_smoother(&runs, 0.4).unwrap();
    assert!((sm.to_dense() - dense).amax() < 1e-10);
    // no weight crosses a run boundary
    assert_eq!(sm.entry(19, 20), 0.0);
    assert_eq!(sm.entry(20, 19), 0.0);
}

#[test]
fn interior_rows_are_symmetric_kernel_weights() {
    let n = 200;
    let sm = build_smoother(n, 0.1, Kernel::Epanechnikov).unwrap();
    let i = 100;
    for d in 1..15 {
        assert!((sm.entry(i, i - d) - sm.entry(i, i + d)).abs() < 1e-14);
    }
    // interior rows of the same bandwidth are translates of each other
    for d in 0..15 {
        assert!((sm.entry(i, i + d) - sm.entry(i + 30, i + 30 + d)).abs() < 1e-14);
    }
}

#[test]
fn tiny_bandwidth_is_singular() {
    assert!(build_smoother(50, 0.01, Kernel::Epanechnikov).is_err());
    assert!(build_smoother(50, 0.0, Kernel::Epanechnikov).is_err());
    assert!(build_smoother(50, 1.0, Kernel::Epanechnikov).is_err());
}

#[test]
fn zero_smoother_is_identity_projection() {
    let sm = Smoother::zero(&[5]);
    let v = vec![1.0, -2.0, 3.0, 0.5, 4.0];
    assert_eq!(sm.apply(&v).unwrap(), vec![0.0; 5]);
    assert_eq!(sm.residual_project(&v).unwrap(), v);
}

#[test]
fn gcv_prefers_the_true_smoothness() {
    let n = 300;
    let noise: Vec<f64> = (0..n)
        .map(|i| (((i * 2654435761usize) % 1000) as f64 / 1000.0 - 0.5) * 0.2)
        .collect();
    let wiggly: Vec<f64> = (0..n)
        .map(|i| (i as f64 / n as f64 * 12.0).sin() + noise[i])
        .collect();
    let smooth: Vec<f64> = (0..n)
        .map(|i| 0.5 * (i as f64 / n as f64 * 2.0).sin() + noise[i])
        .collect();
    let grid = log_grid(0.03, 0.5, 12);
    let a = select_bandwidth_gcv(&wiggly, &[n], &grid, Kernel::Epanechnikov).unwrap();
    let b = select_bandwidth_gcv(&smooth, &[n], &grid, Kernel::Epanechnikov).unwrap();
    assert!(a.bandwidth < b.bandwidth);
    assert_eq!(a.scores.len(), grid.len());
}

#[test]
fn default_grid_spans_floor_to_half() {
    let grid = default_bandwidth_grid(400, 18);
    assert_eq!(grid.len(), 10);
    assert!((grid[0] - 0.09).abs() < 1e-12);
    assert!((grid[9] - 0.5).abs() < 1e-12);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
}
