use nalgebra::DMatrix;
use proptest::prelude::*;
use spfmri_core::noise::{
    differenced_autocov, estimate_autocov_pooled, second_difference, solve_gamma_system,
};
use spfmri_core::sim::{seeded_rng, NoiseProcess};
use spfmri_core::{estimate_noise, Error, NoiseModel};

fn ma_gamma(t1: f64, t2: f64) -> Vec<f64> {
    vec![1.0 + t1 * t1 + t2 * t2, t1 + t1 * t2, t2]
}

proptest! {
    #[test]
    fn gamma_system_round_trips(t1 in -0.8f64..0.8, t2 in -0.4f64..0.4) {
        let gamma = ma_gamma(t1, t2);
        let back = solve_gamma_system(&differenced_autocov(&gamma)).unwrap();
        for (a, b) in gamma.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn banded_solve_matches_dense(n in 5usize..40, t1 in -0.8f64..0.8, t2 in -0.4f64..0.4) {
        let model = NoiseModel::from_autocov(&ma_gamma(t1, t2), &[n]).unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = model.solve(&rhs).unwrap();
        let dense = model.to_dense();
        let back = &dense * nalgebra::DVector::from_vec(x);
        for (a, b) in back.iter().zip(&rhs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn estimator_is_immune_to_linear_trends() {
    let mut rng = seeded_rng(3);
    let e = NoiseProcess::MovingAverage {
        theta: vec![0.4, 0.1],
        sigma2: 1.0,
    }
    .generate(300, &mut rng)
    .unwrap();
    let runs = [150, 150];
    let trended: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v + if i < 150 {
                3.0 + 0.2 * i as f64
            } else {
                -1.0 - 0.05 * i as f64
            }
        })
        .collect();
    let a = estimate_noise(&e, &runs, 2).unwrap();
    let b = estimate_noise(&trended, &runs, 2).unwrap();
    let (ga, gb) = (a.gamma.unwrap(), b.gamma.unwrap());
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn recovers_ma2_autocovariance_on_long_series() {
    let process = NoiseProcess::MovingAverage {
        theta: vec![0.5, 0.2],
        sigma2: 1.0,
    };
    let e = process.generate(200_000, &mut seeded_rng(8)).unwrap();
    let est = estimate_noise(&e, &[200_000], 2).unwrap();
    let gamma = est.gamma.unwrap();
    for (lag, g) in gamma.iter().enumerate() {
        assert!((g - process.autocov(lag)).abs() < 0.03, "lag {lag}: {g}");
    }
}

#[test]
fn pooled_autocov_matches_direct_sum() {
    let segs = vec![vec![1.0, -2.0, 0.5, 3.0], vec![0.0, 1.0, -1.0]];
    let got = estimate_autocov_pooled(&segs, 1).unwrap();
    let mean = 2.5 / 7.0;
    let c: Vec<Vec<f64>> = segs
        .iter()
        .map(|s| s.iter().map(|v| v - mean).collect())
        .collect();
    let g0: f64 = c.iter().flatten().map(|v| v * v).sum::<f64>() / 7.0;
    let g1: f64 = c
        .iter()
        .map(|s| s.windows(2).map(|w| w[0] * w[1]).sum::<f64>())
        .sum::<f64>()
        / 7.0;
    assert!((got[0] - g0).abs() < 1e-14 && (got[1] - g1).abs() < 1e-14);
    let d = second_difference(&[1.0, 4.0, 9.0, 16.0, 0.0, 0.0, 0.0], &[4, 3]).unwrap();
    assert_eq!(d, vec![vec![2.0, 2.0], vec![0.0]]);
}

/// Largest entry of the inverse on each diagonal offset.
fn inverse_profile(n: usize, gamma: &[f64]) -> Vec<f64> {
    let model = NoiseModel::from_autocov(gamma, &[n]).unwrap();
    let inv = model.solve_matrix(&DMatrix::identity(n, n)).unwrap();
    (0..n)
        .map(|d| {
            (0..n - d)
                .map(|i| inv[(i, i + d)].abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn inverse_entries_decay_geometrically_at_a_stable_rate() {
    let gamma = ma_gamma(0.5, 0.2);
    let small = inverse_profile(100, &gamma);
    // fit log |V| = log C + d log lambda over offsets 0..40 of the small case
    let pts: Vec<(f64, f64)> = (0..40).map(|d| (d as f64, small[d].ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 40.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 40.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let lambda = slope.exp();
    assert!(lambda > 0.0 && lambda < 1.0);
    let c = pts
        .iter()
        .map(|p| p.1 - p.0 * slope)
        .fold(f64::MIN, f64::max)
        .exp();
    let large = inverse_profile(200, &gamma);
    for (d, v) in large.iter().enumerate() {
        assert!(*v <= 1.05 * c * lambda.powi(d as i32), "offset {d}");
    }
}

#[test]
fn infeasible_estimates_fall_back_to_white() {
    let linear: Vec<f64> = (0..100).map(|i| 2.0 + 3.0 * i as f64).collect();
    let est = estimate_noise(&linear, &[100], 2).unwrap();
    assert!(est.fallback && est.gamma.is_none());
    assert_eq!(est.model.g(), 0);
    assert!(matches!(
        solve_gamma_system(&differenced_autocov(&[1.0, 1.5, 0.0])),
        Err(Error::InfeasibleCovariance(_))
    ));
}

#[test]
fn indefinite_bands_are_shrunk() {
    let model = NoiseModel::from_autocov(&[1.0, 0.9, 0.9], &[50]).unwrap();
    let lambda = model.shrinkage().unwrap();
    assert!(lambda < 1.0);
    assert!((model.correlations()[1] - 0.9 * lambda).abs() < 1e-15);
    assert!(NoiseModel::from_autocov(&[1.0, 0.4, 0.1], &[50])
        .unwrap()
        .shrinkage()
        .is_none());
}
