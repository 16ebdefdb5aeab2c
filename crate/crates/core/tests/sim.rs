use spfmri_core::inference::HypothesisKind;
use spfmri_core::sim::{
    canonical_hrf, derive_seed, gen_brain, gen_drift, gen_noise, gen_stimulus, gen_voxel,
    run_qq_study, BrainConfig, DriftSpec, NoiseProcess, QqConfig, QqMode, Region, VoxelSimConfig,
    DEFAULT_RHO,
};
use spfmri_core::{
    analyze_voxel, assemble_design, chi2_quantile, make_hypothesis, Error, PipelineConfig,
    StimulusGrid,
};

fn autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let cl = x
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>();
    cl / c0
}

#[test]
fn mixture_noise_moments() {
    let v = 0.3;
    let e = gen_noise(100_000, v, DEFAULT_RHO, 9).unwrap();
    let var = e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64;
    assert!((var / (2.686 * v) - 1.0).abs() < 0.03, "variance {var}");
    let process = NoiseProcess::Mixture {
        v,
        rho: DEFAULT_RHO,
    };
    for lag in 1..=2 {
        let exact = process.autocov(lag) / process.variance();
        assert!((autocorr(&e, lag) - exact).abs() < 0.01, "lag {lag}");
    }
    let white = gen_noise(100_000, v, 0.0, 9).unwrap();
    let wvar = white.iter().map(|x| x * x).sum::<f64>() / white.len() as f64;
    assert!((wvar / (2.0 * v) - 1.0).abs() < 0.03);
}

#[test]
fn ma_noise_moments() {
    let process = NoiseProcess::MovingAverage {
        theta: vec![0.5, 0.2],
        sigma2: 1.0,
    };
    let mut rng = spfmri_core::sim::seeded_rng(2);
    let e = process.generate(100_000, &mut rng).unwrap();
    for lag in 0..=3 {
        let exact = process.autocov(lag) / process.variance();
        let got = if lag == 0 { 1.0 } else { autocorr(&e, lag) };
        assert!((got - exact).abs() < 0.01, "lag {lag}");
    }
    assert_eq!(process.autocov(3), 0.0);
}

#[test]
fn stimulus_and_drift() {
    let s = gen_stimulus(400, 0.5, 3).unwrap();
    let mean = s.iter().map(|&v| v as f64).sum::<f64>() / 400.0;
    assert!((mean - 0.5).abs() <= 3.0 * (0.25f64 / 400.0).sqrt());
    assert_eq!(s, gen_stimulus(400, 0.5, 3).unwrap());
    assert!(gen_stimulus(10, 0.0, 1).is_err());

    let d = gen_drift(100, DriftSpec::default());
    assert!((d[70] - 10.0).abs() < 1e-12); // t = 0.71
    assert!(d[20].abs() < 1.0); // t = 0.21 sits between grid points
    assert!(gen_drift(
        50,
        DriftSpec {
            amplitude: 0.0,
            phase: 0.3
        }
    )
    .iter()
    .all(|&v| v == 0.0));
}

#[test]
fn voxel_components_add_up() {
    let cfg = VoxelSimConfig {
        h: (0..8).map(|l| (l as f64 * 0.5).sin()).collect(),
        ..VoxelSimConfig::null(200, 8, 2, 17).unwrap()
    };
    let v = gen_voxel(&cfg).unwrap();
    for i in 0..200 {
        assert!((v.y[i] - v.signal[i] - v.drift[i] - v.noise[i]).abs() < 1e-12);
    }
    let grid = StimulusGrid::single(v.stimulus.clone(), 1.0).unwrap();
    let design = assemble_design(&grid, 8).unwrap();
    let signal = design.apply(&v.h).unwrap();
    for (a, b) in signal.iter().zip(&v.signal) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(v, gen_voxel(&cfg).unwrap());
}

#[test]
fn doubling_h_quadruples_snr() {
    let base = VoxelSimConfig {
        h: vec![0.2, 0.5, 0.3],
        ..VoxelSimConfig::null(300, 3, 1, 5).unwrap()
    };
    let doubled = VoxelSimConfig {
        h: base.h.iter().map(|v| 2.0 * v).collect(),
        ..base.clone()
    };
    let a = gen_voxel(&base).unwrap().snr;
    let b = gen_voxel(&doubled).unwrap().snr;
    assert!((b / a - 4.0).abs() < 1e-10);

    let target = VoxelSimConfig {
        snr_target: Some(1.5),
        ..base
    };
    assert!((gen_voxel(&target).unwrap().snr - 1.5).abs() < 1e-10);
    let bad = VoxelSimConfig {
        snr_target: Some(1.0),
        ..VoxelSimConfig::null(100, 3, 1, 5).unwrap()
    };
    assert!(matches!(gen_voxel(&bad), Err(Error::InconsistentConfig(_))));
}

#[test]
fn qq_study_is_deterministic_and_near_chi_square() {
    let cfg = QqConfig {
        voxel: VoxelSimConfig::null(400, 18, 1, 77).unwrap(),
        reps: 100,
        mode: QqMode::Estimated,
        hypothesis: HypothesisKind::AllZero,
    };
    let a = run_qq_study(&cfg).unwrap();
    let b = run_qq_study(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.failures, 0);
    let median = a.empirical_k_bc[49];
    let chi_median = chi2_quantile(0.5, 18.0).unwrap();
    assert!((median / chi_median - 1.0).abs() <= 0.15, "median {median}");
    assert!(run_qq_study(&QqConfig { reps: 99, ..cfg }).is_err());
}

#[test]
fn oracle_qq_mode_is_well_calibrated() {
    let cfg = QqConfig {
        voxel: VoxelSimConfig::null(400, 6, 1, 3).unwrap(),
        reps: 200,
        mode: QqMode::Oracle { bandwidth: 0.3 },
        hypothesis: HypothesisKind::AllZero,
    };
    let t = run_qq_study(&cfg).unwrap();
    let crit = chi2_quantile(0.95, 6.0).unwrap();
    let rate = t.k_bc_samples.iter().filter(|&&k| k > crit).count() as f64 / 200.0;
    assert!(rate < 0.12, "rate {rate}");
}

#[test]
fn canonical_hrf_peaks_at_one() {
    let h = canonical_hrf(18, 1.5);
    assert_eq!(h[0], 0.0);
    let peak = h.iter().cloned().fold(f64::MIN, f64::max);
    assert!((peak - 1.0).abs() < 1e-12);
    let arg = h.iter().position(|&v| v == peak).unwrap();
    assert!((2..=5).contains(&arg));
    assert!(h.iter().any(|&v| v < 0.0)); // undershoot
}

#[test]
fn empty_brain_has_no_truth_and_conflicts_are_rejected() {
    let mut cfg = BrainConfig::standard([4, 4, 1], 120, 1);
    cfg.regions.clear();
    let brain = gen_brain(&cfg).unwrap();
    assert!(brain.truth.iter().all(|&t| !t));
    assert_eq!(brain.series.len(), 16);

    let mut bad = BrainConfig::standard([4, 4, 1], 120, 1);
    bad.regions = vec![
        Region {
            lo: [0, 0, 0],
            hi: [2, 2, 1],
            scale: 0.1,
        },
        Region {
            lo: [1, 1, 0],
            hi: [3, 3, 1],
            scale: 0.2,
        },
    ];
    assert!(matches!(gen_brain(&bad), Err(Error::InvalidRegion(_))));
}

#[test]
fn strong_regions_are_detected_on_a_tiny_brain() {
    let mut cfg = BrainConfig::standard([4, 4, 1], 100, 6);
    cfg.regions = vec![Region {
        lo: [0, 0, 0],
        hi: [2, 2, 1],
        scale: 1.0,
    }];
    let brain = gen_brain(&cfg).unwrap();
    let grid = StimulusGrid::single(brain.stimulus.clone(), 1.0).unwrap();
    let design = assemble_design(&grid, cfg.m).unwrap();
    let a = make_hypothesis(&HypothesisKind::AllZero, 1, cfg.m).unwrap();
    for (y, &active) in brain.series.iter().zip(&brain.truth) {
        if active {
            let out = analyze_voxel(y, &design, &a, &PipelineConfig::default()).unwrap();
            assert!(out.k.p_value < 1e-4, "p {}", out.k.p_value);
        }
    }
    assert_eq!(brain.truth.iter().filter(|&&t| t).count(), 4);
}

#[test]
fn seeds_are_stream_separated() {
    assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
}
