//! Per-voxel driver: bandwidth selection, two-stage noise estimation, GLS fit
//! and both test statistics.

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::inference::{fit_gls, test_k, test_k_bc, HrfFit, HypothesisMatrix, TestResult};
use crate::noise::{estimate_noise, NoiseModel};
use crate::smoother::{
    default_bandwidth_grid, select_bandwidth_gcv, BandwidthSelection, Kernel, Smoother,
};

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthMode {
    Fixed(f64),
    /// GCV over `grid`, or the default grid when `None`.
    Auto {
        grid: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub enum NoiseMode {
    /// Difference the working residual and estimate `gamma[0..=g]`, refitting
    /// `iterations` times.
    Estimate {
        g: usize,
        iterations: usize,
    },
    /// Ordinary least squares (`R = I`).
    White,
    Known(NoiseModel),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub kernel: Kernel,
    pub bandwidth: BandwidthMode,
    pub noise: NoiseMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kernel: Kernel::Epanechnikov,
            bandwidth: BandwidthMode::Auto { grid: None },
            noise: NoiseMode::Estimate {
                g: 2,
                iterations: 1,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct VoxelAnalysis {
    pub fit: HrfFit,
    pub k: TestResult,
    pub k_bc: TestResult,
    pub bandwidth: f64,
    pub selection: Option<BandwidthSelection>,
    /// Estimated `gamma[0..=g]`; `None` for white or known noise and after a
    /// fallback.
    pub gamma: Option<Vec<f64>>,
    pub shrinkage: Option<f64>,
    pub noise_fallback: bool,
    /// Zero series or an exact fit leaving no residual variance.
    pub degenerate: bool,
}

fn working_residual(y: &[f64], design: &DesignMatrix, fit: &HrfFit) -> Vec<f64> {
    let fitted = design.entries() * &fit.h_hat;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Run the full pipeline on one series.
pub fn analyze_voxel(
    y: &[f64],
    design: &DesignMatrix,
    hypothesis: &HypothesisMatrix,
    config: &PipelineConfig,
) -> Result<VoxelAnalysis> {
    if y.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let runs = design.runs().to_vec();
    let kernel = config.kernel;

    let initial_noise = match &config.noise {
        NoiseMode::Known(model) => model.clone(),
        _ => NoiseModel::identity(&runs),
    };

    let grid = match &config.bandwidth {
        BandwidthMode::Fixed(_) => Vec::new(),
        BandwidthMode::Auto { grid: Some(g) } => g.clone(),
        BandwidthMode::Auto { grid: None } => {
            let shortest = runs.iter().copied().min().unwrap_or(0);
            default_bandwidth_grid(shortest, design.m())
        }
    };

    let (mut smoother, mut selection, mut fit) = match config.bandwidth {
        BandwidthMode::Fixed(b) => {
            let sm = Smoother::for_runs(&runs, b, kernel)?;
            let fit = fit_gls(y, design, &sm, &initial_noise)?;
            (sm, None, fit)
        }
        BandwidthMode::Auto { .. } => {
            let pilot = pilot_smoother(&runs, &grid, kernel)?;
            let pilot_fit = fit_gls(y, design, &pilot, &initial_noise)?;
            let u = working_residual(y, design, &pilot_fit);
            let sel = select_bandwidth_gcv(&u, &runs, &grid, kernel)?;
            let sm = Smoother::for_runs(&runs, sel.bandwidth, kernel)?;
            let fit = fit_gls(y, design, &sm, &initial_noise)?;
            (sm, Some(sel), fit)
        }
    };

    let mut gamma = None;
    let mut shrinkage = None;
    let mut noise_fallback = false;
    if let NoiseMode::Estimate { g, iterations } = config.noise {
        for _ in 0..iterations {
            let u = working_residual(y, design, &fit);
            if selection.is_some() {
                let sel = select_bandwidth_gcv(&u, &runs, &grid, kernel)?;
                if sel.bandwidth != smoother.bandwidth() {
                    smoother = Smoother::for_runs(&runs, sel.bandwidth, kernel)?;
                }
                selection = Some(sel);
            }
            let est = estimate_noise(&u, &runs, g)?;
            fit = fit_gls(y, design, &smoother, &est.model)?;
            shrinkage = est.model.shrinkage();
            gamma = est.gamma;
            noise_fallback = est.fallback;
        }
    } else if let NoiseMode::Known(model) = &config.noise {
        shrinkage = model.shrinkage();
    }

    let energy: f64 = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let degenerate = energy == 0.0 || fit.sigma2_hat <= 1e-24 * energy;

    let k = test_k(&fit, hypothesis)?;
    let k_bc = test_k_bc(&fit, hypothesis)?;
    Ok(VoxelAnalysis {
        bandwidth: smoother.bandwidth(),
        fit,
        k,
        k_bc,
        selection,
        gamma,
        shrinkage,
        noise_fallback,
        degenerate,
    })
}

/// The grid's middle candidate, moving outwards until one is nonsingular.
fn pilot_smoother(runs: &[usize], grid: &[f64], kernel: Kernel) -> Result<Smoother> {
    if grid.is_empty() {
        return Err(Error::NoValidBandwidth);
    }
    let mid = grid.len() / 2;
    let order = (0..grid.len()).map(|d| {
        if d % 2 == 0 {
            mid + d / 2
        } else {
            mid.wrapping_sub(d / 2 + 1)
        }
    });
    let mut order: Vec<usize> = order.filter(|&i| i < grid.len()).collect();
    order.extend((0..grid.len()).rev());
    for i in order {
        match Smoother::for_runs(runs, grid[i], kernel) {
            Ok(sm) => return Ok(sm),
            Err(Error::SingularWindow { .. }) | Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoValidBandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{assemble_design, StimulusGrid};
    use crate::inference::{make_hypothesis, HypothesisKind};

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn setup(n: usize, m: usize) -> (DesignMatrix, HypothesisMatrix) {
        let train: Vec<u8> = lcg(n, 3).iter().map(|&u| (u > 0.0) as u8).collect();
        let grid = StimulusGrid::single(train, 1.0).unwrap();
        let design = assemble_design(&grid, m).unwrap();
        let a = make_hypothesis(&HypothesisKind::AllZero, 1, m).unwrap();
        (design, a)
    }

    #[test]
    fn zero_series_is_degenerate() {
        let (design, a) = setup(120, 4);
        let out = analyze_voxel(&vec![0.0; 120], &design, &a, &PipelineConfig::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.k.statistic, 0.0);
        assert!(out.noise_fallback);
    }

    #[test]
    fn default_pipeline_runs() {
        let (design, a) = setup(200, 5);
        let noise = lcg(200, 17);
        let y: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(i, e)| e + (i as f64 / 60.0).sin())
            .collect();
        let out = analyze_voxel(&y, &design, &a, &PipelineConfig::default()).unwrap();
        assert!(!out.degenerate);
        assert!(out.selection.is_some());
        assert!(out.k.statistic >= 0.0 && out.k_bc.statistic >= 0.0);
        assert!((0.0..=1.0).contains(&out.k.p_value));
    }

    #[test]
    fn fixed_bandwidth_and_white_noise() {
        let (design, a) = setup(150, 3);
        let y = lcg(150, 5);
        let cfg = PipelineConfig {
            bandwidth: BandwidthMode::Fixed(0.2),
            noise: NoiseMode::White,
            ..PipelineConfig::default()
        };
        let out = analyze_voxel(&y, &design, &a, &cfg).unwrap();
        assert_eq!(out.bandwidth, 0.2);
        assert!(out.gamma.is_none());
    }

    #[test]
    fn rejects_length_mismatch() {
        let (design, a) = setup(100, 3);
        assert!(matches!(
            analyze_voxel(&[1.0; 99], &design, &a, &PipelineConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
