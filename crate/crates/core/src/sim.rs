//! Synthetic single-voxel experiments, Monte Carlo calibration studies and a
//! planted-region synthetic brain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{assemble_design, build_toeplitz, StimulusGrid};
use crate::error::{Error, Result};
use crate::inference::{make_hypothesis, HypothesisKind, HypothesisMatrix};
use crate::noise::NoiseModel;
use crate::pipeline::{analyze_voxel, BandwidthMode, NoiseMode, PipelineConfig};
use crate::smoother::Kernel;
use crate::stats::{chi2_quantile, sample_quantile};

/// Innovation variances of the four standard noise levels, indexed by the
/// nominal SNR levels 1, 2, 4 and 8.
pub const NOISE_LEVELS: [(u32, f64); 4] = [
    (1, 0.5216 * 0.5216),
    (2, 0.3689 * 0.3689),
    (4, 0.2608 * 0.2608),
    (8, 0.1844 * 0.1844),
];

/// AR coefficient of the correlated noise component.
pub const DEFAULT_RHO: f64 = 0.638;

pub fn noise_level(snr_level: u32) -> Result<f64> {
    NOISE_LEVELS
        .iter()
        .find(|(l, _)| *l == snr_level)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Domain(format!("SNR level must be 1, 2, 4 or 8, got {snr_level}")))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. Bernoulli(`p`) train.
pub fn gen_stimulus(n: usize, p: f64, seed: u64) -> Result<Vec<u8>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "stimulus rate must lie in (0, 1), got {p}"
        )));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n).map(|_| rng.random_bool(p) as u8).collect())
}

/// Mutually exclusive trains: at each time at most one type is on, type `j`
/// with probability `probs[j]`.
pub fn gen_categorical_stimulus(n: usize, probs: &[f64], seed: u64) -> Result<Vec<Vec<u8>>> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|&p| !(p > 0.0)) || total >= 1.0 {
        return Err(Error::Domain(
            "type probabilities must be positive with sum below 1".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut trains = vec![vec![0u8; n]; probs.len()];
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                trains[j][i] = 1;
                break;
            }
        }
    }
    Ok(trains)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub amplitude: f64,
    pub phase: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            amplitude: 10.0,
            phase: 0.21,
        }
    }
}

/// `amplitude * sin(pi (t_i - phase))` at `t_i = i / n`, `i = 1..=n`.
pub fn gen_drift(n: usize, spec: DriftSpec) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            spec.amplitude * (std::f64::consts::PI * (t - spec.phase)).sin()
        })
        .collect()
}

/// Stationary noise processes used by the simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseProcess {
    /// `eps1 + eps2`: white `N(0, v)` plus an AR(1) with coefficient `rho`
    /// and `N(0, v)` innovations, started from its stationary law.
    Mixture { v: f64, rho: f64 },
    /// `z_t + theta_1 z_{t-1} + ... + theta_q z_{t-q}` with `z ~ N(0, sigma2)`.
    MovingAverage { theta: Vec<f64>, sigma2: f64 },
}

impl NoiseProcess {
    pub fn mixture(v: f64) -> Self {
        NoiseProcess::Mixture {
            v,
            rho: DEFAULT_RHO,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NoiseProcess::Mixture { v, rho } => {
                if !(*v > 0.0) {
                    return Err(Error::Domain(format!(
                        "noise variance must be positive, got {v}"
                    )));
                }
                if !(rho.abs() < 1.0) {
                    return Err(Error::Domain(format!("|rho| must be below 1, got {rho}")));
                }
            }
            NoiseProcess::MovingAverage { theta, sigma2 } => {
                if !(*sigma2 > 0.0) || theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Domain("invalid moving-average parameters".into()));
                }
            }
        }
        Ok(())
    }

    /// Theoretical autocovariance at `lag`.
    pub fn autocov(&self, lag: usize) -> f64 {
        match self {
            NoiseProcess::Mixture { v, rho } => {
                let ar = v * rho.powi(lag as i32) / (1.0 - rho * rho);
                if lag == 0 {
                    v + ar
                } else {
                    ar
                }
            }
            NoiseProcess::MovingAverage { theta, sigma2 } => {
                let mut coef = vec![1.0];
                coef.extend_from_slice(theta);
                if lag >= coef.len() {
                    return 0.0;
                }
                sigma2
                    * (0..coef.len() - lag)
                        .map(|i| coef[i] * coef[i + lag])
                        .sum::<f64>()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        self.autocov(0)
    }

    /// Same correlation structure with variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            NoiseProcess::Mixture { v, rho } => NoiseProcess::Mixture {
                v: v * factor,
                rho: *rho,
            },
            NoiseProcess::MovingAverage { theta, sigma2 } => NoiseProcess::MovingAverage {
                theta: theta.clone(),
                sigma2: sigma2 * factor,
            },
        }
    }

    pub fn generate(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            NoiseProcess::Mixture { v, rho } => {
                let sd = v.sqrt();
                let mut ar = sd / (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    if i > 0 {
                        ar = rho * ar + sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    let white = sd * rng.sample::<f64, _>(StandardNormal);
                    out.push(white + ar);
                }
                Ok(out)
            }
            NoiseProcess::MovingAverage { theta, sigma2 } => {
                let sd = sigma2.sqrt();
                let q = theta.len();
                let z: Vec<f64> = (0..n + q)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Ok((0..n)
                    .map(|i| {
                        let t = i + q;
                        z[t] + theta
                            .iter()
                            .enumerate()
                            .map(|(j, th)| th * z[t - j - 1])
                            .sum::<f64>()
                    })
                    .collect())
            }
        }
    }

    /// Banded model holding the true autocovariances, truncated after the
    /// last lag whose correlation exceeds `tol`.
    pub fn oracle_model(&self, runs: &[usize], tol: f64) -> Result<NoiseModel> {
        let gamma0 = self.variance();
        let max_lag = match self {
            NoiseProcess::MovingAverage { theta, .. } => theta.len(),
            NoiseProcess::Mixture { .. } => {
                (1..)
                    .find(|&l| (self.autocov(l) / gamma0).abs() <= tol)
                    .expect("AR correlations decay")
                    - 1
            }
        };
        let gamma: Vec<f64> = (0..=max_lag).map(|l| self.autocov(l)).collect();
        NoiseModel::from_autocov(&gamma, runs)
    }
}

/// Mixture noise of length `n` with innovation variance `v`.
pub fn gen_noise(n: usize, v: f64, rho: f64, seed: u64) -> Result<Vec<f64>> {
    NoiseProcess::Mixture { v, rho }.generate(n, &mut seeded_rng(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelSimConfig {
    pub n: usize,
    pub m: usize,
    pub stimulus_p: f64,
    pub drift: DriftSpec,
    pub noise: NoiseProcess,
    /// When set, the noise variance is rescaled so that `var(S h)` over the
    /// theoretical noise variance equals this value.
    pub snr_target: Option<f64>,
    pub h: Vec<f64>,
    pub seed: u64,
}

impl VoxelSimConfig {
    /// Null configuration at one of the standard noise levels.
    pub fn null(n: usize, m: usize, snr_level: u32, seed: u64) -> Result<Self> {
        Ok(VoxelSimConfig {
            n,
            m,
            stimulus_p: 0.5,
            drift: DriftSpec::default(),
            noise: NoiseProcess::mixture(noise_level(snr_level)?),
            snr_target: None,
            h: vec![0.0; m],
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimVoxel {
    pub y: Vec<f64>,
    pub stimulus: Vec<u8>,
    pub h: Vec<f64>,
    pub signal: Vec<f64>,
    pub drift: Vec<f64>,
    pub noise: Vec<f64>,
    /// Noise process actually used, after any SNR rescaling.
    pub noise_process: NoiseProcess,
    /// Theoretical `gamma(0..=2)`.
    pub autocov: Vec<f64>,
    /// `var(S h)` over the theoretical noise variance.
    pub snr: f64,
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn gen_voxel(config: &VoxelSimConfig) -> Result<SimVoxel> {
    if config.m == 0 || config.n <= config.m {
        return Err(Error::InvalidDimension(format!(
            "need n > m >= 1, got n = {}, m = {}",
            config.n, config.m
        )));
    }
    if config.h.len() != config.m {
        return Err(Error::DimensionMismatch {
            expected: config.m,
            found: config.h.len(),
        });
    }
    config.noise.validate()?;
    let stimulus = gen_stimulus(config.n, config.stimulus_p, derive_seed(config.seed, 0))?;
    let s = build_toeplitz(&stimulus, config.m)?;
    let signal: Vec<f64> = (&s * nalgebra::DVector::from_column_slice(&config.h))
        .iter()
        .copied()
        .collect();
    let signal_var = population_variance(&signal);

    let noise_process = match config.snr_target {
        Some(t) if !(t >= 0.0) => {
            return Err(Error::InconsistentConfig(format!(
                "SNR target must be >= 0, got {t}"
            )))
        }
        Some(t) if t > 0.0 => {
            if signal_var == 0.0 {
                return Err(Error::InconsistentConfig(
                    "positive SNR target with zero signal".into(),
                ));
            }
            let target_var = signal_var / t;
            config.noise.scaled(target_var / config.noise.variance())
        }
        _ => config.noise.clone(),
    };
    let noise = noise_process.generate(config.n, &mut seeded_rng(derive_seed(config.seed, 1)))?;
    let drift = gen_drift(config.n, config.drift);
    let y = signal
        .iter()
        .zip(&drift)
        .zip(&noise)
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok(SimVoxel {
        y,
        stimulus,
        h: config.h.clone(),
        snr: signal_var / noise_process.variance(),
        autocov: (0..=2).map(|l| noise_process.autocov(l)).collect(),
        noise_process,
        signal,
        drift,
        noise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum QqMode {
    /// Estimated noise correlation and GCV bandwidth.
    Estimated,
    /// True noise correlation and a fixed bandwidth.
    Oracle { bandwidth: f64 },
}

#[derive(Debug, Clone)]
pub struct QqConfig {
    /// Template; its seed is the master seed of the study.
    pub voxel: VoxelSimConfig,
    pub reps: usize,
    pub mode: QqMode,
    pub hypothesis: HypothesisKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqTable {
    pub df: usize,
    /// 1, 2, ..., 99.
    pub percentiles: Vec<u32>,
    pub theoretical: Vec<f64>,
    pub empirical_k: Vec<f64>,
    pub empirical_k_bc: Vec<f64>,
    pub k_samples: Vec<f64>,
    pub k_bc_samples: Vec<f64>,
    /// Replications whose fit failed.
    pub failures: usize,
}

impl QqTable {
    /// Sum of `|empirical - theoretical|` over the percentile grid.
    pub fn total_deviation(&self, bias_corrected: bool) -> f64 {
        let emp = if bias_corrected {
            &self.empirical_k_bc
        } else {
            &self.empirical_k
        };
        emp.iter()
            .zip(&self.theoretical)
            .map(|(e, t)| (e - t).abs())
            .sum()
    }
}

/// Statistics for replication `rep` of a study.
pub fn qq_replication(
    config: &QqConfig,
    hypothesis: &HypothesisMatrix,
    rep: usize,
) -> Result<(f64, f64)> {
    let mut voxel = config.voxel.clone();
    voxel.seed = derive_seed(config.voxel.seed, rep as u64);
    let sim = gen_voxel(&voxel)?;
    let grid = StimulusGrid::single(sim.stimulus.clone(), 1.0)?;
    let design = assemble_design(&grid, voxel.m)?;
    let pipeline = match config.mode {
        QqMode::Estimated => PipelineConfig::default(),
        QqMode::Oracle { bandwidth } => PipelineConfig {
            kernel: Kernel::Epanechnikov,
            bandwidth: BandwidthMode::Fixed(bandwidth),
            noise: NoiseMode::Known(sim.noise_process.oracle_model(design.runs(), 1e-10)?),
        },
    };
    let out = analyze_voxel(&sim.y, &design, hypothesis, &pipeline)?;
    Ok((out.k.statistic, out.k_bc.statistic))
}

/// Monte Carlo percentiles of `K` and `K_bc` against the chi-square law.
pub fn run_qq_study(config: &QqConfig) -> Result<QqTable> {
    if config.reps < 100 {
        return Err(Error::Domain(format!(
            "a QQ study needs at least 100 replications, got {}",
            config.reps
        )));
    }
    let hypothesis = make_hypothesis(&config.hypothesis, 1, config.voxel.m)?;
    let results: Vec<Result<(f64, f64)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| qq_replication(config, &hypothesis, rep))
        .collect();
    let mut k_samples = Vec::with_capacity(config.reps);
    let mut k_bc_samples = Vec::with_capacity(config.reps);
    let mut failures = 0;
    for r in results {
        match r {
            Ok((k, kbc)) => {
                k_samples.push(k);
                k_bc_samples.push(kbc);
            }
            Err(e) => {
                log::warn!("replication failed: {e}");
                failures += 1;
            }
        }
    }
    if k_samples.is_empty() {
        return Err(Error::Domain("every replication failed".into()));
    }
    let df = hypothesis.k();
    let percentiles: Vec<u32> = (1..=99).collect();
    let theoretical = percentiles
        .iter()
        .map(|&p| chi2_quantile(p as f64 / 100.0, df as f64))
        .collect::<Result<Vec<_>>>()?;
    let table_of = |samples: &[f64]| {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        percentiles
            .iter()
            .map(|&p| sample_quantile(&sorted, p as f64 / 100.0))
            .collect::<Vec<_>>()
    };
    Ok(QqTable {
        df,
        empirical_k: table_of(&k_samples),
        empirical_k_bc: table_of(&k_bc_samples),
        percentiles,
        theoretical,
        k_samples,
        k_bc_samples,
        failures,
    })
}

/// Difference-of-gammas response sampled at `t = l * dt`, `l = 0..m`,
/// normalised to unit peak.
pub fn canonical_hrf(m: usize, dt: f64) -> Vec<f64> {
    let gamma_pdf = |t: f64, shape: f64| {
        if t <= 0.0 {
            0.0
        } else {
            ((shape - 1.0) * t.ln() - t - statrs::function::gamma::ln_gamma(shape)).exp()
        }
    };
    let raw: Vec<f64> = (0..m)
        .map(|l| {
            let t = l as f64 * dt;
            gamma_pdf(t, 6.0) - gamma_pdf(t, 16.0) / 6.0
        })
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        raw
    }
}

/// Axis-aligned box `[lo, hi)` of active voxels with an HRF scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub scale: f64,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] < self.hi[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainConfig {
    pub dims: [usize; 3],
    pub nt: usize,
    pub m: usize,
    pub stimulus_p: f64,
    /// Sampling interval of the HRF profile in seconds.
    pub hrf_dt: f64,
    /// Peak of the unscaled HRF.
    pub hrf_amplitude: f64,
    pub regions: Vec<Region>,
    /// Variance map `base * (1 + gradient * x / (nx - 1))`.
    pub variance_base: f64,
    pub variance_gradient: f64,
    /// Noise variance as a fraction of the variance map.
    pub noise_fraction: f64,
    pub rho: f64,
    pub drift_bank_size: usize,
    pub drift_amplitude: f64,
    pub seed: u64,
}

impl BrainConfig {
    /// Two disjoint planted regions with scales 0.17 and 0.12.
    pub fn standard(dims: [usize; 3], nt: usize, seed: u64) -> Self {
        let [nx, ny, nz] = dims;
        let regions = if nx >= 4 && ny >= 4 {
            vec![
                Region {
                    lo: [nx / 8, ny / 8, 0],
                    hi: [nx / 8 + nx / 4, ny / 8 + ny / 4, nz.div_ceil(2)],
                    scale: 0.17,
                },
                Region {
                    lo: [nx / 2 + nx / 8, ny / 2 + ny / 8, nz / 2],
                    hi: [nx / 2 + nx / 8 + nx / 4, ny / 2 + ny / 8 + ny / 4, nz],
                    scale: 0.12,
                },
            ]
        } else {
            Vec::new()
        };
        BrainConfig {
            dims,
            nt,
            m: 18,
            stimulus_p: 0.5,
            hrf_dt: 1.5,
            hrf_amplitude: 10.0,
            regions,
            variance_base: 1.0,
            variance_gradient: 0.5,
            noise_fraction: 0.2,
            rho: DEFAULT_RHO,
            drift_bank_size: 8,
            drift_amplitude: 2.0,
            seed,
        }
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear index with x fastest.
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn voxel_coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// HRF scale at each voxel; zero outside every region.
    pub fn scale_map(&self) -> Result<Vec<f64>> {
        for r in &self.regions {
            if (0..3).any(|a| r.lo[a] >= r.hi[a] || r.hi[a] > self.dims[a]) {
                return Err(Error::InvalidRegion(format!(
                    "box {:?}..{:?} is empty or outside {:?}",
                    r.lo, r.hi, self.dims
                )));
            }
            if !(r.scale.is_finite()) {
                return Err(Error::InvalidRegion("non-finite scale".into()));
            }
        }
        let mut map = vec![0.0; self.num_voxels()];
        for (idx, slot) in map.iter_mut().enumerate() {
            let [x, y, z] = self.voxel_coords(idx);
            let mut scale: Option<f64> = None;
            for r in self.regions.iter().filter(|r| r.contains(x, y, z)) {
                match scale {
                    Some(s) if s != r.scale => {
                        return Err(Error::InvalidRegion(format!(
                            "voxel ({x}, {y}, {z}) has conflicting scales {s} and {}",
                            r.scale
                        )))
                    }
                    _ => scale = Some(r.scale),
                }
            }
            *slot = scale.unwrap_or(0.0);
        }
        Ok(map)
    }

    pub fn variance_at(&self, x: usize) -> f64 {
        let nx = self.dims[0];
        let frac = if nx > 1 {
            x as f64 / (nx - 1) as f64
        } else {
            0.0
        };
        self.variance_base * (1.0 + self.variance_gradient * frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Brain {
    pub dims: [usize; 3],
    pub nt: usize,
    pub stimulus: Vec<u8>,
    pub hrf: Vec<f64>,
    /// One series per voxel in linear (x fastest) order.
    pub series: Vec<Vec<f64>>,
    pub truth: Vec<bool>,
    pub scales: Vec<f64>,
}

fn drift_bank(config: &BrainConfig) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(derive_seed(config.seed, 2));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..config.drift_bank_size.max(1))
        .map(|_| {
            let terms: Vec<(f64, f64, f64)> = (1..=3)
                .map(|f| {
                    let amp = config.drift_amplitude / f as f64 * normal.sample(&mut rng);
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    (f as f64, amp, phase)
                })
                .collect();
            (1..=config.nt)
                .map(|i| {
                    let t = i as f64 / config.nt as f64;
                    terms
                        .iter()
                        .map(|(f, a, ph)| a * (std::f64::consts::PI * f * t + ph).sin())
                        .sum()
                })
                .collect()
        })
        .collect()
}

pub fn gen_brain(config: &BrainConfig) -> Result<Brain> {
    if config.num_voxels() == 0 {
        return Err(Error::InvalidDimension("brain has no voxels".into()));
    }
    if config.m == 0 || config.nt <= config.m {
        return Err(Error::InvalidDimension(format!(
            "need nt > m >= 1, got nt = {}, m = {}",
            config.nt, config.m
        )));
    }
    if !(config.noise_fraction > 0.0) || !(config.variance_base > 0.0) {
        return Err(Error::Domain("noise variance must be positive".into()));
    }
    let scales = config.scale_map()?;
    let stimulus = gen_stimulus(config.nt, config.stimulus_p, derive_seed(config.seed, 0))?;
    let s = build_toeplitz(&stimulus, config.m)?;
    let hrf = canonical_hrf(config.m, config.hrf_dt);
    let base_signal = &s
        * nalgebra::DVector::from_iterator(config.m, hrf.iter().map(|v| v * config.hrf_amplitude));
    let bank = drift_bank(config);
    let mixture_factor = 1.0 + 1.0 / (1.0 - config.rho * config.rho);

    let series = (0..config.num_voxels())
        .into_par_iter()
        .map(|idx| {
            let [x, _, _] = config.voxel_coords(idx);
            let mut rng = seeded_rng(derive_seed(config.seed, 1000 + idx as u64));
            let drift = &bank[rng.random_range(0..bank.len())];
            let v = config.noise_fraction * config.variance_at(x) / mixture_factor;
            let noise =
                NoiseProcess::Mixture { v, rho: config.rho }.generate(config.nt, &mut rng)?;
            Ok((0..config.nt)
                .map(|t| scales[idx] * base_signal[t] + drift[t] + noise[t])
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Brain {
        dims: config.dims,
        nt: config.nt,
        stimulus,
        hrf,
        series,
        truth: scales.iter().map(|&s| s != 0.0).collect(),
        scales,
    })
}
