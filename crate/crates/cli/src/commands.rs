use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use spfmri_core::design::subsample_rows;
use spfmri_core::io::{
    read_fmrb1, read_p_column, read_rows, read_series_csv, read_stimulus_csv, write_fmrb1,
    write_json, write_rows, write_series_csv, write_stimulus_csv, GridSidecar, QValueRow,
    ResultRow, TruthRow, VoxelGrid, FMRB1_MAGIC,
};
use spfmri_core::sim::{
    gen_brain, gen_voxel, noise_level, run_qq_study, BrainConfig, DriftSpec, NoiseProcess,
    QqConfig, QqMode, VoxelSimConfig,
};
use spfmri_core::{
    analyze_voxel, assemble_design, asymptotic_power, bh_fdr, make_hypothesis, BandwidthMode,
    HypothesisKind, NoiseMode, PValueSet, PipelineConfig, StimulusGrid, VoxelAnalysis,
};

use crate::{
    FitArgs, MapArgs, NoiseKind, PowerArgs, QqArgs, QqKind, SimBrainArgs, SimVoxelArgs, Variant,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// An error paired with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    pub fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_NUMERICAL,
            error: error.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn header(invocation: &str) -> String {
    let mut parts = invocation.split(' ');
    parts.next();
    let rest: Vec<&str> = parts.collect();
    format!("spfmri {}", rest.join(" "))
}

fn require_dir(dir: &Path) -> CmdResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::input(anyhow!(
            "output directory {} does not exist",
            dir.display()
        )))
    }
}

pub(crate) fn simulate_voxel(a: &SimVoxelArgs, seed: u64, invocation: &str) -> CmdResult {
    require_dir(&a.out_dir)?;
    let v = noise_level(a.snr_level).map_err(Failure::usage)?;
    let h = a.h.clone().unwrap_or_else(|| vec![0.0; a.m]);
    if h.len() != a.m {
        return Err(Failure::usage(anyhow!(
            "--h has {} values but --m is {}",
            h.len(),
            a.m
        )));
    }
    let config = VoxelSimConfig {
        n: a.n,
        m: a.m,
        stimulus_p: a.stimulus_p,
        noise: NoiseProcess::Mixture { v, rho: a.rho },
        snr_target: a.snr,
        h,
        drift: DriftSpec::default(),
        seed,
    };
    let sim = gen_voxel(&config).map_err(Failure::usage)?;
    let comment = header(invocation);
    let grid = StimulusGrid::single(sim.stimulus.clone(), 1.0).map_err(Failure::numerical)?;
    write_stimulus_csv(&a.out_dir.join("stimulus.csv"), &grid, Some(&comment))
        .map_err(Failure::input)?;
    write_series_csv(
        &a.out_dir.join("series.csv"),
        &["voxel0".to_string()],
        std::slice::from_ref(&sim.y),
        Some(&comment),
    )
    .map_err(Failure::input)?;
    write_json(&a.out_dir.join("truth.json"), &sim).map_err(Failure::input)?;
    println!(
        "wrote stimulus.csv, series.csv and truth.json to {} (snr {:.4})",
        a.out_dir.display(),
        sim.snr
    );
    Ok(())
}

pub(crate) fn simulate_brain(a: &SimBrainArgs, seed: u64, invocation: &str) -> CmdResult {
    require_dir(&a.out_dir)?;
    let &[nx, ny, nz] = a.dims.as_slice() else {
        return Err(Failure::usage(anyhow!(
            "--dims needs three values nx,ny,nz"
        )));
    };
    let dims = [nx, ny, nz];
    let mut config = BrainConfig::standard(dims, a.nt, seed);
    config.m = a.m;
    let brain = gen_brain(&config).map_err(Failure::usage)?;
    let comment = header(invocation);

    let grid = VoxelGrid::from_series(dims, &brain.series).map_err(Failure::numerical)?;
    write_fmrb1(&a.out_dir.join("grid.fmrb"), &grid).map_err(Failure::input)?;
    let stim = StimulusGrid::single(brain.stimulus.clone(), 1.0).map_err(Failure::numerical)?;
    write_stimulus_csv(&a.out_dir.join("stimulus.csv"), &stim, Some(&comment))
        .map_err(Failure::input)?;
    let truth: Vec<TruthRow> = (0..config.num_voxels())
        .map(|idx| {
            let [x, y, z] = config.voxel_coords(idx);
            TruthRow {
                voxel: idx,
                x,
                y,
                z,
                active: brain.truth[idx] as u8,
                scale: brain.scales[idx],
            }
        })
        .collect();
    write_rows(&a.out_dir.join("truth.csv"), &truth, Some(&comment)).map_err(Failure::input)?;
    let sidecar = GridSidecar {
        tr: 1.0,
        stimulus: "stimulus.csv".into(),
        seed,
        truth_mask: Some("truth.csv".into()),
    };
    write_json(&a.out_dir.join("grid.json"), &sidecar).map_err(Failure::input)?;
    println!(
        "wrote grid.fmrb ({} voxels x {} samples), grid.json, stimulus.csv and truth.csv to {}",
        config.num_voxels(),
        a.nt,
        a.out_dir.display()
    );
    Ok(())
}

fn is_fmrb1(path: &Path) -> anyhow::Result<bool> {
    let mut head = [0u8; 6];
    let mut f = std::fs::File::open(path).with_context(|| format!("{}", path.display()))?;
    let read = f
        .read(&mut head)
        .with_context(|| format!("{}", path.display()))?;
    Ok(read == 6 && &head == FMRB1_MAGIC)
}

fn load_series(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    if is_fmrb1(path).map_err(Failure::input)? {
        let grid = read_fmrb1(path).map_err(Failure::input)?;
        Ok((0..grid.num_voxels()).map(|v| grid.series(v)).collect())
    } else {
        Ok(read_series_csv(path).map_err(Failure::input)?.1)
    }
}

fn parse_hypothesis(text: &str) -> Result<HypothesisKind, Failure> {
    if text == "all" {
        return Ok(HypothesisKind::AllZero);
    }
    let bad = || {
        Failure::usage(anyhow!(
            "hypothesis must be `all` or `contrast:J1,J2`, got {text:?}"
        ))
    };
    let spec = text.strip_prefix("contrast:").ok_or_else(bad)?;
    let (j1, j2) = spec.split_once(',').ok_or_else(bad)?;
    Ok(HypothesisKind::Contrast {
        j1: j1.trim().parse().map_err(|_| bad())?,
        j2: j2.trim().parse().map_err(|_| bad())?,
    })
}

/// `auto`, a rescaled value, or seconds divided by the shortest run duration.
fn parse_bandwidth(
    text: &str,
    grid: Option<Vec<f64>>,
    shortest_run_s: f64,
) -> Result<BandwidthMode, Failure> {
    let bad = |msg: String| Failure::usage(anyhow!(msg));
    if text == "auto" {
        return Ok(BandwidthMode::Auto { grid });
    }
    let b = if let Some(secs) = text.strip_suffix('s') {
        let secs: f64 = secs
            .parse()
            .map_err(|_| bad(format!("invalid bandwidth {text:?}")))?;
        secs / shortest_run_s
    } else {
        text.parse()
            .map_err(|_| bad(format!("invalid bandwidth {text:?}")))?
    };
    if !(b > 0.0 && b < 1.0) {
        return Err(bad(format!(
            "bandwidth {text} is {b} in rescaled units, outside (0, 1)"
        )));
    }
    Ok(BandwidthMode::Fixed(b))
}

fn result_row(voxel: usize, outcome: Result<VoxelAnalysis, spfmri_core::Error>) -> ResultRow {
    match outcome {
        Ok(out) => {
            let gamma = |j: usize| out.gamma.as_ref().and_then(|g| g.get(j).copied());
            let status = if out.degenerate {
                "degenerate"
            } else if out.noise_fallback {
                "white_fallback"
            } else {
                "ok"
            };
            ResultRow {
                voxel,
                k: Some(out.k.statistic),
                p_k: Some(out.k.p_value),
                k_bc: Some(out.k_bc.statistic),
                p_kbc: Some(out.k_bc.p_value),
                sigma2_hat: Some(out.fit.sigma2_hat),
                bandwidth: Some(out.bandwidth),
                gamma0: gamma(0),
                gamma1: gamma(1),
                gamma2: gamma(2),
                shrinkage: out.shrinkage.is_some() as u8,
                status: status.into(),
            }
        }
        Err(e) => ResultRow {
            voxel,
            k: None,
            p_k: None,
            k_bc: None,
            p_kbc: None,
            sigma2_hat: None,
            bandwidth: None,
            gamma0: None,
            gamma1: None,
            gamma2: None,
            shrinkage: 0,
            status: format!("failed:{}", e.to_string().replace(',', ";")),
        },
    }
}

pub(crate) fn fit(a: &FitArgs, invocation: &str) -> CmdResult {
    let grid = read_stimulus_csv(&a.stimulus, a.resolution).map_err(Failure::input)?;
    let series = load_series(&a.series)?;
    let design = assemble_design(&grid, a.m).map_err(Failure::usage)?;
    let design = subsample_rows(&design, a.decimation, a.phase).map_err(Failure::usage)?;
    let n = design.nrows();
    if let Some((idx, s)) = series.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(Failure::input(anyhow!(
            "voxel {idx} has {} samples but the decimated stimulus implies {n}",
            s.len()
        )));
    }
    let kind = parse_hypothesis(&a.hypothesis)?;
    let hypothesis = make_hypothesis(&kind, grid.num_types(), a.m).map_err(Failure::usage)?;
    let shortest_run_s = grid
        .run_lengths()
        .into_iter()
        .min()
        .map_or(1.0, |len| len as f64 * a.resolution);
    let config = PipelineConfig {
        bandwidth: parse_bandwidth(&a.bandwidth, a.bandwidth_grid.clone(), shortest_run_s)?,
        noise: match a.noise {
            NoiseKind::Estimate => NoiseMode::Estimate {
                g: a.noise_g,
                iterations: a.noise_iters,
            },
            NoiseKind::White => NoiseMode::White,
        },
        ..PipelineConfig::default()
    };
    let rows: Vec<ResultRow> = series
        .par_iter()
        .enumerate()
        .map(|(v, y)| result_row(v, analyze_voxel(y, &design, &hypothesis, &config)))
        .collect();
    write_rows(&a.out, &rows, Some(&header(invocation))).map_err(Failure::input)?;
    let failed = rows
        .iter()
        .filter(|r| r.status.starts_with("failed"))
        .count();
    let degenerate = rows.iter().filter(|r| r.status == "degenerate").count();
    println!(
        "fitted {} voxels: {} failed, {} degenerate",
        rows.len(),
        failed,
        degenerate
    );
    if failed == rows.len() {
        return Err(Failure::numerical(anyhow!("every voxel failed to fit")));
    }
    Ok(())
}

pub(crate) fn map(a: &MapArgs, invocation: &str) -> CmdResult {
    let column = match a.variant {
        Variant::K => "p_K",
        Variant::Kbc => "p_Kbc",
    };
    let entries = read_p_column(&a.results, column).map_err(Failure::input)?;
    let (labels, values): (Vec<usize>, Vec<f64>) = entries
        .iter()
        .filter_map(|&(v, p)| p.map(|p| (v, p)))
        .unzip();
    let untested = entries.len() - labels.len();
    let set = PValueSet::new(values, labels).map_err(Failure::input)?;
    let res = bh_fdr(&set, a.q).map_err(Failure::usage)?;
    let rows: Vec<QValueRow> = set
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &voxel)| QValueRow {
            voxel,
            p: set.values()[i],
            q: res.q_values[i],
            reject: res.reject[i] as u8,
        })
        .collect();
    write_rows(&a.out, &rows, Some(&header(invocation))).map_err(Failure::input)?;
    println!(
        "{} of {} voxels rejected at q = {} ({}), {} untested",
        res.num_rejected(),
        set.len(),
        a.q,
        column,
        untested
    );
    if let Some(truth_path) = &a.truth {
        let truth: Vec<TruthRow> = read_rows(truth_path).map_err(Failure::input)?;
        let active = |voxel: usize| truth.iter().any(|t| t.voxel == voxel && t.active == 1);
        let rejected: Vec<usize> = rows
            .iter()
            .filter(|r| r.reject == 1)
            .map(|r| r.voxel)
            .collect();
        let tp = rejected.iter().filter(|&&v| active(v)).count();
        let total_active = truth.iter().filter(|t| t.active == 1).count();
        let recall = if total_active > 0 {
            tp as f64 / total_active as f64
        } else {
            1.0
        };
        let fdp = if rejected.is_empty() {
            0.0
        } else {
            (rejected.len() - tp) as f64 / rejected.len() as f64
        };
        println!("recall {recall:.3}, false-discovery proportion {fdp:.3}");
    }
    Ok(())
}

#[derive(Serialize)]
struct QqRow {
    percentile: u32,
    empirical: f64,
    theoretical: f64,
}

pub(crate) fn qq(a: &QqArgs, seed: u64, invocation: &str) -> CmdResult {
    let config = QqConfig {
        voxel: VoxelSimConfig::null(a.n, a.m, a.snr_level, seed).map_err(Failure::usage)?,
        reps: a.reps,
        mode: match a.mode {
            QqKind::Estimated => QqMode::Estimated,
            QqKind::Oracle => QqMode::Oracle {
                bandwidth: a.oracle_bandwidth,
            },
        },
        hypothesis: HypothesisKind::AllZero,
    };
    if a.reps < 100 {
        return Err(Failure::usage(anyhow!("--reps must be at least 100")));
    }
    let table = run_qq_study(&config).map_err(Failure::numerical)?;
    let empirical = match a.statistic {
        Variant::K => &table.empirical_k,
        Variant::Kbc => &table.empirical_k_bc,
    };
    let rows: Vec<QqRow> = table
        .percentiles
        .iter()
        .zip(empirical)
        .zip(&table.theoretical)
        .map(|((&percentile, &empirical), &theoretical)| QqRow {
            percentile,
            empirical,
            theoretical,
        })
        .collect();
    let comment = format!(
        "{}\nfailed replications: {}",
        header(invocation),
        table.failures
    );
    write_rows(&a.out, &rows, Some(&comment)).map_err(Failure::input)?;
    println!(
        "{} replications, {} failed; total percentile deviation {:.2}",
        a.reps,
        table.failures,
        table.total_deviation(a.statistic == Variant::Kbc)
    );
    Ok(())
}

#[derive(Serialize)]
struct PowerRow {
    tau2: f64,
    power: f64,
}

pub(crate) fn power(a: &PowerArgs, invocation: &str) -> CmdResult {
    let rows = a
        .tau2
        .iter()
        .map(|&tau2| {
            asymptotic_power(a.k, tau2, a.alpha)
                .map(|power| PowerRow { tau2, power })
                .map_err(Failure::usage)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_rows(&a.out, &rows, Some(&header(invocation))).map_err(Failure::input)?;
    Ok(())
}
