use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "spfmri",
    version,
    about = "Semiparametric fMRI activation detection"
)]
struct Cli {
    /// Master seed for every stochastic command
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Flat key = value file mirroring the long flags; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic data
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Fit every voxel and write per-voxel statistics
    Fit(FitArgs),
    /// Benjamini-Hochberg activation map from a result table
    Map(MapArgs),
    /// Monte Carlo percentiles of K and K_bc against chi-square
    Qq(QqArgs),
    /// Asymptotic local power over a noncentrality grid
    Power(PowerArgs),
}

#[derive(Subcommand, Debug)]
enum SimulateCommand {
    /// One voxel: stimulus CSV, series CSV and truth JSON
    Voxel(SimVoxelArgs),
    /// Planted-region brain: FMRB1 grid, sidecar, stimulus and truth mask
    Brain(SimBrainArgs),
}

#[derive(Args, Debug)]
struct SimVoxelArgs {
    /// Output directory (must exist)
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 18)]
    m: usize,
    /// Noise level 1, 2, 4 or 8
    #[arg(long, default_value_t = 1)]
    snr_level: u32,
    /// Rescale the noise so var(S h) / var(e) equals this
    #[arg(long)]
    snr: Option<f64>,
    /// Comma-separated HRF of length m (zero when absent)
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.5)]
    stimulus_p: f64,
    /// AR coefficient of the autocorrelated noise component
    #[arg(long, default_value_t = spfmri_core::sim::DEFAULT_RHO)]
    rho: f64,
}

#[derive(Args, Debug)]
struct SimBrainArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// nx,ny,nz
    #[arg(long, value_delimiter = ',', default_values_t = [16, 16, 4])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 400)]
    nt: usize,
    #[arg(long, default_value_t = 18)]
    m: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NoiseKind {
    Estimate,
    White,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Series CSV (one column per voxel) or FMRB1 grid
    #[arg(long)]
    series: PathBuf,
    /// Stimulus CSV on the fine time grid
    #[arg(long)]
    stimulus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// HRF length in stimulus time steps
    #[arg(long)]
    m: usize,
    /// Stimulus resolution in seconds
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Keep every k-th design row when the TR is k stimulus steps
    #[arg(long, default_value_t = 1)]
    decimation: usize,
    #[arg(long, default_value_t = 0)]
    phase: usize,
    /// `auto`, a rescaled bandwidth in (0, 1), or seconds such as `60s`
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Comma-separated candidates for `auto`
    #[arg(long, value_delimiter = ',')]
    bandwidth_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = NoiseKind::Estimate)]
    noise: NoiseKind,
    /// Noise band g
    #[arg(long, default_value_t = 2)]
    noise_g: usize,
    /// Noise re-estimation passes
    #[arg(long, default_value_t = 1)]
    noise_iters: usize,
    /// `all` or `contrast:J1,J2` (1-based stimulus types)
    #[arg(long, default_value = "all")]
    hypothesis: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    K,
    Kbc,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long, value_enum, default_value_t = Variant::Kbc)]
    variant: Variant,
    /// Truth mask CSV for scoring recall and false-discovery proportion
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum QqKind {
    Estimated,
    Oracle,
}

#[derive(Args, Debug)]
struct QqArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 18)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    snr_level: u32,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = Variant::Kbc)]
    statistic: Variant,
    #[arg(long, value_enum, default_value_t = QqKind::Estimated)]
    mode: QqKind,
    /// Fixed bandwidth for the oracle mode
    #[arg(long, default_value_t = 0.3)]
    oracle_bandwidth: f64,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    out: PathBuf,
    /// Rows of the hypothesis
    #[arg(long)]
    k: usize,
    /// Comma-separated noncentralities
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0])]
    tau2: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let merged = config::load_and_merge(&args).map_err(Failure::input)?;
    let cli = match Cli::try_parse_from(&merged) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage(anyhow::anyhow!("thread pool: {e}")))?;
    }
    let invocation = merged.join(" ");
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(SimulateCommand::Voxel(a)) => {
            commands::simulate_voxel(&a, seed, &invocation)
        }
        Command::Simulate(SimulateCommand::Brain(a)) => {
            commands::simulate_brain(&a, seed, &invocation)
        }
        Command::Fit(a) => commands::fit(&a, &invocation),
        Command::Map(a) => commands::map(&a, &invocation),
        Command::Qq(a) => commands::qq(&a, seed, &invocation),
        Command::Power(a) => commands::power(&a, &invocation),
    }
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message above them.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
