//! `conecert`: prescreen, search, certify, probe robustness and simulate.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes.
pub mod code {
    pub const PASS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const SPECTRAL: i32 = 2;
    pub const GEOMETRIC: i32 = 3;
    pub const SEARCH: i32 = 4;
    pub const CERTIFY: i32 = 5;
}

#[derive(Parser, Debug)]
#[command(
    name = "conecert",
    version,
    about = "Cone search and LP certificates for strict K-cooperativity"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, env = "CONECERT_THREADS", global = true)]
    pub threads: Option<usize>,

    /// Write the run manifest here instead of stderr.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct SystemArgs {
    /// System JSON file, or one of the built-in names
    /// (paper-consensus-5, paper-consensus-5-second-order, paper-duffing).
    pub system: String,

    /// Time constant for second-order consensus (shorthand for `--set tau=...`).
    #[arg(long)]
    pub tau: Option<f64>,

    /// Built-in parameter override, e.g. `--set c=8`. Values are parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Spectral and geometric necessary conditions.
    Necessary {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = conecert::spectral::DEFAULT_GAP_TOL)]
        gap_tol: f64,
        /// Sampled Jacobians checked against the relaxation (built-ins only).
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Half-width of the state box for sampling.
        #[arg(long, default_value_t = 3.0)]
        sample_box: f64,
        #[arg(long, env = "CONECERT_SEED", default_value_t = 0)]
        seed: u64,
        /// Report file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for a certified polyhedral cone.
    FindCone {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, env = "CONECERT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long, default_value_t = 0.5)]
        tau_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        widen_scale: f64,
        #[arg(long, default_value_t = 1)]
        test_interval: usize,
        #[arg(long, default_value_t = 20_000)]
        max_rays: usize,
        #[arg(long, default_value_t = 0.1)]
        init_epsilon: f64,
        #[arg(long, default_value_t = conecert::certify::DEFAULT_T_TOL)]
        t_tol: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Certify a family against a given cone.
    Certify {
        #[command(flatten)]
        sys: SystemArgs,
        /// Cone JSON file.
        cone: PathBuf,
        #[arg(long, default_value_t = conecert::certify::DEFAULT_T_TOL)]
        t_tol: f64,
        /// Certificate file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interval of one parameter over which a cone stays certified.
    Robust {
        #[command(flatten)]
        sys: SystemArgs,
        cone: PathBuf,
        /// Parameter index or name (alpha, kp, f15, f42 for the built-ins).
        #[arg(long)]
        free_param: String,
        /// Starting value (default: midpoint of the parameter's vertex range).
        #[arg(long, allow_hyphen_values = true)]
        seed_value: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        resolution: f64,
        #[arg(long, default_value_t = -1e3, allow_hyphen_values = true)]
        lower_cap: f64,
        #[arg(long, default_value_t = 1e3, allow_hyphen_values = true)]
        upper_cap: f64,
        #[arg(long, default_value_t = conecert::certify::DEFAULT_T_TOL)]
        t_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate trajectories of a built-in system and classify their limits.
    Simulate {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_enum, default_value_t = X0Mode::Random)]
        x0_mode: X0Mode,
        /// JSON list of initial states (with `--x0-mode file`).
        #[arg(long)]
        x0_file: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n_traj: usize,
        /// Random initial states are uniform in `[-x0-box, x0-box]^n`.
        #[arg(long, default_value_t = 2.0)]
        x0_box: f64,
        #[arg(long, default_value_t = conecert::sim::DEFAULT_DT)]
        dt: f64,
        #[arg(long = "t-final", alias = "T", default_value_t = 50.0)]
        t_final: f64,
        /// Keep every k-th sample in the CSV files.
        #[arg(long, default_value_t = 10)]
        csv_stride: usize,
        #[arg(long, env = "CONECERT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum X0Mode {
    Random,
    File,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE as u8 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(code::USAGE as u8);
        }
    }
    let status = match commands::run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            code::USAGE
        }
    };
    ExitCode::from(status as u8)
}
