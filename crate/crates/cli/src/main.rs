//! `wfident` — weak-form identifiability experiments from the command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand};

use config::RawConfig;

/// Bundled configuration presets, resolvable by bare name through --config.
const PRESETS: &[(&str, &str)] = &[
    (
        "example1-blood",
        include_str!("../presets/example1-blood.cfg"),
    ),
    ("example2-sir", include_str!("../presets/example2-sir.cfg")),
];

#[derive(Parser)]
#[command(
    name = "wfident",
    version,
    about = "Weak-form input-output parameter estimation and (e,q) practical-identifiability analysis"
)]
struct Cli {
    /// Configuration file path, or a bundled preset name
    /// (example1-blood, example2-sir).
    #[arg(long, global = true)]
    config: Option<String>,

    /// Output directory (created if missing).
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,

    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, or "auto".
    #[arg(long, default_value = "auto", global = true)]
    threads: String,

    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Estimator shorthand for `estimator = wendy|oe`.
    #[arg(long, global = true)]
    estimator: Option<String>,

    /// Noise shorthand for `noise.kind = additive|lognormal`.
    #[arg(long, global = true)]
    noise: Option<String>,

    /// Replicates shorthand for `sweep.replicates`.
    #[arg(long = "D", global = true)]
    replicates: Option<usize>,

    /// Error-ratio grid shorthand for `sweep.e_grid`.
    #[arg(long = "e-grid", global = true)]
    e_grid: Option<String>,

    /// Estimator-error-ratio grid shorthand for `sweep.q_grid`.
    #[arg(long = "q-grid", global = true)]
    q_grid: Option<String>,

    /// Include measured walltimes in the sweep CSV (breaks byte-level
    /// reproducibility of that file).
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the forward model and write the trajectory.
    Simulate,
    /// Estimate parameters from a single noisy dataset.
    Estimate,
    /// Monte Carlo sweep over error ratios with (e,q) map emission.
    Sweep,
    /// Alias of sweep focused on the identifiability map outputs.
    EqMap,
    /// Minimum-q scan over blood-model parameterizations.
    ParamScan,
    /// Test-function degree/radius grid search.
    HyperparamScan,
    /// Output-error baseline: timing comparison or profile likelihood.
    Baseline,
    /// SVD rank diagnostics of the basis and the assembled system.
    RankCheck,
    /// Alias of baseline timing comparison.
    Bench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut raw = match load_config(cli.config.as_deref()) {
        Ok(raw) => raw,
        Err(msg) => return fail(2, &msg),
    };

    // Flag shorthands become overrides, applied before --set so explicit
    // --set keys win.
    let mut overrides = Vec::new();
    if let Some(v) = cli.seed {
        overrides.push(format!("seed={v}"));
    }
    if let Some(v) = &cli.estimator {
        overrides.push(format!("estimator={v}"));
    }
    if let Some(v) = &cli.noise {
        overrides.push(format!("noise.kind={v}"));
    }
    if let Some(v) = cli.replicates {
        overrides.push(format!("sweep.replicates={v}"));
    }
    if let Some(v) = &cli.e_grid {
        overrides.push(format!("sweep.e_grid={v}"));
    }
    if let Some(v) = &cli.q_grid {
        overrides.push(format!("sweep.q_grid={v}"));
    }
    overrides.extend(cli.set.iter().cloned());
    if let Err(e) = raw.apply_overrides(&overrides) {
        return fail(2, &e.0);
    }

    let resolved = match config::resolve(&raw) {
        Ok(r) => r,
        Err(e) => return fail(2, &e.0),
    };

    let threads = match cli.threads.as_str() {
        "auto" => None,
        other => match other.parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => return fail(2, &format!("--threads expects 'auto' or a positive integer, got '{other}'")),
        },
    };

    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        return fail(1, &format!("cannot create output directory: {e}"));
    }

    let started = SystemTime::now();
    let run = || -> commands::CmdResult {
        let out = cli.out.as_path();
        match cli.command {
            Command::Simulate => commands::simulate(&resolved, out, started, threads),
            Command::Estimate => commands::estimate(&resolved, out, started, threads),
            Command::Sweep | Command::EqMap => {
                commands::sweep(&resolved, out, started, threads, cli.timing)
            }
            Command::ParamScan => commands::param_scan(&resolved, out, started, threads),
            Command::HyperparamScan => commands::hyperparam(&resolved, out, started, threads),
            Command::Baseline | Command::Bench => {
                commands::baseline(&resolved, out, started, threads)
            }
            Command::RankCheck => commands::rank_check(&resolved, out, started, threads),
        }
    };

    let outcome = match threads {
        Some(n) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool,
                Err(e) => return fail(1, &format!("cannot build thread pool: {e}")),
            };
            pool.install(run)
        }
        None => run(),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => fail(1, &msg),
    }
}

fn load_config(arg: Option<&str>) -> Result<RawConfig, String> {
    match arg {
        None => Ok(RawConfig::default()),
        Some(name) => {
            let bare = name.strip_suffix(".cfg").unwrap_or(name);
            if let Some((_, text)) = PRESETS.iter().find(|(k, _)| *k == bare) {
                if !std::path::Path::new(name).exists() {
                    return RawConfig::parse(text).map_err(|e| e.0);
                }
            }
            RawConfig::load(std::path::Path::new(name)).map_err(|e| e.0)
        }
    }
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("wfident: {msg}");
    ExitCode::from(code)
}
