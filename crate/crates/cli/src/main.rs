//! Command-line front end for the subspace-perturbation simulator.
//!
//! Three commands: `run` executes an experiment sweep and writes trace CSVs
//! plus a manifest, `plot` renders trace CSVs into an SVG line chart, and
//! `audit` estimates per-iteration information leakage under an adversary
//! model. Exit codes: 0 success, 2 usage/config problems, 3 numerical
//! failures (divergence, singular systems).

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subspace_perturb::harness::{
    run_audit, run_experiment, write_outputs, AuditConfig, ExperimentConfig,
};
use subspace_perturb::Error;

#[derive(Parser)]
#[command(
    name = "subspace-perturb",
    version,
    about = "Privacy-preserving distributed optimization via dual-subspace noise insertion"
)]
struct Cli {
    /// Worker threads for sweeps and Monte Carlo trials.
    #[arg(long, global = true, env = "SUBSPACE_PERTURB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep; writes one CSV per cell and a manifest.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dual-initialization seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render trace CSVs as an SVG line chart.
    Plot {
        /// Plot spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output file override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate per-iteration information leakage; writes a report as JSON
    /// and CSV.
    Audit {
        /// Audit config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte Carlo seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out.as_deref(), *seed),
        Command::Plot { config, out } => cmd_plot(config, out.as_deref()),
        Command::Audit { config, out, seed } => cmd_audit(config, out.as_deref(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(seed) = seed {
        cfg.dual_init.seed = seed;
    }
    let traces = run_experiment(&cfg)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let manifest = write_outputs(&cfg, &traces, &out_dir)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_plot(config: &Path, out: Option<&Path>) -> Result<(), Error> {
    let spec: plot::PlotSpec = read_json(config)?;
    let path = plot::render(&spec, out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_audit(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg: AuditConfig = read_json(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = run_audit(&cfg)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&out_dir)?;
    let json_path = out_dir.join(format!("{}_leakage.json", cfg.output.prefix));
    let csv_path = out_dir.join(format!("{}_leakage.csv", cfg.output.prefix));
    fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    fs::write(&csv_path, report.to_csv_string())?;
    for node in &report.nodes {
        let bound = if node.lower_bound_bits.is_sentinel() {
            "inf".to_string()
        } else {
            format!("{:.4}", node.lower_bound_bits.0)
        };
        println!(
            "node {:>3}: condition16={} lower_bound_bits={} component_size={}",
            node.node, node.condition16_satisfied, bound, node.component_size
        );
    }
    println!("{}", json_path.display());
    Ok(())
}
