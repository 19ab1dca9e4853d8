use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resmob::config::PipelineConfig;
use resmob::pipeline::{error_record, Manifest, Pipeline};
use resmob::{Error, Result};

#[derive(Parser)]
#[command(name = "resmob", version, about = "Residence-mobility matrices from GPS pings, and multi-patch SEIRS runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Study window to process; repeat for several. Defaults to all configured windows.
    #[arg(long = "window")]
    windows: Vec<String>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse pings, select devices and write per-window trajectory stores.
    Ingest(Common),
    /// Assign each device a residence patch.
    Residence(Common),
    /// Fit Brownian-bridge parameters per device.
    Fit(Common),
    /// Occupation rows, mobility matrix and α/p decomposition.
    Matrix(Common),
    /// Distances between the matrices of the two parts of each period (or two given windows).
    Distance(Common),
    /// SEIRS run driven by each window's α/p estimates.
    Simulate(Common),
    /// Infection difference curves between simulations.
    Diff(Common),
    /// Generate a synthetic city: pings, patches and ground truth.
    Synth(Common),
    /// ingest, residence, fit, matrix and simulate, then distance and diff.
    Run(Common),
}

fn setup(c: &Common) -> Result<Pipeline> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.paths.out = out.clone();
    }
    Pipeline::new(cfg)
}

fn per_window(p: &Pipeline, names: &[String], f: impl Fn(&Pipeline, &str) -> Result<Manifest>) -> Result<Vec<Manifest>> {
    p.resolve_windows(names)?.iter().map(|w| f(p, &w.name)).collect()
}

fn run(cli: Cli) -> Result<Vec<Manifest>> {
    match cli.command {
        Command::Ingest(c) => {
            let p = setup(&c)?;
            let ws = p.resolve_windows(&c.windows)?;
            p.ingest(&ws)
        }
        Command::Residence(c) => per_window(&setup(&c)?, &c.windows, Pipeline::residence),
        Command::Fit(c) => per_window(&setup(&c)?, &c.windows, Pipeline::fit),
        Command::Matrix(c) => per_window(&setup(&c)?, &c.windows, Pipeline::matrix),
        Command::Simulate(c) => per_window(&setup(&c)?, &c.windows, Pipeline::simulate),
        Command::Distance(c) => Ok(vec![setup(&c)?.distance(&c.windows)?]),
        Command::Diff(c) => Ok(vec![setup(&c)?.diff(&c.windows)?]),
        Command::Synth(c) => Ok(vec![setup(&c)?.synth()?]),
        Command::Run(c) => setup(&c)?.run_all(&c.windows),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(manifests) => {
            for m in manifests {
                let window = m.window.as_deref().map(|w| format!(" [{w}]")).unwrap_or_default();
                eprintln!("{}{window}: {} file(s) in {:.2}s", m.command, m.outputs.len(), m.wall_time_seconds);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(2)
        }
    }
}
