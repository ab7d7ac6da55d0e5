use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use msfv_cli::bench::scaling_benchmark;
use msfv_cli::experiment::{run_experiment, run_forward};
use msfv_cli::ExperimentConfig;
use msfv_core::SensitivityMode;

#[derive(Parser)]
#[command(name = "msfv", version, about = "Multiscale-reduced DC resistivity inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// full, ms-fixed or ms-adaptive. Overrides the configured modes.
    #[arg(long)]
    mode: Option<String>,
    /// direct or blockcg.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate data at the true model.
    Forward(Common),
    /// Invert noisy synthetic data in the configured modes.
    Invert(Common),
    /// Time basis assembly and derivative products at 1, 2, 4, ... workers.
    Bench(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(m) = &c.mode {
        cfg.modes = vec![m.clone()];
    }
    if let Some(s) = &c.solver {
        cfg.solver = s.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward(c) => {
            let cfg = load(&c)?;
            let mode: SensitivityMode = cfg.modes[0].parse()?;
            let data = run_forward(&cfg, mode)?;
            println!("{} data: {} receivers x {} sources -> {}", mode.name(), data.nrows(), data.ncols(), cfg.out.display());
        }
        Command::Invert(c) => {
            let cfg = load(&c)?;
            let summary = run_experiment(&cfg)?;
            println!("baseline (full, direct): {:.2}s", summary.baseline.seconds);
            for r in &summary.modes {
                println!(
                    "{}: relative error {:.3e}, k = {}, {:.2}s",
                    r.mode.name(),
                    r.relative_error,
                    r.k.map_or("fine".into(), |k| k.to_string()),
                    r.seconds
                );
            }
            println!("outputs in {}", cfg.out.display());
        }
        Command::Bench(c) => {
            let cfg = load(&c)?;
            let counts: Vec<usize> = std::iter::successors(Some(1usize), |w| Some(w * 2)).take_while(|&w| w <= cfg.workers).collect();
            let report = scaling_benchmark(cfg.cells, cfg.block, &counts, 3, cfg.seed)?;
            let table = report.table();
            print!("{table}");
            std::fs::create_dir_all(&cfg.out)?;
            std::fs::write(cfg.out.join("bench.txt"), table).context("cannot write bench table")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
