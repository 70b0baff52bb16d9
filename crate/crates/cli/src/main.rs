use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skyear_cli::commands::{cmd_eval_detect, cmd_gen, cmd_mission, cmd_pretrain};
use skyear_cli::config::rho_sweep;
use skyear_cli::resolve_config;
use skyear_core::scene::Scenario;

#[derive(Parser)]
#[command(
    name = "skyear",
    version,
    about = "Synthetic UAV acoustic search: data, training, detection sweeps and missions"
)]
struct Cli {
    /// TOML run config; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// desert or forest.
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config as TOML.
    PrintConfig,
    /// Write noise and victim WAV clips with a manifest.
    Gen,
    /// Train the sentinel model(s) on the generated noise clips.
    Pretrain {
        /// Train all 17 mask ratios instead of the configured list.
        #[arg(long)]
        sweep: bool,
    },
    /// Detection accuracy per altitude and mask ratio.
    EvalDetect {
        /// Evaluate all 17 mask ratios instead of the configured list.
        #[arg(long)]
        sweep: bool,
    },
    /// Fly the search path and log every hover.
    Mission {
        /// Number of consecutive seeds to fly.
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(cli.config.as_deref(), cli.seed, cli.out, cli.scenario).map_err(anyhow::Error::msg)?;
    match cli.command {
        Command::PrintConfig => print!("{}", cfg.to_toml()),
        Command::Gen => {
            let dir = cmd_gen(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Pretrain { sweep } => {
            if sweep {
                cfg.pretrain.mask_ratios = rho_sweep();
            }
            for p in cmd_pretrain(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::EvalDetect { sweep } => {
            if sweep {
                cfg.eval_detect.mask_ratios = rho_sweep();
            }
            println!("{}", cmd_eval_detect(&cfg)?.display());
        }
        Command::Mission { runs } => {
            if let Some(r) = runs {
                cfg.mission_runs = r;
                cfg.validate().map_err(anyhow::Error::msg)?;
            }
            for p in cmd_mission(&cfg)? {
                println!("{}", p.display());
            }
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
