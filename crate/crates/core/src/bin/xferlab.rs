use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use xferlab::config::ChainConfig;
use xferlab::distance::AssignmentStrategy;
use xferlab::gains::Regime;
use xferlab::harness::{self, Overrides, Workspace};

#[derive(Parser)]
#[command(
    name = "xferlab",
    version,
    about = "Transfer-chain experiments on synthetic multi-domain data"
)]
struct Cli {
    /// TOML configuration; the built-in toy suite when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "xferlab-out")]
    out: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// small-target, full-target or small-source-small-target.
    #[arg(long, global = true)]
    regime: Option<Regime>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every dataset as grid files, annotations and appearance features.
    GenData,
    /// Train and cache the pre-trained and source backbones.
    TrainSource,
    /// Run the configured transfer chains and append new results.
    RunChains,
    /// Embed the datasets and write domain distance tables.
    Distance {
        /// Assignment strategy; all four when omitted.
        #[arg(long)]
        strategy: Option<AssignmentStrategy>,
        /// Largest sample for the one-to-one assignment.
        #[arg(long)]
        emd_cap: Option<usize>,
    },
    /// Compute gains, level shares, best sources and correlations.
    Analyze,
    /// Render the analysis tables as CSV and text.
    Report {
        /// Colour level tags with ANSI escapes.
        #[arg(long)]
        color: bool,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the built-in configuration with every default filled in.
    ShowDefaults,
}

fn load_config(cli: &Cli, emd_cap: Option<usize>) -> anyhow::Result<ChainConfig> {
    let cfg = match &cli.config {
        Some(path) => {
            ChainConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ChainConfig::default(),
    };
    let cfg = Overrides {
        seed: cli.seed,
        regime: cli.regime,
        emd_cap,
    }
    .apply(cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let ws = Workspace::new(&cli.out);
    match &cli.command {
        Command::GenData => {
            let n = harness::gen_data(&load_config(&cli, None)?, &ws)?;
            println!(
                "wrote {n} datasets under {}",
                ws.root().join("data").display()
            );
        }
        Command::TrainSource => {
            let cfg = load_config(&cli, None)?;
            let n = harness::train_sources(&cfg, &ws)?;
            println!(
                "cached {n} new backbones under {}",
                ws.backbone_dir(&cfg).display()
            );
        }
        Command::RunChains => {
            let s = harness::run_chains(&load_config(&cli, None)?, &ws)?;
            println!(
                "{} results written, {} already stored ({})",
                s.written,
                s.skipped,
                ws.results().path().display()
            );
        }
        Command::Distance { strategy, emd_cap } => {
            let cfg = load_config(&cli, *emd_cap)?;
            let strategies = match strategy {
                Some(s) => vec![*s],
                None => AssignmentStrategy::ALL.to_vec(),
            };
            for dm in harness::compute_distances(&cfg, &ws, &strategies)? {
                println!(
                    "{}: {}",
                    dm.strategy,
                    ws.distance_path(dm.strategy).display()
                );
            }
        }
        Command::Analyze => {
            let a = harness::analyze(&ws)?;
            println!("{} gain records", a.records.len());
            for row in &a.correlations.rows {
                match row.tau {
                    Some(t) => println!("tau {}: {t:.4}", row.factor),
                    None => println!("tau {}: n/a", row.factor),
                }
            }
            println!("tables written under {}", ws.analysis_dir().display());
        }
        Command::Report { color } => print!("{}", harness::report(&ws, *color)?),
        Command::Config {
            action: ConfigAction::ShowDefaults,
        } => print!("{}", ChainConfig::default().to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
