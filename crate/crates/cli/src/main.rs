//! `fedrisk` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedrisk::experiment::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedrisk", version, about = "Federated surgical-risk experiments on synthetic multi-site cohorts")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "fedrisk.toml")]
    config: PathBuf,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic cohort CSV per site and a manifest.
    Generate,
    /// Train every run listed in the configuration.
    Train,
    /// Score all trained models on every site's test data.
    Evaluate,
    /// Paired AUROC comparisons between paradigms.
    Compare,
    /// Join a socket-mode federation as one site.
    ServeSite {
        #[arg(long)]
        site: String,
    },
    /// Coordinate a socket-mode federation.
    ServeCoordinator,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    match &cli.command {
        Command::Generate => {
            let manifest = experiment::generate_cohorts(&cfg)?;
            for s in &manifest.sites {
                println!(
                    "{:<12} {:<11} {:>7} encounters  prevalence {}",
                    s.site,
                    s.role,
                    s.n_encounters,
                    s.achieved_prevalence.map(|p| format!("{:.2}%", 100.0 * p)).join(" / ")
                );
            }
        }
        Command::Train => {
            for m in experiment::train_all(&cfg)? {
                let score = m.meta.best_score.map_or("n/a".to_string(), |s| format!("{s:.4}"));
                println!(
                    "{:<24} best round {:>3} of {:>3}  validation {score}",
                    m.meta.name, m.meta.best_round, m.meta.rounds_run
                );
            }
        }
        Command::Evaluate => {
            let report = experiment::evaluate_all(&cfg)?;
            println!("{} metric rows written to {}", report.rows.len(), cfg.report_dir().display());
        }
        Command::Compare => {
            let rows = experiment::compare_all(&cfg)?;
            for name in ["scaffold_vs_fedavg", "federated_vs_best_foreign_local", "federated_vs_central"] {
                let d: Vec<f64> = rows.iter().filter(|r| r.comparison == name).map(|r| r.delta).collect();
                if !d.is_empty() {
                    println!(
                        "{name:<34} mean AUROC delta {:+.4} over {} pairs",
                        d.iter().sum::<f64>() / d.len() as f64,
                        d.len()
                    );
                }
            }
        }
        Command::ServeSite { site } => experiment::run_site(&cfg, site)?,
        Command::ServeCoordinator => {
            let m = experiment::run_coordinator(&cfg)?;
            println!("{} trained over sockets; best round {}", m.meta.name, m.meta.best_round);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp_millis().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
