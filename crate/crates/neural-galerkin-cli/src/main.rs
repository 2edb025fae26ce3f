//! `ng` — run, validate, and build references for experiment configs.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use neural_galerkin::experiment::{self, Config};

#[derive(Parser)]
#[command(
    name = "ng",
    about = "Structure-preserving time integration of nonlinear parametrizations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to a TOML experiment config.
        config: PathBuf,
    },
    /// Build (or refresh) the cached reference solution for a config.
    Reference {
        /// Path to a TOML experiment config.
        config: PathBuf,
    },
    /// Validate a config and print the derived run shape without running.
    Check {
        /// Path to a TOML experiment config.
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> anyhow::Result<Config> {
    Config::from_path(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let summary = experiment::run(&cfg)?;
            println!(
                "run {} ({}): {} stored steps in {:.1}s",
                summary.name,
                summary.variant.as_str(),
                summary.metrics.len(),
                summary.wall_seconds
            );
            println!(
                "  fit: seed {} rmse {:.3e} after {} iterations",
                summary.fit_seed, summary.fit_rmse, summary.fit_iterations
            );
            for (i, label) in summary.quantity_labels.iter().enumerate() {
                println!("  max E_C[{label}] = {:.3e}", summary.metrics.max_e_c(i));
            }
            println!(
                "  final E_r = {:.3e} (max {:.3e})",
                summary.metrics.final_e_r(),
                summary.metrics.max_e_r()
            );
            if summary.embed_iterations.iter().any(|&k| k > 0) {
                println!(
                    "  embed iterations: median {:.1}, max {}",
                    summary.median_embed_iterations(),
                    summary.embed_iterations.iter().max().copied().unwrap_or(0)
                );
            }
            println!("  wrote {}", summary.metrics_path.display());
            println!("  wrote {}", summary.trajectory_path.display());
            println!("  wrote {}", summary.manifest_path.display());
        }
        Command::Reference { config } => {
            let cfg = load(&config)?;
            let (path, frames) = experiment::build_reference(&cfg)?;
            println!("reference: {frames} frames -> {}", path.display());
        }
        Command::Check { config } => {
            let cfg = load(&config)?;
            let report = experiment::check(&cfg)?;
            println!("config ok: {} ({})", report.name, report.variant.as_str());
            println!("  model {} with {} parameters", report.model, report.param_count);
            println!(
                "  {} steps, {} stored; grids: lsq {}, quantity {}, test {}",
                report.n_steps,
                report.stored_steps,
                report.lsq_points,
                report.quantity_points,
                report.test_points
            );
            println!("  quantities: {}", report.quantity_labels.join(", "));
        }
    }
    Ok(())
}
