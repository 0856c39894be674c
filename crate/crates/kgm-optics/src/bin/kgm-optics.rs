//! Command-line front end: run, sweep and constraint-check experiments
//! described by TOML files or built-in scenario presets.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kgm_optics::harness::{self, ExperimentConfig, RunReport};

#[derive(Parser)]
#[command(name = "kgm-optics", version, about = "Multi-phase geometric optics for Klein-Gordon-Maxwell in Lorenz gauge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the points per axis of the base grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Override the spatial dimension.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    dim: Option<u8>,
    /// Override the projector exponent κ.
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Override the constraint tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Number of λ instances run concurrently.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for every λ of a configuration file.
    Run {
        /// TOML configuration.
        config: PathBuf,
    },
    /// Run a λ-sweep (≥ 3 values) and fit the scaling exponents.
    Sweep {
        /// TOML configuration.
        config: PathBuf,
    },
    /// Solve and check the background and error-data constraints only.
    CheckConstraints {
        /// TOML configuration.
        config: PathBuf,
    },
    /// Run a built-in scenario preset (`list` prints the names).
    Scenario {
        /// Scenario name.
        name: String,
        /// Comma-separated λ values (strictly decreasing).
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Output directory for the ledger, summary and snapshots.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the preset as TOML instead of running it.
        #[arg(long)]
        print: bool,
    },
}

impl Cli {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(n) = self.grid {
            cfg.grid.n = n;
        }
        if let Some(d) = self.dim {
            cfg.grid.dim = d as usize;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(t) = self.tol {
            cfg.tolerances.constraint = t;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
    }
}

fn print_report(r: &RunReport) {
    println!("scenario {}  η₀ = {:.4e}", r.config.scenario, r.table.eta0);
    for l in &r.lambdas {
        print!("λ = {:<8} remainder {:.4e}  gauge {:.4e}", l.lambda, l.decomposition.remainder, l.decomposition.gauge);
        if let Some((n, d)) = l.e_ell {
            print!("  E^ell {n:.4e} (defect {d:.4e})");
        }
        if let Some(e) = &l.error {
            print!("  ‖Z‖ L² {:.4e} H½ {:.4e} H¹ {:.4e} (N = {})", e.norms[0], e.norms[1], e.norms[2], e.n);
        }
        println!();
    }
    for g in &r.gates {
        println!("[{}] {:<40} {}", if g.pass { "pass" } else { "FAIL" }, g.name, g.detail);
    }
    match &r.first_failure {
        None => println!("overall: pass"),
        Some(name) => println!("overall: FAIL (first failing gate: {name})"),
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let load = |p: &PathBuf| -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?;
        cli.apply(&mut c);
        Ok(c)
    };
    let report = match &cli.command {
        Command::Run { config } => harness::run(&load(config)?)?,
        Command::Sweep { config } => harness::sweep(&load(config)?)?,
        Command::CheckConstraints { config } => {
            let c = harness::check_constraints(&load(config)?)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            return Ok(if c.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Scenario { name, lambda, out, print } => {
            if name == "list" {
                harness::SCENARIOS.iter().for_each(|s| println!("{s}"));
                return Ok(ExitCode::SUCCESS);
            }
            let mut c = harness::scenario(name)?;
            cli.apply(&mut c);
            if let Some(l) = lambda {
                c.lambdas = l.clone();
            }
            if out.is_some() {
                c.output = out.clone();
            }
            if *print {
                print!("{}", c.to_toml()?);
                return Ok(ExitCode::SUCCESS);
            }
            harness::run(&c)?
        }
    };
    print_report(&report);
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
