use std::path::PathBuf;
use std::process::ExitCode;

use agdiff::runs;
use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agdiff", version, about = "Particle scheme for 1D aggregation-diffusion on a torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run: diagnostics.csv, final_state.csv, summary.json.
    Simulate { config: PathBuf },
    /// Convergence in the particle number against a finite-volume reference.
    SweepN {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 8192)]
        oracle_m: usize,
    },
    /// Growing tori at fixed particles per unit length.
    SweepDomain {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        l: Vec<f64>,
    },
    /// Vacuum floors `eps` added to the initial datum.
    SweepPositivity {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
    },
    /// Kernel and nonlinearity checks plus inequalities on random states.
    Validate { config: PathBuf },
    /// Finite-volume reference snapshots `ref_t<t>.csv`.
    Oracle {
        config: PathBuf,
        #[arg(long, default_value_t = 4096)]
        m: usize,
    },
}

fn run(cli: Cli) -> Result<bool> {
    agdiff::init_threads()?;
    match cli.command {
        Command::Simulate { config } => {
            let cfg = agdiff::parse_config(&config)?;
            let out = runs::run_simulate(&cfg)?;
            let s = &out.summary;
            println!(
                "termination={} max_density={:.6e} energy {:.10e} -> {:.10e} holder={:.4e} violations={}",
                s.termination, s.max_density, s.energy_initial, s.energy_final, s.holder_constant, s.inequality_violations
            );
            if let Some(t) = s.termination_time.filter(|t| *t < cfg.min_time) {
                eprintln!("error: run stopped at t = {t} before the required minimum time {}", cfg.min_time);
            }
            Ok(out.ok)
        }
        Command::SweepN { config, n, oracle_m } => {
            let cfg = agdiff::parse_config(&config)?;
            let table = runs::run_sweep_n(&cfg, &n, oracle_m)?;
            print!("{}", table.to_csv());
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            if !table.monotone {
                eprintln!("warning: errors do not decrease monotonically (10% slack)");
            }
            Ok(true)
        }
        Command::SweepDomain { config, l } => {
            let cfg = agdiff::parse_config(&config)?;
            let table = runs::run_sweep_domain(&cfg, &l)?;
            print!("{}", table.to_csv());
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            if !table.decreasing {
                eprintln!("warning: windowed differences do not decrease in L");
            }
            Ok(true)
        }
        Command::SweepPositivity { config, eps } => {
            let cfg = agdiff::parse_config(&config)?;
            let table = runs::run_sweep_positivity(&cfg, &eps)?;
            print!("{}", table.to_csv());
            if !table.decreasing {
                eprintln!("warning: differences do not decrease as eps shrinks");
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = agdiff::parse_config(&config)?;
            let out = runs::run_validate(&cfg)?;
            print!("{}{}", out.kernel, out.nonlinearity);
            println!("inequalities on {} random states: {} violations", out.states, out.violations);
            for (name, margin) in &out.worst {
                println!("  {name:<12} worst margin {margin:.6e}");
            }
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            Ok(out.ok())
        }
        Command::Oracle { config, m } => {
            let cfg = agdiff::parse_config(&config)?;
            let out = runs::run_oracle(&cfg, m)?;
            println!("{} steps, {} snapshots written to {}", out.steps, out.files.len(), cfg.outputs.dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
