use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jcsearch::cli::{
    cmd_oracle_check, cmd_run, cmd_scaling, cmd_snapshots, cmd_sweep_delta, exit_code,
    CmdOptions, DEFAULT_MARGIN_WARN, ORACLE_CHECK_TOLERANCE, ORACLE_DEFAULT_CAP,
};
use jcsearch::config::{parse_f64_list, parse_usize_list};
use jcsearch::dynamics::RunOptions;
use jcsearch::Error;

#[derive(Parser)]
#[command(
    name = "jcsearch",
    version,
    about = "Resonant quantum search on a multilevel Jaynes-Cummings model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured search and write trace.csv
    Run {
        config: PathBuf,
        out_dir: PathBuf,
        /// Warn when the resonance margin falls below this
        #[arg(long, default_value_t = DEFAULT_MARGIN_WARN)]
        margin_warn: f64,
        /// Abort when |norm - 1| exceeds this
        #[arg(long, default_value_t = 1e-6)]
        norm_budget: f64,
    },
    /// Per-level probabilities at fractions of the optimal time
    Snapshots {
        config: PathBuf,
        out_dir: PathBuf,
        /// Comma-separated fractions of tau in [0, 1]
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        fractions: String,
        #[arg(long, default_value_t = DEFAULT_MARGIN_WARN)]
        margin_warn: f64,
        #[arg(long, default_value_t = 1e-6)]
        norm_budget: f64,
    },
    /// Summarize peak, leakage and two-mode deviation per delta
    SweepDelta {
        config: PathBuf,
        out_dir: PathBuf,
        /// Comma-separated delta values
        #[arg(long)]
        deltas: String,
        #[arg(long, default_value_t = DEFAULT_MARGIN_WARN)]
        margin_warn: f64,
        #[arg(long, default_value_t = 1e-6)]
        norm_budget: f64,
    },
    /// Fit first-peak times against sqrt(N)
    Scaling {
        out_dir: PathBuf,
        /// Comma-separated search-set sizes (at least five)
        #[arg(long, default_value = "10,20,30,50,80")]
        n_list: String,
        #[arg(long, default_value_t = 1e4)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Choose searched levels at random with this seed instead of
        /// the fixed rule
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        dt_factor: f64,
        #[arg(long, default_value_t = 1e-6)]
        norm_budget: f64,
    },
    /// Cross-check the integrator against the dense propagator
    OracleCheck {
        /// Number of atomic levels
        #[arg(long)]
        n: usize,
        /// Number of photon states (0..=k-1)
        #[arg(long)]
        k: u32,
        #[arg(long)]
        delta: f64,
        /// Flat dimension cap of the dense space
        #[arg(long, default_value_t = ORACLE_DEFAULT_CAP)]
        cap: usize,
    },
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out_dir, margin_warn, norm_budget } => {
            let art = cmd_run(&config, &out_dir, &CmdOptions { norm_budget, margin_warn })?;
            println!(
                "wrote {} ({} samples, max norm drift {:.3e})",
                art.trace_path.display(),
                art.run.trace.len(),
                art.run.trace.max_norm_drift()
            );
            Ok(())
        }
        Command::Snapshots { config, out_dir, fractions, margin_warn, norm_budget } => {
            let fractions = parse_f64_list(&fractions)?;
            let art = cmd_snapshots(
                &config,
                &fractions,
                &out_dir,
                &CmdOptions { norm_budget, margin_warn },
            )?;
            println!("wrote {}", art.trace_path.display());
            Ok(())
        }
        Command::SweepDelta { config, out_dir, deltas, margin_warn, norm_budget } => {
            let deltas = parse_f64_list(&deltas)?;
            let rows = cmd_sweep_delta(
                &config,
                &deltas,
                &out_dir,
                &CmdOptions { norm_budget, margin_warn },
            )?;
            for row in &rows {
                println!(
                    "delta {:.3e}: p_peak {:.4} at t {:.4}, max leakage {:.3e}, max two-mode dev {:.3e}",
                    row.delta,
                    row.peak.p_peak,
                    row.peak.t_peak,
                    row.max_leakage,
                    row.max_rwa_deviation
                );
            }
            Ok(())
        }
        Command::Scaling { out_dir, n_list, delta, lambda, seed, dt_factor, norm_budget } => {
            let n_list = parse_usize_list(&n_list)?;
            let opts = RunOptions { dt_factor, sample_every: None, norm_budget };
            let fit = cmd_scaling(&n_list, delta, lambda, seed, &out_dir, &opts)?;
            println!(
                "fit: t_peak = {:.6} sqrt(N) + {:.6}, r^2 = {:.6}",
                fit.slope, fit.intercept, fit.r_squared
            );
            Ok(())
        }
        Command::OracleCheck { n, k, delta, cap } => {
            let report = cmd_oracle_check(n, k, delta, cap)?;
            println!(
                "dimension {}, max amplitude deviation {:.3e} over {} times",
                report.dim,
                report.max_deviation,
                report.sample_times.len()
            );
            if report.max_deviation <= ORACLE_CHECK_TOLERANCE {
                println!("PASS (tolerance {ORACLE_CHECK_TOLERANCE:e})");
                Ok(())
            } else {
                Err(Error::NumericalFailure(format!(
                    "deviation {:e} exceeds tolerance {:e}",
                    report.max_deviation, ORACLE_CHECK_TOLERANCE
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
