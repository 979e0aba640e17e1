//! Subcommand implementations and file emission.
//!
//! Every command writes plot-ready CSV plus a `manifest.txt` that echoes
//! the full configuration and integrator settings; a manifest parses as
//! a config, so re-running it reproduces the CSV byte for byte. All
//! numeric output uses `.` decimals and 17 significant digits unless
//! `JCSEARCH_CSV_DIGITS` overrides the precision.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    find_peak, leakage_profile, level_rule, rwa_probabilities, scaling_study_with, Peak,
    RwaPrediction, ScalingFit,
};
use crate::config::RunSettings;
use crate::dynamics::{run_search_with, ProbabilityTrace, RunOptions, SearchRun};
use crate::error::{Error, Result};
use crate::model::{resonance_margin, SearchConfig};
use crate::oracle::{compare_with_dynamics, EquivalenceReport, DEFAULT_DIM_CAP};

/// Environment variable overriding CSV significant digits (1..=17).
pub const CSV_DIGITS_ENV: &str = "JCSEARCH_CSV_DIGITS";

/// Resonance-margin warning threshold below which the two-mode picture
/// is suspect.
pub const DEFAULT_MARGIN_WARN: f64 = 50.0;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfiguration(_)
        | Error::InvalidIndex(_)
        | Error::InvalidState(_)
        | Error::OracleTooLarge { .. }
        | Error::Config(_) => 2,
        Error::NormViolation { .. } | Error::NumericalFailure(_) => 3,
        Error::NoPeak { .. } | Error::ScalingFailure { .. } => 4,
        Error::Io(_) => 1,
    }
}

/// Knobs shared by the file-emitting commands.
#[derive(Debug, Clone)]
pub struct CmdOptions {
    pub norm_budget: f64,
    pub margin_warn: f64,
}

impl Default for CmdOptions {
    fn default() -> Self {
        Self { norm_budget: 1e-6, margin_warn: DEFAULT_MARGIN_WARN }
    }
}

fn csv_digits() -> usize {
    std::env::var(CSV_DIGITS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .map(|d| d.clamp(1, 17))
        .unwrap_or(17)
}

fn fmt_f64(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits - 1, x)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

/// Print the two-mode validity warning when the smallest phase margin is
/// below the threshold.
pub fn warn_if_marginal(cfg: &SearchConfig, threshold: f64) {
    let margin = resonance_margin(cfg);
    if margin < threshold {
        eprintln!(
            "warning: resonance margin {margin:.2} below {threshold}; \
             off-resonant couplings are not negligible at delta = {:.3e}",
            cfg.delta()
        );
    }
}

fn run_options(settings: &RunSettings, norm_budget: f64) -> RunOptions {
    RunOptions {
        dt_factor: settings.dt_factor,
        sample_every: settings.sample_every,
        norm_budget,
    }
}

struct Manifest<'a> {
    command: &'a str,
    settings: &'a RunSettings,
    run: Option<&'a SearchRun>,
    duration_s: f64,
}

impl Manifest<'_> {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# run manifest; feed back in as a config to reproduce");
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        out.push_str(&self.settings.render());
        if let Some(run) = self.run {
            let _ = writeln!(out, "dt = {}", fmt_f64(run.dt, 17));
            let _ = writeln!(out, "n_steps = {}", run.n_steps);
            let _ = writeln!(out, "sample_every_used = {}", run.sample_every);
            let _ = writeln!(out, "max_norm_drift = {}", fmt_f64(run.trace.max_norm_drift(), 17));
        }
        let _ = writeln!(out, "duration_s = {:.3}", self.duration_s);
        out
    }
}

fn trace_csv(trace: &ProbabilityTrace, digits: usize) -> String {
    let mut out = String::from("t,t_over_tau,P_j,P_s,leakage,norm\n");
    let tau = trace.tau();
    for i in 0..trace.len() {
        let t = trace.times()[i];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(t, digits),
            fmt_f64(t / tau, digits),
            fmt_f64(trace.p_j()[i], digits),
            fmt_f64(trace.p_s()[i], digits),
            fmt_f64(trace.leakage()[i], digits),
            fmt_f64(trace.norm()[i], digits),
        );
    }
    out
}

/// Outcome of `run`: paths plus the trace for programmatic callers.
#[derive(Debug)]
pub struct RunArtifacts {
    pub trace_path: PathBuf,
    pub manifest_path: PathBuf,
    pub run: SearchRun,
}

/// `run <config> <out_dir>`: integrate and write `trace.csv`.
pub fn cmd_run(config_path: &Path, out_dir: &Path, opts: &CmdOptions) -> Result<RunArtifacts> {
    let started = Instant::now();
    let settings = RunSettings::load(config_path)?;
    let cfg = settings.to_search_config()?;
    warn_if_marginal(&cfg, opts.margin_warn);
    let t_end = settings.t_end_over_tau * cfg.tau();
    let run = run_search_with(&cfg, t_end, &run_options(&settings, opts.norm_budget))?;

    std::fs::create_dir_all(out_dir)?;
    let trace_path = out_dir.join("trace.csv");
    write_file(&trace_path, &trace_csv(&run.trace, csv_digits()))?;
    let manifest_path = out_dir.join("manifest.txt");
    let manifest = Manifest {
        command: "run",
        settings: &settings,
        run: Some(&run),
        duration_s: started.elapsed().as_secs_f64(),
    };
    write_file(&manifest_path, &manifest.render())?;
    Ok(RunArtifacts { trace_path, manifest_path, run })
}

/// `snapshots <config> <out_dir>`: per-level probabilities at fractions
/// of tau, written as `levels.csv` (one row per level, one column per
/// fraction, nearest recorded sample).
pub fn cmd_snapshots(
    config_path: &Path,
    fractions: &[f64],
    out_dir: &Path,
    opts: &CmdOptions,
) -> Result<RunArtifacts> {
    if fractions.is_empty() {
        return Err(Error::Config("no snapshot fractions given".into()));
    }
    for f in fractions {
        if !(0.0..=1.0).contains(f) {
            return Err(Error::Config(format!(
                "snapshot fractions must lie in [0, 1], got {f}"
            )));
        }
    }
    let started = Instant::now();
    let settings = RunSettings::load(config_path)?;
    let cfg = settings.to_search_config()?;
    warn_if_marginal(&cfg, opts.margin_warn);
    let run = run_search_with(&cfg, cfg.tau(), &run_options(&settings, opts.norm_budget))?;

    let digits = csv_digits();
    let mut header = String::from("level");
    for f in fractions {
        let _ = write!(header, ",f{f}");
    }
    let mut out = header;
    out.push('\n');
    let sample_idx: Vec<usize> = fractions
        .iter()
        .map(|f| run.trace.nearest_sample(f * cfg.tau()))
        .collect();
    for level in 1..=cfg.n_levels() {
        let _ = write!(out, "{level}");
        for idx in &sample_idx {
            let _ = write!(out, ",{}", fmt_f64(run.trace.level(level)[*idx], digits));
        }
        out.push('\n');
    }

    std::fs::create_dir_all(out_dir)?;
    let trace_path = out_dir.join("levels.csv");
    write_file(&trace_path, &out)?;
    let manifest_path = out_dir.join("manifest.txt");
    let manifest = Manifest {
        command: "snapshots",
        settings: &settings,
        run: Some(&run),
        duration_s: started.elapsed().as_secs_f64(),
    };
    write_file(&manifest_path, &manifest.render())?;
    Ok(RunArtifacts { trace_path, manifest_path, run })
}

/// Summary row of one delta in a sweep.
#[derive(Debug, Clone)]
pub struct DeltaSummary {
    pub delta: f64,
    pub peak: Peak,
    pub max_leakage: f64,
    /// max over the trace of |P_s(t) - sin^2(Omega t)|.
    pub max_rwa_deviation: f64,
}

/// Largest pointwise deviation of the searched-level probability from
/// the harmonic two-mode prediction.
pub fn max_rwa_deviation(trace: &ProbabilityTrace, cfg: &SearchConfig) -> f64 {
    let pred = RwaPrediction::for_config(cfg);
    trace
        .times()
        .iter()
        .zip(trace.p_s())
        .map(|(t, ps)| {
            let (_, rwa_ps) = rwa_probabilities(&pred, *t);
            (ps - rwa_ps).abs()
        })
        .fold(0.0, f64::max)
}

/// Run one delta of a sweep and summarize it.
pub fn sweep_point(
    settings: &RunSettings,
    delta: f64,
    norm_budget: f64,
) -> Result<(DeltaSummary, SearchRun)> {
    let mut settings = settings.clone();
    settings.delta = delta;
    let cfg = settings.to_search_config()?;
    let t_end = settings.t_end_over_tau * cfg.tau();
    let run = run_search_with(&cfg, t_end, &run_options(&settings, norm_budget))?;
    let peak = find_peak(&run.trace, cfg.s())?;
    let max_leakage = leakage_profile(&run.trace, &cfg)?;
    let max_rwa_dev = max_rwa_deviation(&run.trace, &cfg);
    Ok((
        DeltaSummary { delta, peak, max_leakage, max_rwa_deviation: max_rwa_dev },
        run,
    ))
}

/// `sweep-delta <config> <out_dir> --deltas ...`: one summary row per
/// delta in `sweep.csv`.
pub fn cmd_sweep_delta(
    config_path: &Path,
    deltas: &[f64],
    out_dir: &Path,
    opts: &CmdOptions,
) -> Result<Vec<DeltaSummary>> {
    if deltas.is_empty() {
        return Err(Error::Config("no delta values given".into()));
    }
    let started = Instant::now();
    let settings = RunSettings::load(config_path)?;
    let digits = csv_digits();

    let mut rows = Vec::with_capacity(deltas.len());
    for delta in deltas {
        let cfg_probe = {
            let mut s = settings.clone();
            s.delta = *delta;
            s.to_search_config()?
        };
        warn_if_marginal(&cfg_probe, opts.margin_warn);
        let (summary, _) = sweep_point(&settings, *delta, opts.norm_budget)?;
        rows.push(summary);
    }

    let mut out = String::from("delta,t_peak,t_peak_over_tau,p_peak,max_leakage,max_rwa_dev\n");
    for row in &rows {
        let mut s = settings.clone();
        s.delta = row.delta;
        let tau = s.to_search_config()?.tau();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(row.delta, digits),
            fmt_f64(row.peak.t_peak, digits),
            fmt_f64(row.peak.t_peak / tau, digits),
            fmt_f64(row.peak.p_peak, digits),
            fmt_f64(row.max_leakage, digits),
            fmt_f64(row.max_rwa_deviation, digits),
        );
    }

    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("sweep.csv"), &out)?;
    let manifest = Manifest {
        command: "sweep-delta",
        settings: &settings,
        run: None,
        duration_s: started.elapsed().as_secs_f64(),
    };
    write_file(&out_dir.join("manifest.txt"), &manifest.render())?;
    Ok(rows)
}

/// `scaling <out_dir> --n-list ... --delta ...`: per-N peak times plus
/// the sqrt(N) fit, in `scaling.csv` and `fit.csv`.
pub fn cmd_scaling(
    n_list: &[usize],
    delta: f64,
    lambda: f64,
    seed: Option<u64>,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<ScalingFit> {
    let started = Instant::now();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let fit = scaling_study_with(n_list, delta, lambda, opts, &mut |n| {
        rng.as_mut().map(|rng| {
            let (j, _) = level_rule(n);
            loop {
                let s = rng.gen_range(1..=n);
                if s != j {
                    break s;
                }
            }
        })
    })?;

    let digits = csv_digits();
    let mut out = String::from("N,sqrt_N,t_peak\n");
    for (n, t_peak) in &fit.points {
        let _ = writeln!(
            out,
            "{},{},{}",
            n,
            fmt_f64((*n as f64).sqrt(), digits),
            fmt_f64(*t_peak, digits),
        );
    }
    let mut fit_out = String::from("slope,intercept,r_squared\n");
    let _ = writeln!(
        fit_out,
        "{},{},{}",
        fmt_f64(fit.slope, digits),
        fmt_f64(fit.intercept, digits),
        fmt_f64(fit.r_squared, digits),
    );

    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("scaling.csv"), &out)?;
    write_file(&out_dir.join("fit.csv"), &fit_out)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# scaling manifest");
    let _ = writeln!(manifest, "command = scaling");
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        manifest,
        "# N list {:?}, delta = {delta}, lambda = {lambda}, seed = {seed:?}",
        n_list
    );
    let _ = writeln!(manifest, "duration_s = {:.3}", started.elapsed().as_secs_f64());
    write_file(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(fit)
}

/// `oracle-check --n --k --delta`: integrator vs dense propagator on an
/// identical truncated space; passes when the worst amplitude deviation
/// stays within 1e-6.
pub fn cmd_oracle_check(
    n_levels: usize,
    photon_states: u32,
    delta: f64,
    cap: usize,
) -> Result<EquivalenceReport> {
    if photon_states == 0 {
        return Err(Error::Config("need at least one photon state".into()));
    }
    let (j, s) = level_rule(n_levels);
    let cfg = crate::analysis::sweep_config(
        n_levels,
        delta,
        1.0,
        crate::model::PhotonDistribution::uniform(0, photon_states - 1)?,
        Some(s),
    )?;
    let _ = j;
    compare_with_dynamics(&cfg, 10, cap)
}

/// Pass line for the oracle check, used by the binary and tests.
pub const ORACLE_CHECK_TOLERANCE: f64 = 1e-6;

/// Default cap re-exported for the binary.
pub const ORACLE_DEFAULT_CAP: usize = DEFAULT_DIM_CAP;
