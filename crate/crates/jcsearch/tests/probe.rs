//! Ignored measurement probes used while tuning integrator defaults.
//! Run with: cargo test --test probe -- --ignored --nocapture

use jcsearch::analysis::{find_peak, sweep_config};
use jcsearch::dynamics::{run_search_with, RunOptions};
use jcsearch::model::{PhotonDistribution, PhotonMode, SearchConfig, SearchParams};
use jcsearch::oracle::{compare_with_dynamics, DEFAULT_DIM_CAP};

fn config(n: usize, j: usize, s: usize, delta: f64, n_min: u32, n_max: u32) -> SearchConfig {
    SearchConfig::new(SearchParams {
        n_levels: n,
        j,
        s,
        lambda: 1.0,
        delta,
        photons: PhotonDistribution::uniform(n_min, n_max).unwrap(),
        photon_mode: PhotonMode::Mixture,
    })
    .unwrap()
}

#[test]
#[ignore]
fn probe_equivalence_spread() {
    for (n, k, j, s, delta) in [
        (4usize, 3u32, 1usize, 3usize, 1e3),
        (16, 4, 3, 11, 1e3),
        (16, 4, 4, 11, 1e3),
        (32, 2, 7, 22, 1e3),
        (2, 2, 1, 2, 1e3),
        (8, 8, 2, 6, 1e2),
    ] {
        let cfg = config(n, j, s, delta, 0, k - 1);
        let report = compare_with_dynamics(&cfg, 10, DEFAULT_DIM_CAP).unwrap();
        println!(
            "N={n:3} K={k:3} j={j} s={s} delta={delta:8.0e}: deviation {:.3e}",
            report.max_deviation
        );
    }
}

#[test]
#[ignore]
fn probe_norm_drift_ci_tier() {
    for (n, delta, n_max) in [(50usize, 1e4, 9u32), (50, 5e3, 9), (50, 4e4, 9)] {
        let cfg = config(n, 10, 32, delta, 0, n_max);
        let started = std::time::Instant::now();
        let run = run_search_with(&cfg, 2.0 * cfg.tau(), &RunOptions::default()).unwrap();
        println!(
            "N={n} delta={delta:8.0e}: dt={:.3e} steps={} drift={:.3e} wall={:?}",
            run.dt,
            run.n_steps,
            run.trace.max_norm_drift(),
            started.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_default_peaks() {
    // the headline configuration at several delta
    for delta in [5e3, 1e4, 4e4] {
        let cfg = config(50, 10, 32, delta, 0, 9);
        let started = std::time::Instant::now();
        let run = run_search_with(&cfg, 2.0 * cfg.tau(), &RunOptions::default()).unwrap();
        let peak = find_peak(&run.trace, 32);
        let tau = cfg.tau();
        let ps_at_tau = run.trace.p_s()[run.trace.nearest_sample(tau)];
        let max_leak = run
            .trace
            .times()
            .iter()
            .zip(run.trace.leakage())
            .filter(|(t, _)| **t <= tau)
            .map(|(_, l)| *l)
            .fold(f64::MIN, f64::max);
        println!(
            "delta={delta:8.0e}: peak={peak:?} t/tau={:?} P_s(tau)={ps_at_tau:.4} max_leak(1-Pj-Ps)={max_leak:.4} wall={:?}",
            peak.as_ref().map(|p| p.t_peak / tau).ok(),
            started.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_scaling_slope() {
    let opts = RunOptions::default();
    let mut points = Vec::new();
    for n in [10usize, 20, 30, 50, 80] {
        let cfg = sweep_config(n, 1e4, 1.0, PhotonDistribution::uniform(0, 9).unwrap(), None)
            .unwrap();
        let run = run_search_with(&cfg, 1.5 * cfg.tau(), &opts).unwrap();
        let peak = find_peak(&run.trace, cfg.s()).unwrap();
        println!(
            "N={n}: t_peak={:.4} tau={:.4} ratio={:.4} p_peak={:.4}",
            peak.t_peak,
            cfg.tau(),
            peak.t_peak / cfg.tau(),
            peak.p_peak
        );
        points.push((n, peak.t_peak));
    }
    let fit = jcsearch::analysis::fit_sqrt_scaling(&points).unwrap();
    println!(
        "slope={:.5} (pi/2={:.5}, ratio {:.4}) intercept={:.4} r2={:.6}",
        fit.slope,
        std::f64::consts::FRAC_PI_2,
        fit.slope / std::f64::consts::FRAC_PI_2,
        fit.intercept,
        fit.r_squared
    );
}

#[test]
#[ignore]
fn probe_high_delta_peaks() {
    // single photon sector: the pure two-mode regime check
    for delta in [4e4, 1e5, 1e6] {
        let cfg = config(50, 10, 32, delta, 0, 0);
        let started = std::time::Instant::now();
        let run = run_search_with(&cfg, 1.5 * cfg.tau(), &RunOptions::default()).unwrap();
        let peak = find_peak(&run.trace, 32);
        let tau = cfg.tau();
        println!(
            "single-sector delta={delta:8.0e}: peak={:?} t/tau={:?} wall={:?}",
            peak.as_ref().map(|p| p.p_peak).ok(),
            peak.as_ref().map(|p| p.t_peak / tau).ok(),
            started.elapsed()
        );
    }
    // photon-averaged at higher delta
    for delta in [1e5, 3e5] {
        let cfg = config(50, 10, 32, delta, 0, 9);
        let started = std::time::Instant::now();
        let run = run_search_with(&cfg, 1.5 * cfg.tau(), &RunOptions::default()).unwrap();
        let peak = find_peak(&run.trace, 32);
        let tau = cfg.tau();
        let ps_at_tau = run.trace.p_s()[run.trace.nearest_sample(tau)];
        println!(
            "averaged delta={delta:8.0e}: peak={:?} t/tau={:?} P_s(tau)={ps_at_tau:.4} wall={:?}",
            peak.as_ref().map(|p| p.p_peak).ok(),
            peak.as_ref().map(|p| p.t_peak / tau).ok(),
            started.elapsed()
        );
    }
}
