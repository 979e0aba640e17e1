//! Closed-form two-mode predictions, peak extraction from traces, and
//! the sqrt(N) scaling study.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{run_search_with, ProbabilityTrace, RunOptions};
use crate::error::{Error, Result};
use crate::model::{PhotonDistribution, PhotonMode, SearchConfig, SearchParams};

/// A genuine resonant transfer peaks near 1; anything below this is
/// off-resonant ripple and reported as a failed search.
pub const PEAK_THRESHOLD: f64 = 0.5;

/// Half-width (in samples) of the window a local maximum must dominate.
/// Guards the detector against sample-scale ripple from the fast phases.
const PEAK_WINDOW: usize = 5;

/// Two-mode (rotating-wave) prediction for the averaged dynamics:
/// resonant frequency Omega = lambda / sqrt(N), period T = 2 pi / Omega,
/// optimal measurement time tau = T / 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwaPrediction {
    omega: f64,
    period: f64,
    tau: f64,
}

impl RwaPrediction {
    pub fn new(n_levels: usize, lambda: f64) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::InvalidConfiguration(format!(
                "need at least 2 levels, got {n_levels}"
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let sqrt_n = (n_levels as f64).sqrt();
        let omega = lambda / sqrt_n;
        let period = 2.0 * std::f64::consts::PI * sqrt_n / lambda;
        Ok(Self { omega, period, tau: period / 4.0 })
    }

    pub fn for_config(cfg: &SearchConfig) -> Self {
        Self::new(cfg.n_levels(), cfg.lambda()).expect("validated config")
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Harmonic probabilities of the two resonant levels,
/// (P_j, P_s) = (cos^2, sin^2)(Omega t).
pub fn rwa_probabilities(pred: &RwaPrediction, t: f64) -> (f64, f64) {
    let (sin, cos) = (pred.omega * t).sin_cos();
    (cos * cos, sin * sin)
}

/// Per-photon-sector two-mode amplitudes from b_{j,k}(0) = 1:
/// b_{j,k} = cos(Omega_0 sqrt(k+1) t / 2),
/// b_{s,k+1} = -i sin(Omega_0 sqrt(k+1) t / 2).
pub fn per_sector_rwa(cfg: &SearchConfig, k: u32, t: f64) -> (Complex64, Complex64) {
    let angle = cfg.omega0() / 2.0 * ((k + 1) as f64).sqrt() * t;
    let (sin, cos) = angle.sin_cos();
    (Complex64::new(cos, 0.0), Complex64::new(0.0, -sin))
}

/// First genuine probability peak of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub t_peak: f64,
    pub p_peak: f64,
}

/// First local maximum of P_level exceeding [`PEAK_THRESHOLD`], refined
/// by a quadratic through the three samples around the discrete maximum.
///
/// The candidate must dominate a small window of neighbouring samples,
/// so residual fast-phase ripple on the flanks cannot fake a peak.
pub fn find_peak(trace: &ProbabilityTrace, level: usize) -> Result<Peak> {
    if level < 1 || level > trace.n_levels() {
        return Err(Error::InvalidIndex(format!(
            "level {level} outside 1..={}",
            trace.n_levels()
        )));
    }
    let p = trace.level(level);
    let t = trace.times();
    let len = p.len();
    for i in 1..len.saturating_sub(1) {
        if p[i] <= PEAK_THRESHOLD {
            continue;
        }
        let lo = i.saturating_sub(PEAK_WINDOW);
        let hi = (i + PEAK_WINDOW).min(len - 1);
        if (lo..=hi).any(|w| p[w] > p[i]) {
            continue;
        }
        return Ok(refine_quadratic(
            (t[i - 1], p[i - 1]),
            (t[i], p[i]),
            (t[i + 1], p[i + 1]),
        ));
    }
    Err(Error::NoPeak { level, threshold: PEAK_THRESHOLD })
}

/// Vertex of the parabola through three (not necessarily equally spaced)
/// samples; falls back to the middle sample when the points are
/// degenerate.
fn refine_quadratic(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Peak {
    let (t0, p0) = a;
    let (t1, p1) = b;
    let (t2, p2) = c;
    let d10 = t1 - t0;
    let d21 = t2 - t1;
    let num = (p0 - p1) * d21 * d21 - (p2 - p1) * d10 * d10;
    let den = (p0 - p1) * d21 + (p2 - p1) * d10;
    if den.abs() <= f64::EPSILON * (p0.abs() + p1.abs() + p2.abs()).max(1e-300) {
        return Peak { t_peak: t1, p_peak: p1 };
    }
    let t_star = t1 + 0.5 * num / den;
    // evaluate the same parabola at its vertex (Lagrange form)
    let l0 = (t_star - t1) * (t_star - t2) / ((t0 - t1) * (t0 - t2));
    let l1 = (t_star - t0) * (t_star - t2) / ((t1 - t0) * (t1 - t2));
    let l2 = (t_star - t0) * (t_star - t1) / ((t2 - t0) * (t2 - t1));
    Peak { t_peak: t_star, p_peak: p0 * l0 + p1 * l1 + p2 * l2 }
}

/// Largest total probability outside the two resonant levels over
/// t in [0, tau].
pub fn leakage_profile(trace: &ProbabilityTrace, cfg: &SearchConfig) -> Result<f64> {
    let tau = cfg.tau();
    let last = *trace
        .times()
        .last()
        .ok_or_else(|| Error::InvalidState("empty trace".into()))?;
    if last < tau * (1.0 - 1e-9) {
        return Err(Error::InvalidState(format!(
            "trace ends at t = {last}, but the leakage profile needs [0, {tau}]"
        )));
    }
    let mut worst = 0.0f64;
    for (i, t) in trace.times().iter().enumerate() {
        if *t > tau * (1.0 + 1e-12) {
            break;
        }
        let mut outside = 0.0;
        for l in 1..=cfg.n_levels() {
            if l != cfg.j() && l != cfg.s() {
                outside += trace.level(l)[i];
            }
        }
        worst = worst.max(outside);
    }
    Ok(worst)
}

/// Least-squares fit of peak times against sqrt(N).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit t_peak = slope * sqrt(N) + intercept over at least five points.
pub fn fit_sqrt_scaling(points: &[(usize, f64)]) -> Result<ScalingFit> {
    if points.len() < 5 {
        return Err(Error::InvalidConfiguration(format!(
            "scaling fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(nn, _)| (*nn as f64).sqrt()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| *t).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidConfiguration(
            "scaling fit needs distinct N values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let fit = slope * x + intercept;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(ScalingFit { points: points.to_vec(), slope, intercept, r_squared })
}

/// Deterministic level selection for sweeps: j = ceil(N/5),
/// s = ceil(2N/3), nudged apart if they collide.
pub fn level_rule(n_levels: usize) -> (usize, usize) {
    let j = n_levels.div_ceil(5).max(1);
    let mut s = (2 * n_levels).div_ceil(3).max(1);
    if s == j {
        s = if j < n_levels { j + 1 } else { j - 1 };
    }
    (j, s)
}

/// Build the sweep configuration for one N.
pub fn sweep_config(
    n_levels: usize,
    delta: f64,
    lambda: f64,
    photons: PhotonDistribution,
    searched: Option<usize>,
) -> Result<SearchConfig> {
    let (j, rule_s) = level_rule(n_levels);
    let s = searched.unwrap_or(rule_s);
    SearchConfig::new(SearchParams {
        n_levels,
        j,
        s,
        lambda,
        delta,
        photons,
        photon_mode: PhotonMode::Mixture,
    })
}

/// Run the full pipeline for each N and fit t_peak against sqrt(N).
///
/// Uses the default uniform photon distribution on [0, 9] and the fixed
/// level rule; per-N runs may execute in parallel but are collected in
/// list order.
pub fn scaling_study(n_list: &[usize], delta: f64, lambda: f64) -> Result<ScalingFit> {
    scaling_study_with(n_list, delta, lambda, &RunOptions::default(), &mut |_| None)
}

/// As [`scaling_study`], with integrator options and a hook that may
/// override the searched level per N (used for seeded random choice).
pub fn scaling_study_with(
    n_list: &[usize],
    delta: f64,
    lambda: f64,
    opts: &RunOptions,
    searched_for: &mut dyn FnMut(usize) -> Option<usize>,
) -> Result<ScalingFit> {
    if n_list.len() < 5 {
        return Err(Error::InvalidConfiguration(format!(
            "scaling study needs at least 5 values of N, got {}",
            n_list.len()
        )));
    }
    let picks: Vec<(usize, Option<usize>)> =
        n_list.iter().map(|n| (*n, searched_for(*n))).collect();
    let outcomes: Vec<(usize, Result<Peak>)> = picks
        .par_iter()
        .map(|(n, searched)| {
            let peak = (|| {
                let photons = PhotonDistribution::uniform(0, 9)?;
                let cfg = sweep_config(*n, delta, lambda, photons, *searched)?;
                let run = run_search_with(&cfg, 1.5 * cfg.tau(), opts)?;
                find_peak(&run.trace, cfg.s())
            })();
            (*n, peak)
        })
        .collect();

    let mut points = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    let mut first_err = None;
    for (n, outcome) in outcomes {
        match outcome {
            Ok(peak) => points.push((n, peak.t_peak)),
            Err(Error::NoPeak { .. }) => failed.push(n),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if !failed.is_empty() {
        return Err(Error::ScalingFailure { failed });
    }
    fit_sqrt_scaling(&points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn rwa_prediction_identities() {
        let pred = RwaPrediction::new(50, 1.0).unwrap();
        assert_eq!(pred.tau(), pred.period() / 4.0);
        assert_relative_eq!(pred.omega() * pred.tau(), PI / 2.0, max_relative = 1e-15);
        assert_relative_eq!(pred.tau(), PI / 2.0 * 50.0_f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn rwa_probabilities_key_times() {
        let pred = RwaPrediction::new(50, 1.0).unwrap();
        let (pj, ps) = rwa_probabilities(&pred, 0.0);
        assert_eq!((pj, ps), (1.0, 0.0));

        let (pj, ps) = rwa_probabilities(&pred, pred.tau());
        assert!(pj.abs() <= 1e-30);
        assert_relative_eq!(ps, 1.0, max_relative = 1e-15);

        let (pj, ps) = rwa_probabilities(&pred, pred.tau() / 2.0);
        assert_relative_eq!(pj, 0.5, max_relative = 1e-14);
        assert_relative_eq!(ps, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn rwa_sum_is_one_everywhere() {
        let pred = RwaPrediction::new(37, 2.5).unwrap();
        for i in 0..10_000 {
            let t = i as f64 * 0.01;
            let (pj, ps) = rwa_probabilities(&pred, t);
            assert!((pj + ps - 1.0).abs() <= 1e-15, "t = {t}");
        }
    }

    #[test]
    fn per_sector_two_mode_solution() {
        use crate::model::{PhotonDistribution, PhotonMode, SearchParams};
        let cfg = SearchConfig::new(SearchParams {
            n_levels: 50,
            j: 10,
            s: 32,
            lambda: 1.0,
            delta: 1e4,
            photons: PhotonDistribution::uniform(0, 9).unwrap(),
            photon_mode: PhotonMode::Mixture,
        })
        .unwrap();

        let (bj, bs) = per_sector_rwa(&cfg, 3, 0.0);
        assert_eq!(bj, Complex64::new(1.0, 0.0));
        assert_eq!(bs, Complex64::new(0.0, 0.0));

        for k in [0u32, 3, 9] {
            for t in [0.1, 1.0, 7.7] {
                let (bj, bs) = per_sector_rwa(&cfg, k, t);
                assert_relative_eq!(bj.norm_sqr() + bs.norm_sqr(), 1.0, max_relative = 1e-14);
            }
        }

        // vacuum sector oscillates at Omega_0 / 2
        let t = 0.83;
        let (bj, _) = per_sector_rwa(&cfg, 0, t);
        assert_relative_eq!(bj.re, (cfg.omega0() / 2.0 * t).cos(), max_relative = 1e-14);
    }

    fn analytic_trace(n_levels: usize, j: usize, s: usize, omega: f64, t_end: f64, samples: usize) -> ProbabilityTrace {
        let times: Vec<f64> = (0..samples)
            .map(|i| t_end * i as f64 / (samples - 1) as f64)
            .collect();
        let mut levels = vec![vec![0.0; samples]; n_levels];
        for (i, t) in times.iter().enumerate() {
            let ps = (omega * t).sin().powi(2);
            levels[s - 1][i] = ps;
            levels[j - 1][i] = 1.0 - ps;
        }
        let norm = vec![1.0; samples];
        let tau = PI / 2.0 / omega;
        ProbabilityTrace::new(j, s, tau, times, levels, norm)
    }

    #[test]
    fn find_peak_on_analytic_trace() {
        let omega = 1.0 / 50.0_f64.sqrt();
        let trace = analytic_trace(50, 10, 32, omega, 2.5 * PI / 2.0 / omega, 4001);
        let peak = find_peak(&trace, 32).unwrap();
        let tau = PI / 2.0 / omega;
        assert!((peak.t_peak - tau).abs() <= 1e-3 * tau, "t_peak {}", peak.t_peak);
        assert!((peak.p_peak - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn find_peak_rejects_flat_and_subthreshold_traces() {
        let trace = analytic_trace(4, 1, 3, 0.0, 10.0, 101);
        assert!(matches!(find_peak(&trace, 3), Err(Error::NoPeak { .. })));

        // scaled-down oscillation never crosses the threshold
        let omega = 0.1;
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
        let mut levels = vec![vec![0.0; 200]; 2];
        for (i, t) in times.iter().enumerate() {
            levels[1][i] = 0.4 * (omega * t).sin().powi(2);
            levels[0][i] = 1.0 - levels[1][i];
        }
        let trace = ProbabilityTrace::new(1, 2, 1.0, times, levels, vec![1.0; 200]);
        assert!(matches!(find_peak(&trace, 2), Err(Error::NoPeak { .. })));
    }

    #[test]
    fn leakage_profile_is_zero_for_two_mode_trace() {
        use crate::model::{PhotonDistribution, PhotonMode, SearchParams};
        let cfg = SearchConfig::new(SearchParams {
            n_levels: 50,
            j: 10,
            s: 32,
            lambda: 1.0,
            delta: 1e4,
            photons: PhotonDistribution::uniform(0, 9).unwrap(),
            photon_mode: PhotonMode::Mixture,
        })
        .unwrap();
        let omega = 1.0 / 50.0_f64.sqrt();
        let trace = analytic_trace(50, 10, 32, omega, 1.2 * cfg.tau(), 501);
        assert_eq!(leakage_profile(&trace, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn fit_recovers_exact_scaling_law() {
        let lambda = 1.0;
        let slope = PI / (2.0 * lambda);
        let points: Vec<(usize, f64)> =
            [10, 20, 30, 50, 80].iter().map(|n| (*n, slope * (*n as f64).sqrt())).collect();
        let fit = fit_sqrt_scaling(&points).unwrap();
        assert_relative_eq!(fit.slope, slope, max_relative = 1e-12);
        assert!(fit.intercept.abs() <= 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);

        // doubling lambda halves the slope
        let lambda2 = 2.0;
        let points2: Vec<(usize, f64)> = [10, 20, 30, 50, 80]
            .iter()
            .map(|n| (*n, PI / (2.0 * lambda2) * (*n as f64).sqrt()))
            .collect();
        let fit2 = fit_sqrt_scaling(&points2).unwrap();
        assert_relative_eq!(fit2.slope, fit.slope / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_requires_five_points() {
        let points = vec![(10, 1.0), (20, 2.0), (30, 3.0), (40, 4.0)];
        assert!(fit_sqrt_scaling(&points).is_err());
    }

    #[test]
    fn level_rule_is_in_range_and_distinct() {
        for n in 2..=200 {
            let (j, s) = level_rule(n);
            assert!(j >= 1 && j <= n, "N = {n}");
            assert!(s >= 1 && s <= n, "N = {n}");
            assert_ne!(j, s, "N = {n}");
        }
        assert_eq!(level_rule(50), (10, 34));
    }

    #[test]
    fn scaling_study_smoke() {
        let fit = scaling_study(&[2, 3, 4, 5, 6], 1e2, 1.0).unwrap();
        assert_eq!(fit.points.len(), 5);
        assert!(fit.r_squared >= 0.0 && fit.r_squared <= 1.0);
        assert!(fit.slope > 0.0);
    }
}
