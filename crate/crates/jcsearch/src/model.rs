//! Static model quantities: the atomic spectrum, Bohr frequencies, photon
//! statistics and the normalized atom-field coupling constant.
//!
//! Everything here is immutable after construction and cheap to clone;
//! the dynamics, reference-propagator and analysis layers all consume a
//! validated [`SearchConfig`].
//!
//! Units: natural units with hbar = 1 throughout, so energies and angular
//! frequencies are interchangeable. Times are reported in units of
//! 1/lambda, with lambda = 1 by default.

use crate::error::{Error, Result};

/// Hydrogen-like level energies e_k = -e0 / k^2 for k = 1..=N.
///
/// The energies are strictly increasing in k and accumulate towards zero,
/// so high levels are nearly degenerate - which is what makes the
/// resonance condition delicate for neighbours of the target level.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSpectrum {
    levels: usize,
    epsilon0: f64,
    energies: Vec<f64>,
}

impl AtomicSpectrum {
    pub fn new(levels: usize, epsilon0: f64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidConfiguration(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        if !(epsilon0 > 0.0) || !epsilon0.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "energy scale must be positive and finite, got {epsilon0}"
            )));
        }
        let energies = (1..=levels)
            .map(|k| -epsilon0 / (k as f64 * k as f64))
            .collect();
        Ok(Self { levels, epsilon0, energies })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    /// Energy of level `k`, 1-based.
    pub fn energy(&self, k: usize) -> f64 {
        self.energies[k - 1]
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Bohr frequency omega_lm = e0 (1/l^2 - 1/m^2) = e_m - e_l.
    ///
    /// Antisymmetric in (l, m); zero on the diagonal. The sign convention
    /// matches omega_sj = e_j - e_s used for the cavity tuning.
    pub fn bohr_frequency(&self, l: usize, m: usize) -> Result<f64> {
        for (name, idx) in [("l", l), ("m", m)] {
            if idx < 1 || idx > self.levels {
                return Err(Error::InvalidIndex(format!(
                    "level {name} = {idx} outside 1..={}",
                    self.levels
                )));
            }
        }
        let l2 = (l * l) as f64;
        let m2 = (m * m) as f64;
        Ok(self.epsilon0 * (1.0 / l2 - 1.0 / m2))
    }
}

/// Normalized photon-number distribution on a contiguous support.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    n_min: u32,
    n_max: u32,
    weights: Vec<f64>,
    mean: f64,
}

impl PhotonDistribution {
    /// Uniform weights 1/(n_max - n_min + 1) on `[n_min, n_max]`.
    pub fn uniform(n_min: u32, n_max: u32) -> Result<Self> {
        if n_min > n_max {
            return Err(Error::InvalidConfiguration(format!(
                "photon range empty: n_min = {n_min} > n_max = {n_max}"
            )));
        }
        let count = (n_max - n_min + 1) as usize;
        Self::from_weights(n_min, vec![1.0 / count as f64; count])
    }

    /// Arbitrary non-negative weights starting at `n_min`; normalized so
    /// they sum to one.
    pub fn from_weights(n_min: u32, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfiguration(
                "photon weight list is empty".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfiguration(
                "photon weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidConfiguration(
                "photon weights sum to zero".into(),
            ));
        }
        let n_max = n_min + (weights.len() - 1) as u32;
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean = weights
            .iter()
            .enumerate()
            .map(|(i, w)| (n_min as f64 + i as f64) * w)
            .sum();
        Ok(Self { n_min, n_max, weights, mean })
    }

    pub fn n_min(&self) -> u32 {
        self.n_min
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Weight p(n), zero outside the support.
    pub fn weight(&self, n: u32) -> f64 {
        if n < self.n_min || n > self.n_max {
            0.0
        } else {
            self.weights[(n - self.n_min) as usize]
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Photon numbers in the support, ascending.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.n_min..=self.n_max
    }
}

/// How the photon statistics enter the initial state of a run.
///
/// `Mixture` evolves each photon sector separately from b_{j,k0} = 1 and
/// averages the resulting probabilities with weights p(k0); `Coherent`
/// evolves a single amplitude field seeded with b_{j,k} = sqrt(p(k)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhotonMode {
    Mixture,
    Coherent,
}

impl std::fmt::Display for PhotonMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhotonMode::Mixture => write!(f, "mixture"),
            PhotonMode::Coherent => write!(f, "coherent"),
        }
    }
}

impl std::str::FromStr for PhotonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(PhotonMode::Mixture),
            "coherent" => Ok(PhotonMode::Coherent),
            other => Err(Error::Config(format!(
                "photon_mode must be 'mixture' or 'coherent', got '{other}'"
            ))),
        }
    }
}

/// Coupling constant Omega_0 = 2 lambda / sqrt(<n> (N + 1) + N).
///
/// This is the exact normalization that makes the photon-averaged
/// transition probabilities out of the initial level sum to one; the
/// familiar 2 lambda / sqrt(<n> N) form is its large-N limit.
pub fn coupling_constant(n_levels: usize, mean_n: f64, lambda: f64) -> Result<f64> {
    if n_levels < 2 {
        return Err(Error::InvalidConfiguration(format!(
            "need at least 2 levels, got {n_levels}"
        )));
    }
    if !(mean_n >= 0.0) || !mean_n.is_finite() {
        return Err(Error::InvalidConfiguration(format!(
            "mean photon number must be non-negative, got {mean_n}"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfiguration(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n = n_levels as f64;
    Ok(2.0 * lambda / (mean_n * (n + 1.0) + n).sqrt())
}

/// User-facing knobs; everything else in [`SearchConfig`] is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    pub n_levels: usize,
    /// Initial level index, 1-based.
    pub j: usize,
    /// Searched level index, 1-based.
    pub s: usize,
    pub lambda: f64,
    /// Ratio delta = e0 / Omega_0 of the fast (Bohr) to slow (Rabi) scale.
    pub delta: f64,
    pub photons: PhotonDistribution,
    pub photon_mode: PhotonMode,
}

/// Fully-derived, validated model configuration.
///
/// The parameter closure works like this: (N, lambda, delta, photon
/// distribution) are inputs; Omega_0 follows from the normalization
/// condition, e0 = delta * Omega_0 fixes the spectrum, and the cavity is
/// tuned to the initial -> searched transition, omega = omega_sj.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    spectrum: AtomicSpectrum,
    photons: PhotonDistribution,
    j: usize,
    s: usize,
    lambda: f64,
    delta: f64,
    omega0: f64,
    cavity_freq: f64,
    photon_mode: PhotonMode,
}

impl SearchConfig {
    pub fn new(params: SearchParams) -> Result<Self> {
        let SearchParams { n_levels, j, s, lambda, delta, photons, photon_mode } = params;
        if j < 1 || j > n_levels || s < 1 || s > n_levels {
            return Err(Error::InvalidConfiguration(format!(
                "levels j = {j}, s = {s} must lie in 1..={n_levels}"
            )));
        }
        if j == s {
            return Err(Error::InvalidConfiguration(
                "initial and searched levels must differ".into(),
            ));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "delta must be positive, got {delta}"
            )));
        }
        let omega0 = coupling_constant(n_levels, photons.mean(), lambda)?;
        let epsilon0 = delta * omega0;
        let spectrum = AtomicSpectrum::new(n_levels, epsilon0)?;
        let cavity_freq = spectrum.bohr_frequency(s, j)?;
        Ok(Self {
            spectrum,
            photons,
            j,
            s,
            lambda,
            delta,
            omega0,
            cavity_freq,
            photon_mode,
        })
    }

    pub fn spectrum(&self) -> &AtomicSpectrum {
        &self.spectrum
    }

    pub fn photons(&self) -> &PhotonDistribution {
        &self.photons
    }

    pub fn n_levels(&self) -> usize {
        self.spectrum.levels()
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn epsilon0(&self) -> f64 {
        self.spectrum.epsilon0()
    }

    /// Cavity frequency omega = omega_sj = e_j - e_s. Negative when the
    /// searched level sits above the initial one; only the resonance
    /// condition matters, not the sign.
    pub fn cavity_freq(&self) -> f64 {
        self.cavity_freq
    }

    pub fn photon_mode(&self) -> PhotonMode {
        self.photon_mode
    }

    /// Phase frequency of the amplitude equations for level l:
    /// omega_lj - omega_sj = e_s - e_l. Exactly zero at l = s.
    pub fn detuning(&self, l: usize) -> f64 {
        self.spectrum.energy(self.s) - self.spectrum.energy(l)
    }

    /// Two-mode optimal measurement time tau = (pi / 2 lambda) sqrt(N),
    /// a quarter of the resonant oscillation period.
    pub fn tau(&self) -> f64 {
        std::f64::consts::PI / (2.0 * self.lambda) * (self.n_levels() as f64).sqrt()
    }
}

/// Row j of the photon-averaged transition probability matrix:
/// P_ji = (Omega_0^2 / 4 lambda^2) { <n> + 1 + delta_ij <n> }.
///
/// With the normalized coupling constant the row sums to one.
pub fn transition_probability_row(cfg: &SearchConfig) -> Vec<f64> {
    let mean = cfg.photons().mean();
    let base = cfg.omega0() * cfg.omega0() / (4.0 * cfg.lambda() * cfg.lambda());
    (1..=cfg.n_levels())
        .map(|i| {
            let diag = if i == cfg.j() { mean } else { 0.0 };
            base * (mean + 1.0 + diag)
        })
        .collect()
}

/// Smallest non-zero phase frequency of the amplitude equations in units
/// of Omega_0.
///
/// The two-mode picture holds when every non-resonant phase rotates much
/// faster than the coupling; this ratio is what the CLI checks against a
/// warning threshold. It scales linearly with delta at fixed N, and is
/// dominated by the spectral neighbours of the searched level.
pub fn resonance_margin(cfg: &SearchConfig) -> f64 {
    // Both phase families {omega_lj - omega_sj} and {omega_jm + omega_sj}
    // reduce to e_s - e_l over the level index, so one scan covers Eq.-set.
    let mut min_abs = f64::INFINITY;
    for l in 1..=cfg.n_levels() {
        if l == cfg.s() {
            continue;
        }
        let f = cfg.detuning(l).abs();
        if f < min_abs {
            min_abs = f;
        }
    }
    min_abs / cfg.omega0()
}
