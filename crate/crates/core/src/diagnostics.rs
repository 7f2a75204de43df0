//! Empirical checks of the probabilistic assumptions: binned mixing
//! coefficients, a Monte Carlo tail check of the empirical-process
//! concentration bound, and grid extremes of the stationary density and the
//! transition kernel.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sample_stationary, simulate_with, KernelParam, TrueModel};
use crate::rng::{purpose, SeedPath};

/// Minimum number of conditioning events per bin at every lag.
pub const MIN_BIN_EVENTS: usize = 50;

/// Binned proxy of the uniform mixing coefficients of a stationary sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingEstimate {
    pub lags: Vec<usize>,
    /// `max_{A,B} |P(X_{n+i} in B | X_n in A) - P(X_{n+i} in B)|` per lag.
    pub phi_hat: Vec<f64>,
    /// Binomial standard error of the maximizing bin pair, per lag.
    pub se: Vec<f64>,
    /// Largest standardized deviation over all bin pairs, per lag.
    pub max_z: Vec<f64>,
    pub bins: usize,
}

impl MixingEstimate {
    /// `1 + sum_i phi_hat_i^{1/2}` over the estimated lags.
    pub fn phi_sum(&self) -> f64 {
        1.0 + self.phi_hat.iter().map(|p| p.sqrt()).sum::<f64>()
    }
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

/// Estimate binned mixing coefficients of `states` (values in `[0, 1]`) at
/// each lag.
pub fn estimate_mixing_decay(states: &[f64], lags: &[usize], bins: usize) -> Result<MixingEstimate> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("bins must be at least 2, got {bins}")));
    }
    if lags.is_empty() || lags[0] == 0 || lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "lags must be positive and strictly increasing".into(),
        ));
    }
    if let Some(bad) = states.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("state {bad} lies outside [0, 1]")));
    }
    let labels: Vec<usize> = states.iter().map(|&x| bin_of(x, bins)).collect();
    let mut phi_hat = Vec::with_capacity(lags.len());
    let mut se = Vec::with_capacity(lags.len());
    let mut max_z = Vec::with_capacity(lags.len());
    for &lag in lags {
        let pairs = labels.len().saturating_sub(lag);
        let mut joint = vec![0usize; bins * bins];
        let mut from = vec![0usize; bins];
        let mut to = vec![0usize; bins];
        for k in 0..pairs {
            let (a, b) = (labels[k], labels[k + lag]);
            joint[a * bins + b] += 1;
            from[a] += 1;
            to[b] += 1;
        }
        if let Some(a) = from.iter().position(|&c| c < MIN_BIN_EVENTS) {
            return Err(Error::InsufficientData(format!(
                "bin {a} has {} conditioning events at lag {lag}, need at least {MIN_BIN_EVENTS}",
                from[a]
            )));
        }
        let total = pairs as f64;
        let (mut best, mut best_se, mut best_z) = (0.0f64, 0.0f64, 0.0f64);
        for a in 0..bins {
            let na = from[a] as f64;
            for b in 0..bins {
                let marginal = to[b] as f64 / total;
                let cond = joint[a * bins + b] as f64 / na;
                let dev = (cond - marginal).abs();
                let s = (marginal * (1.0 - marginal) / na).sqrt();
                if dev > best {
                    best = dev;
                    best_se = s;
                }
                if s > 0.0 {
                    best_z = best_z.max(dev / s);
                }
            }
        }
        phi_hat.push(best.min(1.0));
        se.push(best_se);
        max_z.push(best_z);
    }
    Ok(MixingEstimate {
        lags: lags.to_vec(),
        phi_hat,
        se,
        max_z,
        bins,
    })
}

/// Source of the latent sequence in the concentration check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentSource {
    /// The stationary exponential-kernel chain.
    Chain,
    /// Independent draws from the stationary density.
    Independent,
}

/// Settings of the concentration tail check.
///
/// The class is `{ y -> tanh(c * y_1) : c in scales }` on observations of
/// the half-circle model. Every member is bounded by the envelope `U_i = 1`,
/// so the moment condition holds with `nu = 1` and `c = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationConfig {
    pub n: usize,
    pub x_grid: Vec<f64>,
    pub replicates: usize,
    pub scales: Vec<f64>,
    pub a: f64,
    pub source: LatentSource,
    pub seed: u64,
    /// Length of the reference sequence used to estimate mixing coefficients.
    pub mixing_length: usize,
    /// Largest lag in the truncated mixing sum.
    pub mixing_max_lag: usize,
    pub mixing_bins: usize,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            n: 500,
            x_grid: vec![0.5, 1.0, 2.0, 4.0],
            replicates: 2000,
            scales: vec![0.5, 1.0, 2.0],
            a: 1.0,
            source: LatentSource::Chain,
            seed: 20,
            mixing_length: 100_000,
            mixing_max_lag: 8,
            mixing_bins: 10,
        }
    }
}

/// One grid point of the tail check.
#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub x: f64,
    /// `2 Phi (2 sqrt(n nu x) + sqrt(c) x)`.
    pub radius: f64,
    pub empirical_tail: f64,
    pub se: f64,
    /// `e^{-x}`.
    pub bound: f64,
    /// `empirical_tail <= bound + 4 se`.
    pub pass: bool,
}

/// Result of [`concentration_tail_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct TailCheck {
    pub rows: Vec<TailRow>,
    pub phi: f64,
    pub nu: f64,
    pub c: f64,
    pub mean_sup: f64,
    pub mixing: MixingEstimate,
}

impl TailCheck {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn latent_sequence(a: KernelParam, source: LatentSource, n: usize, stream: SeedPath) -> Result<Vec<f64>> {
    match source {
        LatentSource::Chain => {
            let model = TrueModel::half_circle(a.value())?;
            Ok(simulate_with(&model, n, 0, stream)?.states)
        }
        LatentSource::Independent => {
            let mut rng = stream.child(0).rng();
            (0..n).map(|_| sample_stationary(a, &mut rng)).collect()
        }
    }
}

fn class_supremum(states: &[f64], scales: &[f64], stream: SeedPath) -> f64 {
    let mut rng = stream.child(1).rng();
    let y1: Vec<f64> = states
        .iter()
        .map(|&x| {
            let e: f64 = rng.sample(StandardNormal);
            (std::f64::consts::PI * x).cos() + e
        })
        .collect();
    scales
        .iter()
        .map(|&c| y1.iter().map(|&y| (c * y).tanh()).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Monte Carlo check of `P[S_n >= 2 Phi (2 sqrt(n nu x) + sqrt(c) x)] <= e^{-x}`
/// for the centered supremum `S_n` of the empirical process over the class.
pub fn concentration_tail_check(config: &ConcentrationConfig) -> Result<TailCheck> {
    if config.x_grid.is_empty() || config.x_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidParameter(
            "x grid must be non-empty with positive finite entries".into(),
        ));
    }
    if config.scales.is_empty() || config.scales.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("function class must be non-empty and finite".into()));
    }
    if config.n == 0 || config.replicates < 2 {
        return Err(Error::InvalidParameter(
            "need n >= 1 and at least two replicates".into(),
        ));
    }
    let a = KernelParam::new(config.a)?;
    let root = SeedPath::new(config.seed).child(purpose::DIAGNOSTICS);

    let reference = latent_sequence(a, config.source, config.mixing_length, root.child(0))?;
    let lags: Vec<usize> = (1..=config.mixing_max_lag).collect();
    let mixing = estimate_mixing_decay(&reference, &lags, config.mixing_bins)?;
    let phi = mixing.phi_sum();
    let (nu, c) = (1.0f64, 1.0f64);

    let sups: Vec<f64> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let stream = root.child2(purpose::REPLICATE, r as u64);
            let states = latent_sequence(a, config.source, config.n, stream)?;
            Ok(class_supremum(&states, &config.scales, stream))
        })
        .collect::<Result<_>>()?;
    let mean_sup = sups.iter().sum::<f64>() / sups.len() as f64;
    let reps = config.replicates as f64;
    let n = config.n as f64;

    let rows = config
        .x_grid
        .iter()
        .map(|&x| {
            let radius = 2.0 * phi * (2.0 * (n * nu * x).sqrt() + c.sqrt() * x);
            let hits = sups.iter().filter(|&&s| s - mean_sup >= radius).count() as f64;
            let p = hits / reps;
            let se = (p * (1.0 - p) / reps).sqrt();
            let bound = (-x).exp();
            TailRow {
                x,
                radius,
                empirical_tail: p,
                se,
                bound,
                pass: p <= bound + 4.0 * se,
            }
        })
        .collect();
    Ok(TailCheck {
        rows,
        phi,
        nu,
        c,
        mean_sup,
        mixing,
    })
}

/// Grid extremes of `nu_a` and `q_a` for one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H3Bounds {
    pub a: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl H3Bounds {
    /// All extremes strictly positive and finite.
    pub fn holds(&self) -> bool {
        [self.nu_min, self.nu_max, self.q_min, self.q_max]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Number of grid points per axis in [`check_h3_bounds`].
pub const H3_GRID: usize = 1001;

/// Evaluate `nu_a` on a 1001-point grid and `q_a` on the 1001 x 1001 grid.
pub fn check_h3_bounds(a_grid: &[f64]) -> Result<Vec<H3Bounds>> {
    a_grid
        .iter()
        .map(|&a| {
            let k = KernelParam::new(a)?;
            let grid: Vec<f64> = (0..H3_GRID).map(|i| i as f64 / (H3_GRID - 1) as f64).collect();
            let z = k.stationary_mass();
            let inv: Vec<f64> = grid.iter().map(|&x| k.inverse_normalizer(x)).collect();
            let (mut nu_min, mut nu_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in &inv {
                nu_min = nu_min.min(v / z);
                nu_max = nu_max.max(v / z);
            }
            let (q_min, q_max) = grid
                .par_iter()
                .zip(inv.par_iter())
                .map(|(&x, &ix)| {
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for &xp in &grid {
                        let q = (-(xp - x).abs() / a).exp() / ix;
                        lo = lo.min(q);
                        hi = hi.max(q);
                    }
                    (lo, hi)
                })
                .reduce(
                    || (f64::INFINITY, f64::NEG_INFINITY),
                    |p, q| (p.0.min(q.0), p.1.max(q.1)),
                );
            Ok(H3Bounds {
                a,
                nu_min,
                nu_max,
                q_min,
                q_max,
            })
        })
        .collect()
}
