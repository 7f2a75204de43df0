//! EM maximization of the penalized pseudo-likelihood.
//!
//! Each iteration draws uniformly proposed latent particles per block,
//! weights them by the current model (importance-sampled E-step), updates the
//! kernel bandwidth by minimizing `log(a + a²(e^{-1/a} - 1)) + D/a`, resamples
//! the particles and refits `f` as a cubic smoothing spline. A diagnostic
//! mode replaces the Monte Carlo E-step by exact posterior weights on the
//! latent quadrature grid, under which the penalized objective is provably
//! non-decreasing.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::density::{check_compatible, BlockDensityEvaluator, LatentDensity, ObservationBlocks};
use crate::error::{Error, Result};
use crate::model::KernelParam;
use crate::quadrature;
use crate::regression::RegressionFn;
use crate::rng::{purpose, SeedPath};
use crate::spline::{fit_smoothing_spline, SplineFunction, WeightedPoints};

/// How conditional expectations given a block are approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EStepMode {
    /// Uniform proposals with self-normalized importance weights.
    MonteCarlo,
    /// Exact posterior over the latent Gauss–Legendre grid.
    Quadrature,
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub b: usize,
    /// Particles per block for the bandwidth update.
    pub n_a: usize,
    /// Particles per block for the regression update.
    pub n_f: usize,
    pub lambda_n: f64,
    pub iterations: usize,
    pub a_init: f64,
    pub f_init: SplineFunction,
    pub seed: u64,
    /// With `false` and `b = 1` the latent law is the known uniform density;
    /// with `false` and `b = 2` the bandwidth stays at `a_init`.
    pub estimate_a: bool,
    pub a_search: (f64, f64),
    pub mode: EStepMode,
    /// Particle-bootstrap replicates for the Monte Carlo standard error of
    /// each iteration's objective increment (0 disables).
    pub bootstrap_replicates: usize,
}

impl EmConfig {
    /// Defaults matching the reference experiments: `â⁰ = 4`,
    /// `f̂⁰(x) = (x, 0, ..)`, `N_a = N_f = 100`, search range `[0.01, 20]`.
    pub fn new(b: usize, ell: usize, lambda_n: f64) -> Result<Self> {
        let mut slope = vec![0.0; ell];
        if ell > 0 {
            slope[0] = 1.0;
        }
        Ok(Self {
            b,
            n_a: 100,
            n_f: 100,
            lambda_n,
            iterations: 100,
            a_init: 4.0,
            f_init: SplineFunction::linear(&vec![0.0; ell], &slope)?,
            seed: 0,
            estimate_a: b == 2,
            a_search: (0.01, 20.0),
            mode: EStepMode::MonteCarlo,
            bootstrap_replicates: 30,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(1..=2).contains(&self.b) {
            return bad(format!("b must be 1 or 2, got {}", self.b));
        }
        if self.n_a == 0 || self.n_f == 0 {
            return bad("particle counts must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.a_init.is_finite() && self.a_init > 0.0) {
            return bad(format!("a_init must be positive, got {}", self.a_init));
        }
        if !(self.lambda_n.is_finite() && self.lambda_n > 0.0) {
            return bad(format!("lambda_n must be positive, got {}", self.lambda_n));
        }
        let (lo, hi) = self.a_search;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("invalid bandwidth search interval ({lo}, {hi})"));
        }
        Ok(())
    }

    /// Latent block density used with bandwidth `a`.
    pub fn latent(&self, a: KernelParam) -> LatentDensity {
        match (self.b, self.estimate_a) {
            (1, false) => LatentDensity::Uniform,
            (1, true) => LatentDensity::Stationary(a),
            _ => LatentDensity::Pair(a),
        }
    }
}

/// Latent particles per block with normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedParticles {
    b: usize,
    per_block: usize,
    /// `n_blocks x per_block x b`
    states: Vec<f64>,
    /// `n_blocks x per_block`, each block sums to 1
    weights: Vec<f64>,
    /// Unnormalized log weights, shifted so each block's maximum is 0.
    log_weights: Vec<f64>,
}

impl WeightedParticles {
    /// Build from `n_blocks x per_block` particles of length `b` (flattened)
    /// and their unnormalized log weights.
    pub fn from_log_weights(b: usize, per_block: usize, states: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        if b == 0 || per_block == 0 || log_weights.len() % per_block != 0 || states.len() != log_weights.len() * b {
            return Err(Error::InvalidParameter("particle array shapes do not match".into()));
        }
        if states.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("particle state outside [0, 1]".into()));
        }
        let mut weights = Vec::with_capacity(log_weights.len());
        let mut shifted = Vec::with_capacity(log_weights.len());
        for (k, block) in log_weights.chunks(per_block).enumerate() {
            let (w, l) = normalize_log_weights(block.to_vec())
                .ok_or_else(|| Error::Degenerate(format!("all weights vanish in block {k}")))?;
            weights.extend(w);
            shifted.extend(l);
        }
        Ok(Self {
            b,
            per_block,
            states,
            weights,
            log_weights: shifted,
        })
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn per_block(&self) -> usize {
        self.per_block
    }

    pub fn n_blocks(&self) -> usize {
        self.weights.len() / self.per_block
    }

    /// Particle `i` of block `k` (a `b`-tuple).
    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        let start = (k * self.per_block + i) * self.b;
        &self.states[start..start + self.b]
    }

    pub fn block_weights(&self, k: usize) -> &[f64] {
        &self.weights[k * self.per_block..(k + 1) * self.per_block]
    }

    fn block_log_weights(&self, k: usize) -> &[f64] {
        &self.log_weights[k * self.per_block..(k + 1) * self.per_block]
    }

    /// `(1/n) Σ_k Σ_i ω_k^i |x_0 − x_1|`, the sufficient statistic of the
    /// bandwidth update.
    pub fn mean_jump(&self) -> f64 {
        assert_eq!(self.b, 2, "mean jump needs pair particles");
        let n = self.n_blocks();
        let total: f64 = (0..n)
            .map(|k| {
                self.block_weights(k)
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let s = self.state(k, i);
                        w * (s[0] - s[1]).abs()
                    })
                    .sum::<f64>()
            })
            .sum();
        total / n as f64
    }

    /// Mean over blocks of the effective sample size `1 / Σ ω²`.
    pub fn mean_ess(&self) -> f64 {
        let n = self.n_blocks();
        (0..n)
            .map(|k| 1.0 / self.block_weights(k).iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
            / n as f64
    }

    /// Checks weights are finite, nonnegative and normalized per block.
    pub fn validate(&self) -> Result<()> {
        for k in 0..self.n_blocks() {
            let w = self.block_weights(k);
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Internal(format!("invalid particle weight in block {k}")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Internal(format!("block {k} weights sum to {s}")));
            }
        }
        Ok(())
    }
}

/// Unweighted particle sets after multinomial resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledParticles {
    b: usize,
    per_block: usize,
    states: Vec<f64>,
}

impl ResampledParticles {
    pub fn b(&self) -> usize {
        self.b
    }

    pub fn per_block(&self) -> usize {
        self.per_block
    }

    pub fn n_blocks(&self) -> usize {
        self.states.len() / (self.per_block * self.b)
    }

    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        let start = (k * self.per_block + i) * self.b;
        &self.states[start..start + self.b]
    }
}

/// One line of the EM trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub a_hat: f64,
    /// `Σ_k ln p(Y_k) − λ_n ‖f̂''‖²`, latent integrals by quadrature.
    pub penalized_pll: f64,
    pub pll: f64,
    pub curvature: f64,
    /// Bandwidth statistic `D` of the iteration (NaN when not computed).
    pub mean_jump: f64,
    pub mean_ess: f64,
    /// Particle-bootstrap standard error of the estimated objective
    /// increment (0 in quadrature mode).
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub a_hat: f64,
    pub f_hat: SplineFunction,
    pub iter: usize,
    pub trace: Vec<IterationRecord>,
    /// Penalized objective at the initial estimates.
    pub initial_objective: f64,
}

fn log_gauss_kernel(fx: &[f64], y: &[f64]) -> f64 {
    -0.5 * fx.iter().zip(y).map(|(f, y)| (y - f) * (y - f)).sum::<f64>()
}

/// Complete-data log density `ln ν(x) + Σ_j ln φ(y_j − f(x_j))` up to the
/// Gaussian constant.
fn complete_log_density(latent: &LatentDensity, f: &dyn RegressionFn, x: &[f64], y: &[f64], buf: &mut [f64]) -> f64 {
    let ell = f.dim();
    let mut total = latent_log_value(latent, x);
    for (j, &xj) in x.iter().enumerate() {
        f.eval_into(xj, buf);
        total += log_gauss_kernel(buf, &y[j * ell..(j + 1) * ell]);
    }
    total
}

fn latent_log_value(latent: &LatentDensity, x: &[f64]) -> f64 {
    match latent {
        LatentDensity::Uniform => 0.0,
        LatentDensity::Stationary(a) => a.log_stationary_unchecked(x[0]),
        LatentDensity::Pair(a) => a.log_stationary_unchecked(x[0]) + a.log_transition_unchecked(x[0], x[1]),
        other => other.value(x).ln(),
    }
}

/// Importance-sampled E-step: `n` uniform particles on `[0,1]^b` per block,
/// weighted by `ν(x) Π_j φ(y_j − f(x_j))`. Block `k` draws from
/// `stream.child(k)`.
pub fn e_step(
    f_hat: &dyn RegressionFn,
    latent: &LatentDensity,
    obs: &ObservationBlocks,
    n: usize,
    stream: SeedPath,
) -> Result<WeightedParticles> {
    check_compatible(f_hat, latent, obs)?;
    if n == 0 {
        return Err(Error::InvalidParameter("particle count must be at least 1".into()));
    }
    let b = obs.b();
    let ell = obs.ell();
    let per_block: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..obs.n())
        .into_par_iter()
        .map(|k| -> Result<_> {
            let y = obs.block(k);
            let mut rng = stream.child(k as u64).rng();
            let mut states = Vec::with_capacity(n * b);
            let mut logw = Vec::with_capacity(n);
            let mut buf = vec![0.0; ell];
            for _ in 0..n {
                let start = states.len();
                for _ in 0..b {
                    states.push(rng.random::<f64>());
                }
                logw.push(complete_log_density(latent, f_hat, &states[start..], y, &mut buf));
            }
            let (weights, logw) = normalize_log_weights(logw)
                .ok_or_else(|| Error::Internal(format!("all importance weights vanish in block {k}")))?;
            Ok((states, weights, logw))
        })
        .collect::<Result<_>>()?;
    let mut out = WeightedParticles {
        b,
        per_block: n,
        states: Vec::with_capacity(obs.n() * n * b),
        weights: Vec::with_capacity(obs.n() * n),
        log_weights: Vec::with_capacity(obs.n() * n),
    };
    for (s, w, l) in per_block {
        out.states.extend(s);
        out.weights.extend(w);
        out.log_weights.extend(l);
    }
    Ok(out)
}

fn normalize_log_weights(mut logw: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    for l in &mut logw {
        *l -= top;
    }
    let mut w: Vec<f64> = logw.iter().map(|l| l.exp()).collect();
    let s: f64 = w.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    for v in &mut w {
        *v /= s;
    }
    Some((w, logw))
}

/// Exact E-step on the latent quadrature grid: every block gets all `m^b`
/// grid points as particles, weighted by the posterior.
pub fn e_step_quadrature(
    f_hat: &dyn RegressionFn,
    latent: &LatentDensity,
    obs: &ObservationBlocks,
) -> Result<WeightedParticles> {
    check_compatible(f_hat, latent, obs)?;
    let eval = BlockDensityEvaluator::new(f_hat, latent)?;
    let nodes = eval.nodes();
    let m = nodes.len();
    let b = obs.b();
    let per = m.pow(b as u32);
    let grid: Vec<f64> = if b == 1 {
        nodes.to_vec()
    } else {
        let mut g = Vec::with_capacity(per * 2);
        for &x in nodes {
            for &y in nodes {
                g.push(x);
                g.push(y);
            }
        }
        g
    };
    let posts = (0..obs.n())
        .into_par_iter()
        .map(|k| eval.posterior(obs.block(k)).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    let mut out = WeightedParticles {
        b,
        per_block: per,
        states: Vec::with_capacity(obs.n() * per * b),
        weights: Vec::with_capacity(obs.n() * per),
        log_weights: Vec::new(),
    };
    for p in posts {
        out.states.extend_from_slice(&grid);
        out.weights.extend(p);
    }
    Ok(out)
}

fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimize a one-dimensional objective on `[lo, hi]` by golden section to
/// absolute tolerance 1e-6; endpoints win when they are no worse.
fn minimize_on_interval<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let inner = golden_section(&f, lo, hi, 1e-6);
    [inner, lo, hi]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap_or(inner)
}

/// `log(a + a²(e^{-1/a} − 1)) + D/a`.
pub fn bandwidth_objective(a: f64, mean_jump: f64) -> f64 {
    KernelParam(a).log_half_mass() + mean_jump / a
}

/// Bandwidth minimizing [`bandwidth_objective`] for statistic `mean_jump`.
pub fn minimize_bandwidth_objective(mean_jump: f64, search: (f64, f64)) -> Result<f64> {
    let (lo, hi) = search;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid search interval ({lo}, {hi})")));
    }
    Ok(minimize_on_interval(|a| bandwidth_objective(a, mean_jump), lo, hi))
}

/// M-step for the bandwidth from pair particles.
pub fn a_update(particles: &WeightedParticles, search: (f64, f64)) -> Result<f64> {
    if particles.b() != 2 {
        return Err(Error::InvalidParameter("bandwidth update from pairs needs b = 2".into()));
    }
    minimize_bandwidth_objective(particles.mean_jump(), search)
}

/// `−(1/n) Σ_k Σ_i ω ln ν_a(x)`: bandwidth objective when only single states
/// are observed (b = 1).
fn stationary_objective(particles: &WeightedParticles, a: f64) -> f64 {
    let a = KernelParam(a);
    let n = particles.n_blocks();
    let total: f64 = (0..n)
        .map(|k| {
            particles
                .block_weights(k)
                .iter()
                .enumerate()
                .map(|(i, w)| w * a.log_stationary_unchecked(particles.state(k, i)[0]))
                .sum::<f64>()
        })
        .sum();
    -total / n as f64
}

/// Multinomial resampling of `n_f` particles per block. Block `k` draws from
/// `stream.child(k)`.
pub fn resample(particles: &WeightedParticles, n_f: usize, stream: SeedPath) -> Result<ResampledParticles> {
    if n_f == 0 {
        return Err(Error::InvalidParameter("resample size must be at least 1".into()));
    }
    let b = particles.b();
    let blocks = (0..particles.n_blocks())
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let mut rng = stream.child(k as u64).rng();
            let dist = WeightedIndex::new(particles.block_weights(k))
                .map_err(|e| Error::Internal(format!("resampling block {k}: {e}")))?;
            let mut out = Vec::with_capacity(n_f * b);
            for _ in 0..n_f {
                out.extend_from_slice(particles.state(k, dist.sample(&mut rng)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResampledParticles {
        b,
        per_block: n_f,
        states: blocks.concat(),
    })
}

/// Regression M-step from resampled particles: each latent coordinate is
/// paired with its observation row, weight `1/N_f`, and `f` minimizes
/// `½ Σ w ‖y − f(x)‖² + λ_n ‖f''‖²`.
pub fn f_update(resampled: &ResampledParticles, obs: &ObservationBlocks, lambda_n: f64) -> Result<SplineFunction> {
    if resampled.b() != obs.b() || resampled.n_blocks() != obs.n() {
        return Err(Error::InvalidParameter("particles do not match the observation blocks".into()));
    }
    let ell = obs.ell();
    let b = obs.b();
    let per = resampled.per_block();
    let total = obs.n() * per * b;
    let mut xs = Vec::with_capacity(total);
    let mut ys = Vec::with_capacity(total * ell);
    for k in 0..obs.n() {
        let y = obs.block(k);
        for i in 0..per {
            for (j, &x) in resampled.state(k, i).iter().enumerate() {
                xs.push(x);
                ys.extend_from_slice(&y[j * ell..(j + 1) * ell]);
            }
        }
    }
    let ws = vec![1.0 / per as f64; total];
    fit_regression_step(WeightedPoints::from_flat(ell, xs, ys, ws)?, lambda_n)
}

/// The smoothing-spline fit behind the regression M-step. The criterion
/// `½ Σ w r² + λ_n J` equals half of `Σ w r² + 2 λ_n J`.
pub fn fit_regression_step(points: WeightedPoints, lambda_n: f64) -> Result<SplineFunction> {
    fit_smoothing_spline(&points, 2.0 * lambda_n)
}

/// Regression M-step with exact grid posteriors (quadrature mode): weights
/// are the per-coordinate posterior marginals on the grid.
fn f_update_quadrature(particles: &WeightedParticles, obs: &ObservationBlocks, lambda_n: f64) -> Result<SplineFunction> {
    let nodes = quadrature::latent_rule().nodes.clone();
    let m = nodes.len();
    let ell = obs.ell();
    let b = obs.b();
    let mut xs = Vec::with_capacity(obs.n() * b * m);
    let mut ys = Vec::with_capacity(obs.n() * b * m * ell);
    let mut ws = Vec::with_capacity(obs.n() * b * m);
    for k in 0..obs.n() {
        let w = particles.block_weights(k);
        let y = obs.block(k);
        let mut marg = vec![vec![0.0; m]; b];
        if b == 1 {
            marg[0].copy_from_slice(w);
        } else {
            for i in 0..m {
                for j in 0..m {
                    let p = w[i * m + j];
                    marg[0][i] += p;
                    marg[1][j] += p;
                }
            }
        }
        for (j, mj) in marg.iter().enumerate() {
            for (i, &p) in mj.iter().enumerate() {
                xs.push(nodes[i]);
                ys.extend_from_slice(&y[j * ell..(j + 1) * ell]);
                ws.push(p);
            }
        }
    }
    fit_regression_step(WeightedPoints::from_flat(ell, xs, ys, ws)?, lambda_n)
}

/// Penalized pseudo-log-likelihood with curvature penalty, latent integrals
/// by quadrature. Returns `(penalized, pll, curvature)`.
pub fn exact_objective(
    f: &SplineFunction,
    latent: &LatentDensity,
    obs: &ObservationBlocks,
    lambda_n: f64,
) -> Result<(f64, f64, f64)> {
    let pll = crate::density::pseudo_log_likelihood(f, latent, obs)?;
    let curvature = f.curvature_norm_sq();
    Ok((pll - lambda_n * curvature, pll, curvature))
}

/// Particle-bootstrap standard error of the self-normalized estimate of
/// `Q(θ_new; θ_old) − Q(θ_old; θ_old)`.
fn bootstrap_increment_se(
    particles: &WeightedParticles,
    obs: &ObservationBlocks,
    old: (&LatentDensity, &SplineFunction),
    new: (&LatentDensity, &SplineFunction),
    replicates: usize,
    stream: SeedPath,
) -> f64 {
    if replicates < 2 || particles.log_weights.is_empty() {
        return 0.0;
    }
    let ell = obs.ell();
    let per = particles.per_block();
    // per-particle log-density increments
    let deltas: Vec<Vec<f64>> = (0..obs.n())
        .into_par_iter()
        .map(|k| {
            let y = obs.block(k);
            let mut buf = vec![0.0; ell];
            (0..per)
                .map(|i| {
                    let x = particles.state(k, i);
                    complete_log_density(new.0, new.1, x, y, &mut buf)
                        - complete_log_density(old.0, old.1, x, y, &mut buf)
                })
                .collect()
        })
        .collect();
    let totals: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r as u64).rng();
            let mut total = 0.0;
            for (k, d) in deltas.iter().enumerate() {
                let lw = particles.block_log_weights(k);
                let mut num = 0.0;
                let mut den = 0.0;
                for _ in 0..per {
                    let i = rng.random_range(0..per);
                    let w = lw[i].exp();
                    num += w * d[i];
                    den += w;
                }
                if den > 0.0 {
                    total += num / den;
                }
            }
            total
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / replicates as f64;
    let var = totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (replicates - 1) as f64;
    var.sqrt()
}

/// Run the configured number of EM iterations.
pub fn run_em(config: &EmConfig, obs: &ObservationBlocks) -> Result<EmState> {
    run_em_with(config, obs, |_| Ok(()))
}

/// [`run_em`] with a callback invoked after every iteration.
pub fn run_em_with<C>(config: &EmConfig, obs: &ObservationBlocks, mut on_iter: C) -> Result<EmState>
where
    C: FnMut(&EmState) -> Result<()>,
{
    config.validate()?;
    if obs.b() != config.b {
        return Err(Error::InvalidParameter(format!(
            "config expects b = {} but observations use b = {}",
            config.b,
            obs.b()
        )));
    }
    if obs.ell() != config.f_init.ell() {
        return Err(Error::InvalidParameter("f_init dimension differs from observations".into()));
    }
    let root = SeedPath::new(config.seed);
    let mut a_hat = config.a_init;
    let mut f_hat = config.f_init.clone();
    let (initial_objective, ..) = exact_objective(&f_hat, &config.latent(KernelParam::new(a_hat)?), obs, config.lambda_n)?;
    let mut state = EmState {
        a_hat,
        f_hat: f_hat.clone(),
        iter: 0,
        trace: Vec::with_capacity(config.iterations),
        initial_objective,
    };
    for p in 0..config.iterations {
        let iter_key = p as u64;
        let old_latent = config.latent(KernelParam::new(a_hat)?);
        let (particles_a, particles_f) = match config.mode {
            EStepMode::Quadrature => {
                let w = e_step_quadrature(&f_hat, &old_latent, obs)?;
                (w.clone(), w)
            }
            EStepMode::MonteCarlo => {
                let pa = if config.estimate_a {
                    Some(e_step(&f_hat, &old_latent, obs, config.n_a, root.child2(purpose::E_STEP_A, iter_key))?)
                } else {
                    None
                };
                let pf = e_step(&f_hat, &old_latent, obs, config.n_f, root.child2(purpose::E_STEP_F, iter_key))?;
                (pa.unwrap_or_else(|| pf.clone()), pf)
            }
        };
        particles_a.validate()?;
        particles_f.validate()?;

        let mut mean_jump = f64::NAN;
        let new_a = if config.estimate_a {
            let objective: Box<dyn Fn(f64) -> f64 + Sync> = if config.b == 2 {
                let d = particles_a.mean_jump();
                mean_jump = d;
                Box::new(move |a| bandwidth_objective(a, d))
            } else {
                let pa = &particles_a;
                Box::new(move |a| stationary_objective(pa, a))
            };
            let (lo, hi) = config.a_search;
            let candidate = minimize_on_interval(&objective, lo, hi);
            // keep the current value unless the candidate improves on it
            if a_hat >= lo && a_hat <= hi && objective(a_hat) <= objective(candidate) {
                a_hat
            } else {
                candidate
            }
        } else {
            if config.b == 2 {
                mean_jump = particles_a.mean_jump();
            }
            a_hat
        };

        let new_f = match config.mode {
            EStepMode::Quadrature => f_update_quadrature(&particles_f, obs, config.lambda_n)?,
            EStepMode::MonteCarlo => {
                let resampled = resample(&particles_f, config.n_f, root.child2(purpose::RESAMPLE, iter_key))?;
                f_update(&resampled, obs, config.lambda_n)?
            }
        };

        let new_latent = config.latent(KernelParam::new(new_a)?);
        let mc_se = match config.mode {
            EStepMode::Quadrature => 0.0,
            EStepMode::MonteCarlo => bootstrap_increment_se(
                &particles_f,
                obs,
                (&old_latent, &f_hat),
                (&new_latent, &new_f),
                config.bootstrap_replicates,
                root.child2(purpose::BOOTSTRAP, iter_key),
            ),
        };
        let (penalized, pll, curvature) = exact_objective(&new_f, &new_latent, obs, config.lambda_n)?;
        a_hat = new_a;
        f_hat = new_f;
        state.a_hat = a_hat;
        state.f_hat = f_hat.clone();
        state.iter = p + 1;
        state.trace.push(IterationRecord {
            iter: p + 1,
            a_hat,
            penalized_pll: penalized,
            pll,
            curvature,
            mean_jump,
            mean_ess: particles_f.mean_ess(),
            mc_se,
        });
        on_iter(&state)?;
    }
    Ok(state)
}
