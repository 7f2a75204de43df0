//! Block observation densities `p_{f,ν}`, the pseudo-log-likelihood, the
//! penalized objective and Hellinger distances between block densities.
//!
//! Latent integrals use the fixed 201-node Gauss–Legendre rule per latent
//! coordinate (a 201 x 201 tensor grid for pairs) and are evaluated in the
//! log domain, scaled by the largest Gaussian factor of each block.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, KernelParam, Trajectory};
use crate::quadrature::{self, GaussLegendre};
use crate::regression::{RegressionFn, Reflected};
use crate::rng::{purpose, SeedPath};
use crate::spline::SplineFunction;

type Density1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Density2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Density of the latent block `X_k` on `[0, 1]^b`.
#[derive(Clone)]
pub enum LatentDensity {
    /// Lebesgue density 1 on `[0, 1]` (b = 1).
    Uniform,
    /// `ν_a` (b = 1).
    Stationary(KernelParam),
    /// `ν_a(x) q_a(x, x')` (b = 2).
    Pair(KernelParam),
    /// Arbitrary density on `[0, 1]` (b = 1).
    Custom1(Density1),
    /// Arbitrary density on `[0, 1]^2` (b = 2).
    Custom2(Density2),
}

impl fmt::Debug for LatentDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "Uniform"),
            Self::Stationary(a) => write!(f, "Stationary({})", a.value()),
            Self::Pair(a) => write!(f, "Pair({})", a.value()),
            Self::Custom1(_) => write!(f, "Custom1(..)"),
            Self::Custom2(_) => write!(f, "Custom2(..)"),
        }
    }
}

impl LatentDensity {
    pub fn custom1<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Custom1(Arc::new(f))
    }

    pub fn custom2<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Custom2(Arc::new(f))
    }

    /// Block length this density describes.
    pub fn block_len(&self) -> usize {
        match self {
            Self::Uniform | Self::Stationary(_) | Self::Custom1(_) => 1,
            Self::Pair(_) | Self::Custom2(_) => 2,
        }
    }

    /// Density value at a latent block (length `block_len`).
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Uniform => 1.0,
            Self::Stationary(a) => a.log_stationary_unchecked(x[0]).exp(),
            Self::Pair(a) => {
                (a.log_stationary_unchecked(x[0]) + a.log_transition_unchecked(x[0], x[1])).exp()
            }
            Self::Custom1(f) => f(x[0]),
            Self::Custom2(f) => f(x[0], x[1]),
        }
    }

    /// Image under `x -> 1 - x` applied to every latent coordinate.
    pub fn reflected(&self) -> Self {
        match self.clone() {
            Self::Uniform => Self::Uniform,
            Self::Stationary(a) => Self::custom1(move |x| a.log_stationary_unchecked(1.0 - x).exp()),
            Self::Pair(a) => Self::custom2(move |x, y| {
                (a.log_stationary_unchecked(1.0 - x) + a.log_transition_unchecked(1.0 - x, 1.0 - y)).exp()
            }),
            Self::Custom1(f) => Self::custom1(move |x| f(1.0 - x)),
            Self::Custom2(f) => Self::custom2(move |x, y| f(1.0 - x, 1.0 - y)),
        }
    }

    /// Total mass over `[0, 1]^b`. Kernel families are integrated with the
    /// rule split at the kink of `q_a`, so this is accurate to ~1e-13.
    pub fn total_mass(&self) -> f64 {
        let gl = quadrature::latent_rule();
        match self {
            Self::Pair(_) => gl.integrate(0.0, 1.0, |x| {
                gl.integrate_split(0.0, 1.0, &[x], |y| self.value(&[x, y]))
            }),
            Self::Custom2(_) => gl.integrate(0.0, 1.0, |x| gl.integrate(0.0, 1.0, |y| self.value(&[x, y]))),
            _ => gl.integrate(0.0, 1.0, |x| self.value(&[x])),
        }
    }

    /// Draw one latent block, for Monte Carlo integration.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Self::Uniform => Ok(vec![rng.random()]),
            Self::Stationary(a) => Ok(vec![model::sample_stationary(*a, rng)?]),
            Self::Pair(a) => {
                let x = model::sample_stationary(*a, rng)?;
                Ok(vec![x, model::sample_transition(*a, x, rng)?])
            }
            Self::Custom1(_) | Self::Custom2(_) => Err(Error::InvalidParameter(
                "custom latent densities cannot be sampled; put a kernel density first".into(),
            )),
        }
    }
}

/// `n` consecutive, non-overlapping blocks of `b` observations in `R^ell`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlocks {
    b: usize,
    ell: usize,
    data: Vec<f64>,
}

impl ObservationBlocks {
    /// Group observation rows into blocks of `b`; a trailing partial block is
    /// dropped.
    pub fn from_rows(rows: &[Vec<f64>], b: usize) -> Result<Self> {
        if !(1..=2).contains(&b) {
            return Err(Error::InvalidParameter(format!("block length must be 1 or 2, got {b}")));
        }
        let n = rows.len() / b;
        if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "{} observations do not fill one block of length {b}",
                rows.len()
            )));
        }
        let ell = rows[0].len();
        if ell == 0 || rows.iter().any(|r| r.len() != ell) {
            return Err(Error::InvalidParameter("observations must share a positive dimension".into()));
        }
        let data: Vec<f64> = rows[..n * b].concat();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observations".into()));
        }
        Ok(Self { b, ell, data })
    }

    pub fn from_trajectory(traj: &Trajectory, b: usize) -> Result<Self> {
        Self::from_rows(&traj.observations, b)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn n(&self) -> usize {
        self.data.len() / (self.b * self.ell)
    }

    /// Block `k` flattened as `b` rows of `ell` values.
    pub fn block(&self, k: usize) -> &[f64] {
        let len = self.b * self.ell;
        &self.data[k * len..(k + 1) * len]
    }

    pub fn blocks(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.b * self.ell)
    }

    /// The first `n` blocks.
    pub fn truncated(&self, n: usize) -> Self {
        let len = self.b * self.ell;
        Self {
            b: self.b,
            ell: self.ell,
            data: self.data[..n.min(self.n()) * len].to_vec(),
        }
    }
}

/// Complexity functional used in the penalized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `‖f‖_{W^{s,2}}^{1/υ}`.
    Sobolev { s: usize, upsilon: f64 },
    /// `‖f''‖²_{L²}`.
    Curvature,
}

impl Penalty {
    pub fn value(&self, f: &SplineFunction) -> Result<f64> {
        match *self {
            Self::Sobolev { s, upsilon } => f.sobolev_complexity(s, upsilon),
            Self::Curvature => Ok(f.curvature_norm_sq()),
        }
    }
}

fn log_gauss_const(dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln()
}

/// Quadrature representation of `p_{f,ν}`: latent nodes, their combined
/// weights (rule weight times latent density) and `f` at the nodes.
#[derive(Debug, Clone)]
pub struct BlockDensityEvaluator {
    b: usize,
    ell: usize,
    nodes: Vec<f64>,
    f_at_nodes: Vec<f64>,
    /// b = 1: `w_i ν(x_i)`; b = 2: row-major `w_i w_j ν(x_i, x_j)`.
    latent_weights: Vec<f64>,
}

impl BlockDensityEvaluator {
    pub fn new(f: &dyn RegressionFn, nu: &LatentDensity) -> Result<Self> {
        Self::with_rule(f, nu, &quadrature::latent_rule())
    }

    pub fn with_rule(f: &dyn RegressionFn, nu: &LatentDensity, rule: &GaussLegendre) -> Result<Self> {
        let b = nu.block_len();
        let ell = f.dim();
        let nodes = rule.nodes.clone();
        let f_at_nodes = crate::regression::tabulate(f, &nodes);
        if f_at_nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression function at quadrature nodes".into()));
        }
        let m = nodes.len();
        let latent_weights = match b {
            1 => (0..m).map(|i| rule.weights[i] * nu.value(&[nodes[i]])).collect::<Vec<_>>(),
            _ => {
                let mut w = Vec::with_capacity(m * m);
                for i in 0..m {
                    for j in 0..m {
                        w.push(rule.weights[i] * rule.weights[j] * nu.value(&[nodes[i], nodes[j]]));
                    }
                }
                w
            }
        };
        if latent_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite("latent density at quadrature nodes".into()));
        }
        Ok(Self {
            b,
            ell,
            nodes,
            f_at_nodes,
            latent_weights,
        })
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn latent_weights(&self) -> &[f64] {
        &self.latent_weights
    }

    /// Scaled Gaussian factors `exp(-½‖y - f(x_i)‖² - max)` and the max.
    fn factors(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let mut logs: Vec<f64> = self
            .f_at_nodes
            .chunks_exact(self.ell)
            .map(|fx| -0.5 * fx.iter().zip(y).map(|(f, y)| (y - f) * (y - f)).sum::<f64>())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut logs {
            *l = (*l - top).exp();
        }
        (logs, top)
    }

    fn check_block(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.b * self.ell {
            return Err(Error::InvalidParameter(format!(
                "block has {} values, expected b * ell = {}",
                y.len(),
                self.b * self.ell
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation block".into()));
        }
        Ok(())
    }

    /// `ln p_{f,ν}(y)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        self.check_block(y)?;
        let (sum, shift) = match self.b {
            1 => {
                let (a, s) = self.factors(y);
                (a.iter().zip(&self.latent_weights).map(|(a, w)| a * w).sum::<f64>(), s)
            }
            _ => {
                let (a0, s0) = self.factors(&y[..self.ell]);
                let (a1, s1) = self.factors(&y[self.ell..]);
                let m = self.nodes.len();
                let mut total = 0.0;
                for i in 0..m {
                    if a0[i] == 0.0 {
                        continue;
                    }
                    let row = &self.latent_weights[i * m..(i + 1) * m];
                    let inner: f64 = row.iter().zip(&a1).map(|(w, a)| w * a).sum();
                    total += a0[i] * inner;
                }
                (total, s0 + s1)
            }
        };
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NonFinite(format!(
                "block density underflowed (scaled sum {sum})"
            )));
        }
        Ok(sum.ln() + shift + log_gauss_const(self.b * self.ell))
    }

    /// Posterior weights of the latent nodes given `y` (length `m^b`,
    /// normalized) together with `ln p_{f,ν}(y)`.
    pub fn posterior(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_block(y)?;
        let (mut post, shift) = match self.b {
            1 => {
                let (a, s) = self.factors(y);
                (a.iter().zip(&self.latent_weights).map(|(a, w)| a * w).collect::<Vec<_>>(), s)
            }
            _ => {
                let (a0, s0) = self.factors(&y[..self.ell]);
                let (a1, s1) = self.factors(&y[self.ell..]);
                let m = self.nodes.len();
                let mut post = Vec::with_capacity(m * m);
                for i in 0..m {
                    for j in 0..m {
                        post.push(a0[i] * self.latent_weights[i * m + j] * a1[j]);
                    }
                }
                (post, s0 + s1)
            }
        };
        let total: f64 = post.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonFinite("posterior normalizer".into()));
        }
        for p in &mut post {
            *p /= total;
        }
        Ok((post, total.ln() + shift + log_gauss_const(self.b * self.ell)))
    }
}

/// `p_{f,ν}(y)` for one block `y` (b rows of ell values, flattened).
pub fn block_density(f: &dyn RegressionFn, nu: &LatentDensity, y_block: &[f64]) -> Result<f64> {
    Ok(BlockDensityEvaluator::new(f, nu)?.log_density(y_block)?.exp())
}

/// `Σ_k ln p_{f,ν}(Y_k)`.
pub fn pseudo_log_likelihood(f: &dyn RegressionFn, nu: &LatentDensity, obs: &ObservationBlocks) -> Result<f64> {
    check_compatible(f, nu, obs)?;
    let eval = BlockDensityEvaluator::new(f, nu)?;
    let terms = obs
        .blocks()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|y| eval.log_density(y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

pub(crate) fn check_compatible(f: &dyn RegressionFn, nu: &LatentDensity, obs: &ObservationBlocks) -> Result<()> {
    if obs.b() != nu.block_len() {
        return Err(Error::InvalidParameter(format!(
            "observations use blocks of {} but the latent density has block length {}",
            obs.b(),
            nu.block_len()
        )));
    }
    if obs.ell() != f.dim() {
        return Err(Error::InvalidParameter(format!(
            "observations have dimension {} but f maps into R^{}",
            obs.ell(),
            f.dim()
        )));
    }
    Ok(())
}

/// `Σ_k ln p_{f,ν}(Y_k) − λ I(f)`.
pub fn penalized_objective(
    f: &SplineFunction,
    nu: &LatentDensity,
    obs: &ObservationBlocks,
    lambda: f64,
    penalty: Penalty,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let pll = pseudo_log_likelihood(f, nu, obs)?;
    if lambda == 0.0 {
        return Ok(pll);
    }
    Ok(pll - lambda * penalty.value(f)?)
}

/// `λ_n = c log(n) √n`.
pub fn lambda_schedule(c: f64, n: usize) -> f64 {
    let n = n as f64;
    c * n.ln() * n.sqrt()
}

/// How the Hellinger integral over observation space is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HellingerMethod {
    /// Tensor Gauss–Legendre over the box `[-(‖f‖∞ + 8), ‖f‖∞ + 8]` per
    /// observation coordinate, `nodes_per_dim` nodes each.
    Quadrature { nodes_per_dim: usize },
    /// Average of `√(p₂/p₁)` over `samples` draws from `p₁`.
    MonteCarlo { samples: usize, seed: u64 },
}

impl HellingerMethod {
    pub fn quadrature() -> Self {
        Self::Quadrature { nodes_per_dim: 64 }
    }
}

/// Half-width padding of the Hellinger integration box.
pub const HELLINGER_PAD: f64 = 8.0;
const MC_CHUNK: usize = 4096;

/// Hellinger distance between `p_{f1,ν1}` and `p_{f2,ν2}`.
pub fn hellinger(
    f1: &dyn RegressionFn,
    nu1: &LatentDensity,
    f2: &dyn RegressionFn,
    nu2: &LatentDensity,
    method: HellingerMethod,
) -> Result<f64> {
    if nu1.block_len() != nu2.block_len() || f1.dim() != f2.dim() {
        return Err(Error::InvalidParameter(
            "Hellinger distance needs densities with equal block length and dimension".into(),
        ));
    }
    let e1 = BlockDensityEvaluator::new(f1, nu1)?;
    let e2 = BlockDensityEvaluator::new(f2, nu2)?;
    let h2 = match method {
        HellingerMethod::Quadrature { nodes_per_dim } => hellinger_sq_quadrature(&e1, &e2, nodes_per_dim)?,
        HellingerMethod::MonteCarlo { samples, seed } => hellinger_sq_mc(f1, nu1, &e1, &e2, samples, seed)?,
    };
    Ok(h2.clamp(0.0, 1.0).sqrt())
}

fn hellinger_sq_quadrature(e1: &BlockDensityEvaluator, e2: &BlockDensityEvaluator, m: usize) -> Result<f64> {
    let ell = e1.ell;
    let b = e1.b;
    if m < 2 {
        return Err(Error::InvalidParameter("need at least 2 nodes per dimension".into()));
    }
    if b * ell > 4 {
        return Err(Error::InvalidParameter(format!(
            "quadrature Hellinger supports at most 4 observation coordinates, got {}",
            b * ell
        )));
    }
    let sup = e1
        .f_at_nodes
        .iter()
        .chain(&e2.f_at_nodes)
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let radius = sup + HELLINGER_PAD;
    let gl = quadrature::rule(m);
    // tensor grid over one observation row in R^ell
    let g = m.pow(ell as u32);
    let mut points = vec![0.0; g * ell];
    let mut weights = vec![1.0; g];
    for idx in 0..g {
        let mut rem = idx;
        for d in 0..ell {
            let k = rem % m;
            rem /= m;
            points[idx * ell + d] = -radius + 2.0 * radius * gl.nodes[k];
            weights[idx] *= 2.0 * radius * gl.weights[k];
        }
    }
    // Unscaled Gaussian factors: the box keeps every exponent above -0.5 (2 radius)^2 ell.
    let factor_matrix = |e: &BlockDensityEvaluator| -> Vec<f64> {
        let c = log_gauss_const(ell).exp();
        let mut out = Vec::with_capacity(g * e.nodes.len());
        for p in points.chunks_exact(ell) {
            for fx in e.f_at_nodes.chunks_exact(ell) {
                let d2: f64 = fx.iter().zip(p).map(|(f, y)| (y - f) * (y - f)).sum();
                out.push(c * (-0.5 * d2).exp());
            }
        }
        out
    };
    let a1 = factor_matrix(e1);
    let a2 = factor_matrix(e2);
    let nodes = e1.nodes.len();
    let h2 = if b == 1 {
        (0..g)
            .map(|r| {
                let p1: f64 = a1[r * nodes..(r + 1) * nodes].iter().zip(&e1.latent_weights).map(|(a, w)| a * w).sum();
                let p2: f64 = a2[r * nodes..(r + 1) * nodes].iter().zip(&e2.latent_weights).map(|(a, w)| a * w).sum();
                let d = p1.sqrt() - p2.sqrt();
                weights[r] * d * d
            })
            .sum::<f64>()
    } else {
        // p(y0_r, y1_s) = Σ_ij A[r,i] W_ij A[s,j] = (A W A^T)[r,s]
        let joint = |a: &[f64], w: &[f64]| -> Vec<f64> {
            // C = W A^T, nodes x g
            let mut c = vec![0.0; nodes * g];
            for i in 0..nodes {
                let wrow = &w[i * nodes..(i + 1) * nodes];
                for s in 0..g {
                    let arow = &a[s * nodes..(s + 1) * nodes];
                    c[i * g + s] = wrow.iter().zip(arow).map(|(x, y)| x * y).sum();
                }
            }
            let mut p = vec![0.0; g * g];
            p.par_chunks_mut(g).enumerate().for_each(|(r, prow)| {
                let arow = &a[r * nodes..(r + 1) * nodes];
                for (i, &ar) in arow.iter().enumerate() {
                    if ar == 0.0 {
                        continue;
                    }
                    for (pv, cv) in prow.iter_mut().zip(&c[i * g..(i + 1) * g]) {
                        *pv += ar * cv;
                    }
                }
            });
            p
        };
        let p1 = joint(&a1, &e1.latent_weights);
        let p2 = joint(&a2, &e2.latent_weights);
        (0..g)
            .map(|r| {
                (0..g)
                    .map(|s| {
                        let d = p1[r * g + s].sqrt() - p2[r * g + s].sqrt();
                        weights[r] * weights[s] * d * d
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
    };
    Ok(0.5 * h2)
}

fn hellinger_sq_mc(
    f1: &dyn RegressionFn,
    nu1: &LatentDensity,
    e1: &BlockDensityEvaluator,
    e2: &BlockDensityEvaluator,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameter("Monte Carlo Hellinger needs at least one sample".into()));
    }
    let stream = SeedPath::new(seed).child(purpose::HELLINGER);
    let ell = e1.ell;
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut rng = stream.child(c as u64).rng();
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut y = vec![0.0; e1.b * ell];
            let mut total = 0.0;
            for _ in 0..count {
                let x = nu1.sample(&mut rng)?;
                for (row, &xj) in y.chunks_exact_mut(ell).zip(&x) {
                    f1.eval_into(xj, row);
                    for v in row.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *v += e;
                    }
                }
                let l1 = e1.log_density(&y)?;
                let l2 = e2.log_density(&y)?;
                total += (0.5 * (l2 - l1)).exp();
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(1.0 - sums.iter().sum::<f64>() / samples as f64)
}

/// `(f ∘ σ, ν ∘ σ)` with `σ(x) = 1 − x` on every latent coordinate.
pub fn reflect_model<F: RegressionFn + Clone>(f: &F, nu: &LatentDensity) -> (Reflected<F>, LatentDensity) {
    (Reflected(f.clone()), nu.reflected())
}
