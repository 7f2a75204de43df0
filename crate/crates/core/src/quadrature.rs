//! Fixed-order Gauss–Legendre rules on the unit interval.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Node count for one-dimensional latent integrals.
pub const LATENT_NODES: usize = 201;
/// Node count for the outer variable of nested two-dimensional oracles.
pub const NESTED_NODES: usize = 401;

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let nf = n as f64;
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, z);
            dp = if d.is_finite() { d } else { dp };
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // z is the i-th largest root on [-1, 1].
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            nodes[i] = 0.5 * (1.0 - z);
            weights[n - 1 - i] = 0.5 * w;
            weights[i] = 0.5 * w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.5;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over `[lo, hi]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let width = hi - lo;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(lo + width * t))
            .sum::<f64>()
            * width
    }

    /// Integral over `[lo, hi]` split at the interior `breaks`, so integrands
    /// with kinks at those points keep spectral accuracy.
    pub fn integrate_split<F: FnMut(f64) -> f64>(
        &self,
        lo: f64,
        hi: f64,
        breaks: &[f64],
        mut f: F,
    ) -> f64 {
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&b| b > lo && b < hi)
            .collect();
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        let mut left = lo;
        for right in cuts.into_iter().chain(std::iter::once(hi)) {
            total += self.integrate(left, right, &mut f);
            left = right;
        }
        total
    }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Shared, lazily built rule with `n` nodes.
pub fn rule(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
        .clone()
}

/// The default latent rule (201 nodes).
pub fn latent_rule() -> Arc<GaussLegendre> {
    rule(LATENT_NODES)
}
