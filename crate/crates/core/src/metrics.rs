//! Estimation-quality metrics that respect the reflection symmetry of the
//! problem: `f` is only identifiable up to `x -> x` and `x -> 1 - x`.

use crate::quadrature;
use crate::regression::{tabulate, RegressionFn};

/// Node count of the L² error quadrature.
pub const L2_NODES: usize = 501;

/// The isometries of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Isometry {
    Identity,
    Reflection,
}

impl Isometry {
    pub const ALL: [Isometry; 2] = [Isometry::Identity, Isometry::Reflection];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Reflection => 1.0 - x,
        }
    }

    pub fn compose(self, other: Self) -> Self {
        if self == other {
            Self::Identity
        } else {
            Self::Reflection
        }
    }

    pub fn inverse(self) -> Self {
        self
    }
}

/// L² error of `f_hat` against `f_ref ∘ φ` minimized over the isometry group.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryError {
    pub total: f64,
    /// Per-component errors under the same minimizing isometry.
    pub per_component: Vec<f64>,
    pub isometry: Isometry,
}

pub fn l2_error_up_to_isometry(f_hat: &dyn RegressionFn, f_ref: &dyn RegressionFn) -> IsometryError {
    let gl = quadrature::rule(L2_NODES);
    let ell = f_hat.dim();
    let est = tabulate(f_hat, &gl.nodes);
    let mut best: Option<IsometryError> = None;
    for iso in Isometry::ALL {
        let moved: Vec<f64> = gl.nodes.iter().map(|&x| iso.apply(x)).collect();
        let reference = tabulate(f_ref, &moved);
        let mut per = vec![0.0; ell];
        for (i, w) in gl.weights.iter().enumerate() {
            for c in 0..ell {
                let d = est[i * ell + c] - reference[i * ell + c];
                per[c] += w * d * d;
            }
        }
        let total = per.iter().sum::<f64>().sqrt();
        let candidate = IsometryError {
            total,
            per_component: per.into_iter().map(f64::sqrt).collect(),
            isometry: iso,
        };
        if best.as_ref().is_none_or(|b| candidate.total < b.total) {
            best = Some(candidate);
        }
    }
    best.expect("isometry group is nonempty")
}

/// Hausdorff distance between `f1([0,1])` and `f2([0,1])`, each discretized on
/// `grid_size` equispaced points. Returns `(distance, grid spacing)`.
pub fn hausdorff_image_distance(f1: &dyn RegressionFn, f2: &dyn RegressionFn, grid_size: usize) -> (f64, f64) {
    let grid_size = grid_size.max(2);
    let step = 1.0 / (grid_size - 1) as f64;
    let xs: Vec<f64> = (0..grid_size).map(|i| i as f64 * step).collect();
    let a = tabulate(f1, &xs);
    let b = tabulate(f2, &xs);
    (point_set_hausdorff(&a, &b, f1.dim()), step)
}

/// Exact Hausdorff distance between two finite point sets in `R^dim`,
/// row-major.
pub fn point_set_hausdorff(a: &[f64], b: &[f64], dim: usize) -> f64 {
    directed(a, b, dim).max(directed(b, a, dim))
}

fn directed(a: &[f64], b: &[f64], dim: usize) -> f64 {
    a.chunks_exact(dim)
        .map(|p| {
            b.chunks_exact(dim)
                .map(|q| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Signed bandwidth error.
pub fn parameter_error(a_hat: f64, a_star: f64) -> f64 {
    a_hat - a_star
}
