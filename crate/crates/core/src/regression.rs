//! Vector-valued regression functions on `[0, 1]`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// A function `[0, 1] -> R^ell`.
///
/// `eval_into` is the hot path and does not validate `x`; callers only pass
/// points of the unit interval.
pub trait RegressionFn: Send + Sync {
    fn dim(&self) -> usize;

    fn eval_into(&self, x: f64, out: &mut [f64]);

    fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

pub type SharedFn = Arc<dyn RegressionFn>;

impl<T: RegressionFn + ?Sized> RegressionFn for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

impl<T: RegressionFn + ?Sized> RegressionFn for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

/// `x -> (cos(pi x), sin(pi x))`, the half circle used as the default truth.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HalfCircle;

impl RegressionFn for HalfCircle {
    fn dim(&self) -> usize {
        2
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        let (s, c) = (PI * x).sin_cos();
        out[0] = c;
        out[1] = s;
    }
}

/// `x -> (x, 0, ..., 0)`, the default starting point of the EM iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstCoordinateRamp {
    pub ell: usize,
}

impl RegressionFn for FirstCoordinateRamp {
    fn dim(&self) -> usize {
        self.ell
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        out.fill(0.0);
        out[0] = x;
    }
}

/// Constant function.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant(pub Vec<f64>);

impl RegressionFn for Constant {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval_into(&self, _x: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// `f ∘ σ` with `σ(x) = 1 - x`.
#[derive(Debug, Clone)]
pub struct Reflected<F>(pub F);

impl<F: RegressionFn> RegressionFn for Reflected<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        self.0.eval_into(1.0 - x, out)
    }
}

/// Adapter for plain closures.
pub struct FnRegression<F> {
    dim: usize,
    f: F,
}

impl<F> FnRegression<F>
where
    F: Fn(f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> fmt::Debug for FnRegression<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnRegression").field("dim", &self.dim).finish()
    }
}

impl<F> RegressionFn for FnRegression<F>
where
    F: Fn(f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Values of `f` at each of `xs`, row-major `xs.len() x dim`.
pub fn tabulate(f: &dyn RegressionFn, xs: &[f64]) -> Vec<f64> {
    let ell = f.dim();
    let mut out = vec![0.0; xs.len() * ell];
    for (row, &x) in out.chunks_exact_mut(ell).zip(xs) {
        f.eval_into(x, row);
    }
    out
}

/// Largest absolute component of `f` over `n` equispaced points.
pub fn sup_norm(f: &dyn RegressionFn, n: usize) -> f64 {
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    tabulate(f, &xs).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
