//! Python bindings. Rust errors surface as `ValueError`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nphmm::density::{self, HellingerMethod, LatentDensity, ObservationBlocks};
use nphmm::diagnostics;
use nphmm::em::{self, EStepMode, EmConfig};
use nphmm::experiment::{self, ExperimentConfig};
use nphmm::metrics;
use nphmm::model::{self, KernelParam, TrueModel};
use nphmm::regression::HalfCircle;
use nphmm::spline::{self, SplineFunction, WeightedPoints};

fn py_err(e: nphmm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel(a: f64) -> PyResult<KernelParam> {
    KernelParam::new(a).map_err(py_err)
}

/// Latent block law: "uniform", "stationary" (needs `a`) or "pair" (needs `a`).
fn latent(kind: &str, a: Option<f64>) -> PyResult<LatentDensity> {
    let need_a = || a.ok_or_else(|| PyValueError::new_err(format!("latent {kind:?} needs a")));
    match kind {
        "uniform" => Ok(LatentDensity::Uniform),
        "stationary" => Ok(LatentDensity::Stationary(kernel(need_a()?)?)),
        "pair" => Ok(LatentDensity::Pair(kernel(need_a()?)?)),
        other => Err(PyValueError::new_err(format!(
            "unknown latent {other:?}, expected uniform, stationary or pair"
        ))),
    }
}

/// Natural cubic spline from `[0, 1]` to `R^ell`.
#[pyclass(name = "Spline", module = "nphmm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpline {
    inner: SplineFunction,
}

#[pymethods]
impl PySpline {
    /// Weighted cubic smoothing spline minimizing
    /// `sum w_i |y_i - f(x_i)|^2 + lam * int |f''|^2`.
    #[staticmethod]
    #[pyo3(signature = (xs, ys, lam, weights=None))]
    fn fit(xs: Vec<f64>, ys: Vec<Vec<f64>>, lam: f64, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let ws = weights.unwrap_or_else(|| vec![1.0; xs.len()]);
        let pts = WeightedPoints::new(xs, ys, ws).map_err(py_err)?;
        let inner = spline::fit_smoothing_spline(&pts, lam).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Natural interpolating spline through `(knots[i], values[i])`.
    #[staticmethod]
    fn interpolate(knots: Vec<f64>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        let ell = values.first().map_or(0, Vec::len);
        let by_component = (0..ell).map(|j| values.iter().map(|v| v[j]).collect()).collect();
        let inner = SplineFunction::interpolate(knots, by_component).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// The affine map `x -> intercept + slope * x`.
    #[staticmethod]
    fn linear(intercept: Vec<f64>, slope: Vec<f64>) -> PyResult<Self> {
        let inner = SplineFunction::linear(&intercept, &slope).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = SplineFunction::from_text(text).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn ell(&self) -> usize {
        self.inner.ell()
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.inner.knots().to_vec()
    }

    fn __call__(&self, x: f64) -> PyResult<Vec<f64>> {
        self.inner.evaluate(x).map_err(py_err)
    }

    #[pyo3(signature = (x, order=1))]
    fn derivative(&self, x: f64, order: usize) -> PyResult<Vec<f64>> {
        self.inner.derivative(x, order).map_err(py_err)
    }

    /// `int_0^1 |f''|^2`.
    fn curvature_norm_sq(&self) -> f64 {
        self.inner.curvature_norm_sq()
    }

    fn sobolev_norm(&self, s: usize) -> PyResult<f64> {
        self.inner.sobolev_norm(s).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Spline(ell={}, knots={})", self.inner.ell(), self.inner.knots().len())
    }
}

/// Stationary density of the exponential-kernel chain.
#[pyfunction]
fn stationary_density(a: f64, x: f64) -> PyResult<f64> {
    model::stationary_density(kernel(a)?, x).map_err(py_err)
}

/// Transition density `q_a(x, x_next)`.
#[pyfunction]
fn transition_density(a: f64, x: f64, x_next: f64) -> PyResult<f64> {
    model::transition_density(kernel(a)?, x, x_next).map_err(py_err)
}

/// Simulate the half-circle model; returns `(states, observations)`.
#[pyfunction]
#[pyo3(signature = (n_obs, a=1.0, seed=0))]
fn simulate(n_obs: usize, a: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = TrueModel::half_circle(a).map_err(py_err)?;
    let t = model::simulate(&m, n_obs, seed).map_err(py_err)?;
    Ok((t.states, t.observations))
}

/// `c * log(n) * sqrt(n)`.
#[pyfunction]
fn lambda_schedule(c: f64, n: usize) -> f64 {
    density::lambda_schedule(c, n)
}

/// Sum of block log-densities of `observations` grouped in blocks of `b`.
#[pyfunction]
#[pyo3(signature = (f, observations, b, latent_kind="uniform", a=None))]
fn pseudo_log_likelihood(
    f: &PySpline,
    observations: Vec<Vec<f64>>,
    b: usize,
    latent_kind: &str,
    a: Option<f64>,
) -> PyResult<f64> {
    let obs = ObservationBlocks::from_rows(&observations, b).map_err(py_err)?;
    density::pseudo_log_likelihood(&f.inner, &latent(latent_kind, a)?, &obs).map_err(py_err)
}

/// Hellinger distance between the block laws of two fitted models.
#[pyfunction]
#[pyo3(signature = (f1, f2, latent1="uniform", a1=None, latent2="uniform", a2=None, nodes_per_dim=64))]
fn hellinger(
    f1: &PySpline,
    f2: &PySpline,
    latent1: &str,
    a1: Option<f64>,
    latent2: &str,
    a2: Option<f64>,
    nodes_per_dim: usize,
) -> PyResult<f64> {
    density::hellinger(
        &f1.inner,
        &latent(latent1, a1)?,
        &f2.inner,
        &latent(latent2, a2)?,
        HellingerMethod::Quadrature { nodes_per_dim },
    )
    .map_err(py_err)
}

/// L2 error of `f` against the half-circle curve, up to `x -> 1 - x`.
/// Returns `(total, per_component)`.
#[pyfunction]
fn l2_error_half_circle(f: &PySpline) -> (f64, Vec<f64>) {
    let e = metrics::l2_error_up_to_isometry(&f.inner, &HalfCircle);
    (e.total, e.per_component)
}

/// Hausdorff distance between the images of `f` and of the half-circle curve.
#[pyfunction]
#[pyo3(signature = (f, grid_size=1001))]
fn hausdorff_half_circle(f: &PySpline, grid_size: usize) -> f64 {
    metrics::hausdorff_image_distance(&f.inner, &HalfCircle, grid_size).0
}

/// Run the EM estimator. Returns `(a_hat, f_hat, trace)` where `trace` is a
/// list of per-iteration dicts.
#[pyfunction]
#[pyo3(signature = (
    observations, b, lambda_n, iterations=100, n_a=100, n_f=100, a_init=4.0,
    seed=0, estimate_a=None, quadrature=false, bootstrap_replicates=0
))]
#[allow(clippy::too_many_arguments)]
fn run_em<'py>(
    py: Python<'py>,
    observations: Vec<Vec<f64>>,
    b: usize,
    lambda_n: f64,
    iterations: usize,
    n_a: usize,
    n_f: usize,
    a_init: f64,
    seed: u64,
    estimate_a: Option<bool>,
    quadrature: bool,
    bootstrap_replicates: usize,
) -> PyResult<(f64, PySpline, Vec<Bound<'py, PyDict>>)> {
    let obs = ObservationBlocks::from_rows(&observations, b).map_err(py_err)?;
    let mut cfg = EmConfig::new(b, obs.ell(), lambda_n).map_err(py_err)?;
    cfg.iterations = iterations;
    cfg.n_a = n_a;
    cfg.n_f = n_f;
    cfg.a_init = a_init;
    cfg.seed = seed;
    cfg.estimate_a = estimate_a.unwrap_or(b == 2);
    cfg.mode = if quadrature { EStepMode::Quadrature } else { EStepMode::MonteCarlo };
    cfg.bootstrap_replicates = bootstrap_replicates;
    let state = py.detach(|| em::run_em(&cfg, &obs)).map_err(py_err)?;
    let trace = state
        .trace
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iter", r.iter)?;
            d.set_item("a_hat", r.a_hat)?;
            d.set_item("penalized_pll", r.penalized_pll)?;
            d.set_item("pll", r.pll)?;
            d.set_item("curvature", r.curvature)?;
            d.set_item("mean_ess", r.mean_ess)?;
            d.set_item("mc_se", r.mc_se)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((state.a_hat, PySpline { inner: state.f_hat }, trace))
}

/// Run a full experiment from `key=value` config text; returns the list of
/// written files.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_text: &str) -> PyResult<Vec<PathBuf>> {
    let cfg = ExperimentConfig::from_text(config_text).map_err(py_err)?;
    let report = py.detach(|| experiment::run_experiment(&cfg)).map_err(py_err)?;
    Ok(report.files)
}

/// Binned mixing coefficients; returns `phi_hat` per lag.
#[pyfunction]
#[pyo3(signature = (states, lags, bins=10))]
fn estimate_mixing_decay(states: Vec<f64>, lags: Vec<usize>, bins: usize) -> PyResult<Vec<f64>> {
    Ok(diagnostics::estimate_mixing_decay(&states, &lags, bins)
        .map_err(py_err)?
        .phi_hat)
}

/// Grid extremes `(a, nu_min, nu_max, q_min, q_max)` per bandwidth.
#[pyfunction]
fn check_h3_bounds(a_grid: Vec<f64>) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    Ok(diagnostics::check_h3_bounds(&a_grid)
        .map_err(py_err)?
        .into_iter()
        .map(|b| (b.a, b.nu_min, b.nu_max, b.q_min, b.q_max))
        .collect())
}

#[pymodule]
fn _nphmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpline>()?;
    m.add_function(wrap_pyfunction!(stationary_density, m)?)?;
    m.add_function(wrap_pyfunction!(transition_density, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(hellinger, m)?)?;
    m.add_function(wrap_pyfunction!(l2_error_half_circle, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff_half_circle, m)?)?;
    m.add_function(wrap_pyfunction!(run_em, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mixing_decay, m)?)?;
    m.add_function(wrap_pyfunction!(check_h3_bounds, m)?)?;
    Ok(())
}
