//! Latent exponential-kernel Markov chain on `[0, 1]` and the noisy
//! observation model `Y_k = f(X_k) + eps_k`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_unit, Error, Result};
use crate::regression::{HalfCircle, RegressionFn, SharedFn};
use crate::rng::{purpose, SeedPath};

const MAX_REJECTIONS: usize = 1_000_000;

/// Bandwidth `a > 0` of the kernel `q_a(x, x') = C_a(x) exp(-|x' - x| / a)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct KernelParam(pub(crate) f64);

impl KernelParam {
    pub fn new(a: f64) -> Result<Self> {
        if a.is_finite() && a > 0.0 {
            Ok(Self(a))
        } else {
            Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {a}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 / C_a(x) = ∫_0^1 exp(-|x' - x| / a) dx'`, no domain check.
    pub(crate) fn inverse_normalizer(self, x: f64) -> f64 {
        let a = self.0;
        -a * ((-x / a).exp_m1() + (-(1.0 - x) / a).exp_m1())
    }

    /// `Z(a) = ∫_0^1 C_a(u)^{-1} du = 2 [a + a^2 (e^{-1/a} - 1)]`.
    pub fn stationary_mass(self) -> f64 {
        2.0 * self.0 * half_mass_factor(1.0 / self.0)
    }

    /// `log(a + a^2 (e^{-1/a} - 1))`, the a-dependent part of the M-step
    /// objective.
    pub fn log_half_mass(self) -> f64 {
        (self.0 * half_mass_factor(1.0 / self.0)).ln()
    }

    pub(crate) fn log_stationary_unchecked(self, x: f64) -> f64 {
        self.inverse_normalizer(x).ln() - self.stationary_mass().ln()
    }

    pub(crate) fn log_transition_unchecked(self, x: f64, x_next: f64) -> f64 {
        -self.inverse_normalizer(x).ln() - (x_next - x).abs() / self.0
    }
}

/// `1 + (e^{-u} - 1) / u` for `u = 1/a`, with a series branch where the
/// direct form cancels.
fn half_mass_factor(u: f64) -> f64 {
    if u < 1e-3 {
        u / 2.0 - u * u / 6.0 + u * u * u / 24.0 - u.powi(4) / 120.0
    } else {
        1.0 + (-u).exp_m1() / u
    }
}

/// `C_a(x)`.
pub fn normalizer_c(a: KernelParam, x: f64) -> Result<f64> {
    check_unit(x, "x")?;
    Ok(1.0 / a.inverse_normalizer(x))
}

/// Stationary density `nu_a(x) = C_a(x)^{-1} / Z(a)`.
pub fn stationary_density(a: KernelParam, x: f64) -> Result<f64> {
    check_unit(x, "x")?;
    Ok(a.inverse_normalizer(x) / a.stationary_mass())
}

/// Transition density `q_a(x, x_next)`.
pub fn transition_density(a: KernelParam, x: f64, x_next: f64) -> Result<f64> {
    check_unit(x, "x")?;
    check_unit(x_next, "x_next")?;
    Ok((-(x_next - x).abs() / a.value()).exp() / a.inverse_normalizer(x))
}

/// Draw from `nu_a` by rejection against the uniform proposal. The envelope is
/// `nu_a(1/2)`, the maximum of the density.
pub fn sample_stationary<R: Rng + ?Sized>(a: KernelParam, rng: &mut R) -> Result<f64> {
    let peak = a.inverse_normalizer(0.5);
    for _ in 0..MAX_REJECTIONS {
        let x: f64 = rng.random();
        let u: f64 = rng.random();
        if u * peak <= a.inverse_normalizer(x) {
            return Ok(x);
        }
    }
    Err(Error::Internal(format!(
        "stationary rejection sampler exceeded {MAX_REJECTIONS} proposals"
    )))
}

/// Exact inverse-CDF draw from the Laplace density centred at `x` with scale
/// `a`, truncated to `[0, 1]`.
pub fn sample_transition<R: Rng + ?Sized>(a: KernelParam, x: f64, rng: &mut R) -> Result<f64> {
    check_unit(x, "x")?;
    Ok(transition_from_uniform(a, x, rng.random()))
}

fn transition_from_uniform(a: KernelParam, x: f64, u: f64) -> f64 {
    let a = a.value();
    let left = -a * (-x / a).exp_m1();
    let right = -a * (-(1.0 - x) / a).exp_m1();
    let target = u * (left + right);
    // mass v within distance d of x on one side: v = a (1 - e^{-d/a})
    let distance = |v: f64| -a * (-v / a).ln_1p();
    let draw = if target < left {
        x - distance(left - target)
    } else {
        x + distance(target - left)
    };
    draw.clamp(0.0, 1.0)
}

/// The data-generating model.
#[derive(Clone)]
pub struct TrueModel {
    pub kernel: KernelParam,
    pub f_star: SharedFn,
}

impl TrueModel {
    pub fn new(kernel: KernelParam, f_star: SharedFn) -> Self {
        Self { kernel, f_star }
    }

    /// `a = 1` with the half-circle regression function.
    pub fn half_circle(a: f64) -> Result<Self> {
        Ok(Self::new(KernelParam::new(a)?, Arc::new(HalfCircle)))
    }

    pub fn ell(&self) -> usize {
        self.f_star.dim()
    }
}

impl fmt::Debug for TrueModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrueModel")
            .field("kernel", &self.kernel)
            .field("ell", &self.ell())
            .finish()
    }
}

/// Simulated latent states with their noisy observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulate `n_obs` steps of the stationary chain and its observations.
pub fn simulate(model: &TrueModel, n_obs: usize, seed: u64) -> Result<Trajectory> {
    simulate_with(model, n_obs, seed, SeedPath::new(seed).child(purpose::SIMULATION))
}

pub(crate) fn simulate_with(
    model: &TrueModel,
    n_obs: usize,
    seed: u64,
    stream: SeedPath,
) -> Result<Trajectory> {
    if n_obs == 0 {
        return Err(Error::InvalidParameter("n_obs must be at least 1".into()));
    }
    let mut state_rng = stream.child(0).rng();
    let mut noise_rng = stream.child(1).rng();
    let mut states = Vec::with_capacity(n_obs);
    let mut x = sample_stationary(model.kernel, &mut state_rng)?;
    states.push(x);
    for _ in 1..n_obs {
        x = transition_from_uniform(model.kernel, x, state_rng.random());
        states.push(x);
    }
    let observations = states
        .iter()
        .map(|&x| {
            let mut y = model.f_star.eval(x);
            for v in &mut y {
                let e: f64 = noise_rng.sample(StandardNormal);
                *v += e;
            }
            y
        })
        .collect();
    Ok(Trajectory {
        states,
        observations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::rule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k(a: f64) -> KernelParam {
        KernelParam::new(a).unwrap()
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(KernelParam::new(0.0).is_err());
        assert!(KernelParam::new(-1.0).is_err());
        assert!(KernelParam::new(f64::NAN).is_err());
    }

    #[test]
    fn normalizer_against_quadrature() {
        let r = rule(201);
        for (x, expected) in [(0.5, 1.0 / 0.786_938_680_574_733), (0.0, 1.581_976_706_869_326)] {
            let integral = r.integrate_split(0.0, 1.0, &[x], |u| (-(u - x).abs()).exp());
            assert!((1.0 / integral - expected).abs() < 1e-12);
            assert!((normalizer_c(k(1.0), x).unwrap() - expected).abs() < 1e-12);
        }
        assert!((normalizer_c(k(1e6), 0.5).unwrap() - 1.0).abs() < 1e-5);
        assert!(normalizer_c(k(1.0), 1.5).is_err());
    }

    #[test]
    fn stationary_density_values() {
        let r = rule(201);
        let z_quad = r.integrate(0.0, 1.0, |x| k(1.0).inverse_normalizer(x));
        assert!((z_quad - 2.0 * (-1.0f64).exp()).abs() < 1e-13);
        assert!((k(1.0).stationary_mass() - 0.735_758_882_342_884_6).abs() < 1e-14);
        let v = stationary_density(k(1.0), 0.5).unwrap();
        assert!((v - 0.786_938_680_574_733 / 0.735_758_882_342_884_6).abs() < 1e-12);
        for a in [0.2, 1.0, 5.0] {
            let m = r.integrate(0.0, 1.0, |x| stationary_density(k(a), x).unwrap());
            assert!((m - 1.0).abs() < 1e-10, "a={a} mass={m}");
        }
        assert!(stationary_density(k(1.0), -0.1).is_err());
    }

    #[test]
    fn transition_density_values() {
        let r = rule(201);
        let v = transition_density(k(1.0), 0.5, 0.5).unwrap();
        assert!((v - 1.0 / 0.786_938_680_574_733).abs() < 1e-12);
        let m = r.integrate_split(0.0, 1.0, &[0.3], |u| transition_density(k(0.7), 0.3, u).unwrap());
        assert!((m - 1.0).abs() < 1e-10);
        let xp = 0.25;
        let lhs = r.integrate_split(0.0, 1.0, &[xp], |x| {
            stationary_density(k(1.0), x).unwrap() * transition_density(k(1.0), x, xp).unwrap()
        });
        assert!((lhs - stationary_density(k(1.0), xp).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn large_bandwidth_is_stable() {
        let a = k(1e9);
        assert!((a.stationary_mass() - 1.0).abs() < 1e-8);
        assert!((stationary_density(a, 0.1).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn transition_draws_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &x in &[0.0, 0.2, 1.0] {
            for _ in 0..10_000 {
                let d = sample_transition(k(1.0), x, &mut rng).unwrap();
                assert!((0.0..=1.0).contains(&d));
            }
        }
        assert!(sample_transition(k(1.0), 1.2, &mut rng).is_err());
    }

    #[test]
    fn simulate_is_reproducible() {
        let m = TrueModel::half_circle(1.0).unwrap();
        let a = simulate(&m, 500, 11).unwrap();
        let b = simulate(&m, 500, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate(&m, 500, 12).unwrap());
        assert!(a.states.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(a.observations.len(), 500);
        assert!(simulate(&m, 0, 1).is_err());
    }
}
