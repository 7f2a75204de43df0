//! Penalized pseudo-likelihood estimation for hidden-state regression.
//!
//! A stationary latent chain `X_k` on `[0, 1]` is observed through
//! `Y_k = f(X_k) + eps_k` with standard Gaussian noise in `R^ell`. The crate
//! simulates such data, evaluates block densities of consecutive
//! observations, and estimates `f` (and the kernel bandwidth of the chain) by
//! an EM algorithm with an importance-sampled E-step and a smoothing-spline
//! M-step.

pub mod density;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod spline;

pub use density::{LatentDensity, ObservationBlocks, Penalty};
pub use em::{EmConfig, EmState, EStepMode, WeightedParticles};
pub use error::{Error, Result};
pub use model::{KernelParam, TrueModel, Trajectory};
pub use regression::{RegressionFn, SharedFn};
pub use spline::{SplineFunction, WeightedPoints};
