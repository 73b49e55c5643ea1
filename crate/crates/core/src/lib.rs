//! Bayesian sparse identification of nonlinear dynamics.
//!
//! Discovers sparse ODE models from noisy time series by full Bayesian
//! inference over the coefficients of a polynomial candidate library,
//! quantifying coefficient uncertainty, term inclusion probabilities, and
//! posterior predictive forecasts. A classic point-estimate pipeline
//! (finite differences + sequentially thresholded least squares) is
//! included as the comparison baseline.

pub mod baseline;
pub mod data;
pub mod library;
pub mod mcmc;
pub mod model;
pub mod odeint;
pub mod priors;

pub use library::{
    build_polynomial_library, stabilization_degree, CoefficientMatrix, FunctionLibrary, Term,
};
pub use odeint::{
    integrate, integrate_with_sensitivities, IntegratorConfig, OdeError, SensitivityBundle,
    Trajectory,
};
