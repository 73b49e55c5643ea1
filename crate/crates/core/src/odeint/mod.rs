//! Adaptive explicit Runge-Kutta integration of library dynamics, with
//! optional forward sensitivity propagation.
//!
//! The solver is an embedded Dormand-Prince 5(4) pair with PI step-size
//! control and 4th-order dense output, so requested output times are hit
//! exactly by interpolation rather than by clipping steps. Sensitivities
//! are propagated with the forward equations `S' = (df/dx) S + df/dp`
//! integrated jointly with the state under the same error control.

mod dopri5;

use crate::library::{CoefficientMatrix, FunctionLibrary};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step limit exhausted at t = {t}")]
    StepLimitExceeded { t: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("output times must be strictly increasing")]
    BadTimeGrid,
    #[error(transparent)]
    Library(#[from] crate::library::LibraryError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Initial step size; `None` selects one automatically.
    pub initial_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_steps: 100_000,
            initial_step: None,
        }
    }
}

/// Solution samples at the requested output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `n x d`; row `i` is the state at `times[i]`.
    pub states: DMatrix<f64>,
}

/// Forward sensitivities of the trajectory at every output time.
///
/// Coefficient parameters are flattened column-major: parameter `p`
/// corresponds to `xi[(p % l, p / l)]`.
#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    /// Per time point, `d x (l*d)`: `dstate_dxi[t][(j, p)] = d x_j / d xi_p`.
    pub dstate_dxi: Vec<DMatrix<f64>>,
    /// Per time point, `d x d`: `dstate_dx0[t][(j, k)] = d x_j / d x0_k`.
    pub dstate_dx0: Vec<DMatrix<f64>>,
}

fn validate_times(times: &[f64]) -> Result<(), OdeError> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OdeError::BadTimeGrid);
    }
    Ok(())
}

/// Integrate the library dynamics from `x0` at `times[0]`, producing states
/// at every requested time.
pub fn integrate(
    lib: &FunctionLibrary,
    xi: &CoefficientMatrix,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    xi.check_shape(lib)?;
    validate_times(times)?;
    let d = lib.dim;
    assert_eq!(x0.len(), d, "x0 must have the library dimension");
    let mut theta = vec![0.0; lib.n_terms()];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        lib.eval_rhs_into(&xi.values, y, &mut theta, dy);
    };
    let rows = dopri5::solve(rhs, x0, times, cfg)?;
    let states = DMatrix::from_fn(times.len(), d, |i, j| rows[i][j]);
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

/// Integrate with forward sensitivities with respect to every coefficient
/// and every initial-condition component.
pub fn integrate_with_sensitivities(
    lib: &FunctionLibrary,
    xi: &CoefficientMatrix,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, SensitivityBundle), OdeError> {
    let all: Vec<usize> = (0..lib.n_terms() * lib.dim).collect();
    let (traj, sens) = integrate_with_sensitivities_masked(lib, xi, x0, times, cfg, &all)?;
    Ok((traj, sens))
}

/// Like [`integrate_with_sensitivities`] but tracks only the coefficient
/// parameters in `coeff_params` (flat column-major indices). Sensitivities
/// with respect to all `x0` components are always tracked.
pub fn integrate_with_sensitivities_masked(
    lib: &FunctionLibrary,
    xi: &CoefficientMatrix,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    coeff_params: &[usize],
) -> Result<(Trajectory, SensitivityBundle), OdeError> {
    sensitivity_solve(lib, xi, x0, times, cfg, coeff_params, true)
}

/// Crate-internal variant with relaxed error control on the sensitivity
/// block; the state itself keeps the configured tolerances.
pub(crate) fn integrate_with_sensitivities_relaxed(
    lib: &FunctionLibrary,
    xi: &CoefficientMatrix,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    coeff_params: &[usize],
) -> Result<(Trajectory, SensitivityBundle), OdeError> {
    sensitivity_solve(lib, xi, x0, times, cfg, coeff_params, false)
}

#[allow(clippy::too_many_arguments)]
fn sensitivity_solve(
    lib: &FunctionLibrary,
    xi: &CoefficientMatrix,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    coeff_params: &[usize],
    strict: bool,
) -> Result<(Trajectory, SensitivityBundle), OdeError> {
    xi.check_shape(lib)?;
    validate_times(times)?;
    let d = lib.dim;
    let l = lib.n_terms();
    assert_eq!(x0.len(), d);
    let n_xi = l * d;
    let p = coeff_params.len();
    debug_assert!(coeff_params.iter().all(|&q| q < n_xi));

    // Augmented layout: [x | S_c columns | S_0 columns].
    let aug = d * (1 + p + d);
    let mut y0 = vec![0.0; aug];
    y0[..d].copy_from_slice(x0);
    for k in 0..d {
        y0[d * (1 + p + k) + k] = 1.0;
    }

    let mut theta = vec![0.0; l];
    let mut dtheta = vec![0.0; l * d];
    let mut jac = vec![0.0; d * d];
    let stab_eps = lib.stab_eps;
    let stab_deg = lib.stab_degree as i32;

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let x = &y[..d];
        lib.eval_into(x, &mut theta);
        for (i, term) in lib.terms.iter().enumerate() {
            for k in 0..d {
                dtheta[i * d + k] = term.eval_partial(x, k);
            }
        }
        // State derivative and Jacobian d f_j / d x_k.
        for j in 0..d {
            let mut f = 0.0;
            for i in 0..l {
                f += theta[i] * xi.values[(i, j)];
            }
            if stab_eps != 0.0 {
                f -= stab_eps * x[j].powi(stab_deg);
            }
            dy[j] = f;
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..l {
                    acc += dtheta[i * d + k] * xi.values[(i, j)];
                }
                if k == j && stab_eps != 0.0 {
                    acc -= stab_eps * stab_deg as f64 * x[j].powi(stab_deg - 1);
                }
                jac[j * d + k] = acc;
            }
        }
        // Sensitivity columns: S' = J S (+ df/dp for coefficient params).
        for col in 0..(p + d) {
            let s = &y[d * (1 + col)..d * (2 + col)];
            let out_base = d * (1 + col);
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += jac[j * d + k] * s[k];
                }
                dy[out_base + j] = acc;
            }
            if col < p {
                let q = coeff_params[col];
                let (i, j) = (q % l, q / l);
                dy[out_base + j] += theta[i];
            }
        }
    };

    let n_strict = if strict { aug } else { d };
    let rows = dopri5::solve_weighted(rhs, &y0, times, cfg, n_strict)?;
    let n = times.len();
    let states = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mut dstate_dxi = Vec::with_capacity(n);
    let mut dstate_dx0 = Vec::with_capacity(n);
    for row in &rows {
        let mut sxi = DMatrix::zeros(d, n_xi);
        for (col, &q) in coeff_params.iter().enumerate() {
            for j in 0..d {
                sxi[(j, q)] = row[d * (1 + col) + j];
            }
        }
        let mut sx0 = DMatrix::zeros(d, d);
        for k in 0..d {
            for j in 0..d {
                sx0[(j, k)] = row[d * (1 + p + k) + j];
            }
        }
        dstate_dxi.push(sxi);
        dstate_dx0.push(sx0);
    }
    Ok((
        Trajectory {
            times: times.to_vec(),
            states,
        },
        SensitivityBundle {
            dstate_dxi,
            dstate_dx0,
        },
    ))
}
