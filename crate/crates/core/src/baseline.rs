//! Classic point-estimate identification: numerical differentiation of the
//! data followed by sequentially thresholded least squares (STLSQ). Serves
//! as the comparison column next to the Bayesian fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::library::{CoefficientMatrix, FunctionLibrary};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least 3 samples for second-order differences, got {got}")]
    TooFewSamples { got: usize },
    #[error("normal equations are singular for state column {state}; set ridge > 0")]
    Singular { state: usize },
    #[error(transparent)]
    Library(#[from] crate::library::LibraryError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StlsqConfig {
    /// Coefficients with magnitude below this are zeroed each iteration.
    pub threshold: f64,
    /// Optional ridge penalty on the least-squares solves.
    pub ridge: f64,
    pub max_iters: usize,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        StlsqConfig {
            threshold: 0.1,
            ridge: 0.0,
            max_iters: 20,
        }
    }
}

/// Second-order finite-difference derivatives on a possibly non-uniform
/// grid: three-point central stencils at interior points, one-sided
/// three-point stencils at the endpoints.
pub fn finite_diff_derivatives(
    times: &[f64],
    states: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BaselineError> {
    let n = times.len();
    if n < 3 {
        return Err(BaselineError::TooFewSamples { got: n });
    }
    assert_eq!(states.nrows(), n, "states must have one row per time");
    let d = states.ncols();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        // Three consecutive grid points bracketing (or flanking) i.
        let base = if i == 0 {
            0
        } else if i == n - 1 {
            n - 3
        } else {
            i - 1
        };
        let (t0, t1, t2) = (times[base], times[base + 1], times[base + 2]);
        let t = times[i];
        // Derivative of the Lagrange interpolating quadratic at t.
        let w0 = (2.0 * t - t1 - t2) / ((t0 - t1) * (t0 - t2));
        let w1 = (2.0 * t - t0 - t2) / ((t1 - t0) * (t1 - t2));
        let w2 = (2.0 * t - t0 - t1) / ((t2 - t0) * (t2 - t1));
        for j in 0..d {
            out[(i, j)] = w0 * states[(base, j)]
                + w1 * states[(base + 1, j)]
                + w2 * states[(base + 2, j)];
        }
    }
    Ok(out)
}

/// Sequentially thresholded least squares on `xdot = theta * xi`, solved
/// per state column: least squares on the active terms, zero every
/// coefficient below the threshold, repeat until the active set is stable.
pub fn stlsq(
    theta: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    cfg: &StlsqConfig,
) -> Result<DMatrix<f64>, BaselineError> {
    let (n, l) = theta.shape();
    if n < l {
        eprintln!("warning: stlsq has fewer samples ({n}) than library terms ({l})");
    }
    stlsq_quiet(theta, xdot, cfg)
}

/// [`stlsq`] without the under-determination warning, for internal
/// warm-start use.
pub(crate) fn stlsq_quiet(
    theta: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    cfg: &StlsqConfig,
) -> Result<DMatrix<f64>, BaselineError> {
    let (n, l) = theta.shape();
    let d = xdot.ncols();
    assert_eq!(xdot.nrows(), n, "theta and xdot row counts must match");
    let mut xi = DMatrix::zeros(l, d);
    for state in 0..d {
        let target = xdot.column(state).into_owned();
        let mut active: Vec<usize> = (0..l).collect();
        for _ in 0..cfg.max_iters {
            if active.is_empty() {
                break;
            }
            let coeffs = solve_ls(theta, &target, &active, cfg.ridge)
                .ok_or(BaselineError::Singular { state })?;
            let survivors: Vec<usize> = active
                .iter()
                .copied()
                .zip(coeffs.iter())
                .filter(|(_, &c)| c.abs() >= cfg.threshold)
                .map(|(idx, _)| idx)
                .collect();
            let stable = survivors.len() == active.len();
            active = survivors;
            if stable {
                break;
            }
        }
        if !active.is_empty() {
            let coeffs = solve_ls(theta, &target, &active, cfg.ridge)
                .ok_or(BaselineError::Singular { state })?;
            for (slot, &idx) in active.iter().enumerate() {
                xi[(idx, state)] = coeffs[slot];
            }
        }
    }
    Ok(xi)
}

/// Least squares restricted to the active columns, via QR when `ridge` is
/// zero (with an explicit rank check) and regularized normal equations
/// otherwise.
fn solve_ls(
    theta: &DMatrix<f64>,
    target: &DVector<f64>,
    active: &[usize],
    ridge: f64,
) -> Option<DVector<f64>> {
    let n = theta.nrows();
    let k = active.len();
    let sub = DMatrix::from_fn(n, k, |r, c| theta[(r, active[c])]);
    if ridge > 0.0 {
        let mut gram = sub.transpose() * &sub;
        for i in 0..k {
            gram[(i, i)] += ridge;
        }
        let rhs = sub.transpose() * target;
        gram.cholesky().map(|chol| chol.solve(&rhs))
    } else {
        let svd = sub.svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = f64::EPSILON * n.max(k) as f64 * max_sv.max(1e-300);
        if svd.singular_values.iter().any(|&s| s <= tol) {
            return None;
        }
        svd.solve(target, tol).ok()
    }
}

/// End-to-end baseline: differentiate the data, evaluate the library on
/// every observation row, and run STLSQ.
pub fn sindy_fit(
    data: &Dataset,
    lib: &FunctionLibrary,
    cfg: &StlsqConfig,
) -> Result<CoefficientMatrix, BaselineError> {
    let xdot = finite_diff_derivatives(&data.times, &data.observations)?;
    let n = data.n_samples();
    let mut theta = DMatrix::zeros(n, lib.n_terms());
    let mut row = vec![0.0; lib.n_terms()];
    let mut x = vec![0.0; lib.dim];
    for i in 0..n {
        for j in 0..lib.dim {
            x[j] = data.observations[(i, j)];
        }
        lib.eval_into(&x, &mut row);
        for (j, &v) in row.iter().enumerate() {
            theta[(i, j)] = v;
        }
    }
    let values = stlsq(&theta, &xdot, cfg)?;
    Ok(CoefficientMatrix::from_matrix(lib, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::uniform_grid;
    use crate::library::build_polynomial_library;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derivatives_exact_for_linear_data() {
        let times = uniform_grid(0.0, 2.0, 9);
        let states = DMatrix::from_fn(9, 1, |i, _| 3.0 * times[i]);
        let deriv = finite_diff_derivatives(&times, &states).unwrap();
        for i in 0..9 {
            assert!((deriv[(i, 0)] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_exact_for_quadratics_everywhere() {
        // Three-point stencils differentiate quadratics exactly, including
        // the one-sided endpoint stencils and non-uniform spacing.
        let times = vec![0.0, 0.3, 0.55, 1.0, 1.3, 2.1];
        let states = DMatrix::from_fn(6, 1, |i, _| times[i] * times[i]);
        let deriv = finite_diff_derivatives(&times, &states).unwrap();
        for i in 0..6 {
            assert!(
                (deriv[(i, 0)] - 2.0 * times[i]).abs() < 1e-10,
                "row {i}: {} vs {}",
                deriv[(i, 0)],
                2.0 * times[i]
            );
        }
    }

    #[test]
    fn derivative_error_is_second_order_for_sine() {
        let h = 0.01;
        let n = 201;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let states = DMatrix::from_fn(n, 1, |i, _| times[i].sin());
        let deriv = finite_diff_derivatives(&times, &states).unwrap();
        let max_interior_err = (1..n - 1)
            .map(|i| (deriv[(i, 0)] - times[i].cos()).abs())
            .fold(0.0f64, f64::max);
        assert!(max_interior_err < 1e-4, "max error {max_interior_err}");
    }

    #[test]
    fn too_few_samples() {
        let times = vec![0.0, 1.0];
        let states = DMatrix::zeros(2, 1);
        assert!(matches!(
            finite_diff_derivatives(&times, &states),
            Err(BaselineError::TooFewSamples { got: 2 })
        ));
    }

    /// Exact synthetic construction: evaluate the true RHS on clean states
    /// so STLSQ sees a consistent linear system.
    fn lv_exact_regression() -> (DMatrix<f64>, DMatrix<f64>, crate::library::FunctionLibrary) {
        let times = uniform_grid(0.0, 24.0, 50);
        let data = crate::data::gen_lotka_volterra(1.0, 0.1, 1.5, 0.075, [10.0, 5.0], &times)
            .unwrap();
        let mut lib = build_polynomial_library(2, 2);
        lib.stab_eps = 0.0;
        let mut xi_true = CoefficientMatrix::zeros(&lib);
        xi_true.values[(1, 0)] = 1.0;
        xi_true.values[(4, 0)] = -0.1;
        xi_true.values[(2, 1)] = -1.5;
        xi_true.values[(4, 1)] = 0.075;
        let n = data.n_samples();
        let mut theta = DMatrix::zeros(n, lib.n_terms());
        let mut xdot = DMatrix::zeros(n, 2);
        for i in 0..n {
            let x = [data.observations[(i, 0)], data.observations[(i, 1)]];
            let row = lib.eval(&x).unwrap();
            for j in 0..lib.n_terms() {
                theta[(i, j)] = row[j];
            }
            let f = lib.eval_rhs(&xi_true, &x).unwrap();
            xdot[(i, 0)] = f[0];
            xdot[(i, 1)] = f[1];
        }
        (theta, xdot, lib)
    }

    #[test]
    fn stlsq_recovers_lotka_volterra_exactly() {
        let (theta, xdot, _) = lv_exact_regression();
        let cfg = StlsqConfig {
            threshold: 0.05,
            ..Default::default()
        };
        let xi = stlsq(&theta, &xdot, &cfg).unwrap();
        let want = [
            ((1, 0), 1.0),
            ((4, 0), -0.1),
            ((2, 1), -1.5),
            ((4, 1), 0.075),
        ];
        let mut expected = DMatrix::zeros(6, 2);
        for &((i, j), v) in &want {
            expected[(i, j)] = v;
        }
        for i in 0..6 {
            for j in 0..2 {
                assert!(
                    (xi[(i, j)] - expected[(i, j)]).abs() < 1e-6,
                    "xi[({i},{j})] = {}",
                    xi[(i, j)]
                );
            }
        }
    }

    #[test]
    fn stlsq_threshold_above_everything_gives_zero() {
        let (theta, xdot, _) = lv_exact_regression();
        let cfg = StlsqConfig {
            threshold: 1e6,
            ..Default::default()
        };
        let xi = stlsq(&theta, &xdot, &cfg).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stlsq_with_tiny_threshold_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let theta = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let beta = DVector::from_vec(vec![0.7, -1.3, 0.0, 2.1]);
        let y = &theta * &beta;
        let xdot = DMatrix::from_fn(n, 1, |i, _| y[i]);
        let cfg = StlsqConfig {
            threshold: 1e-12,
            ..Default::default()
        };
        let xi = stlsq(&theta, &xdot, &cfg).unwrap();
        // OLS oracle via normal equations.
        let gram = theta.transpose() * &theta;
        let rhs = theta.transpose() * &y;
        let ols = gram.cholesky().unwrap().solve(&rhs);
        for i in 0..4 {
            assert!((xi[(i, 0)] - ols[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn stlsq_exact_recovery_over_random_sparse_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = StlsqConfig {
            threshold: 0.2,
            ..Default::default()
        };
        for trial in 0..20 {
            let n = 60;
            let l = 8;
            let theta = DMatrix::from_fn(n, l, |_, _| rng.random_range(-2.0..2.0));
            // Sparse truth with |nonzero| > 2 * threshold.
            let mut truth = DVector::zeros(l);
            for _ in 0..3 {
                let idx = rng.random_range(0..l);
                let mag = rng.random_range(0.5..2.0);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                truth[idx] = sign * mag;
            }
            let y = &theta * &truth;
            let xdot = DMatrix::from_fn(n, 1, |i, _| y[i]);
            let xi = stlsq(&theta, &xdot, &cfg).unwrap();
            for i in 0..l {
                assert!(
                    (xi[(i, 0)] - truth[i]).abs() < 1e-8,
                    "trial {trial}, coefficient {i}: {} vs {}",
                    xi[(i, 0)],
                    truth[i]
                );
            }
        }
    }

    #[test]
    fn stlsq_active_set_shrinks_and_terminates() {
        // Thresholding can only remove terms, so the iteration count is
        // bounded by the library size; verify termination on a pathological
        // near-collinear design.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 30;
        let base = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let mut theta = DMatrix::zeros(n, 3);
        for i in 0..n {
            theta[(i, 0)] = base[(i, 0)];
            theta[(i, 1)] = base[(i, 0)] * (1.0 + 1e-10 * rng.random::<f64>());
            theta[(i, 2)] = rng.random_range(-1.0..1.0);
        }
        let xdot = DMatrix::from_fn(n, 1, |i, _| theta[(i, 2)] * 0.9);
        let cfg = StlsqConfig {
            threshold: 0.1,
            ridge: 1e-8,
            max_iters: 20,
        };
        let xi = stlsq(&theta, &xdot, &cfg).unwrap();
        assert!((xi[(2, 0)] - 0.9).abs() < 1e-4);
    }

    #[test]
    fn singular_design_without_ridge_is_reported() {
        // Duplicate columns make the design exactly rank-deficient.
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let col: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = DMatrix::from_fn(n, 2, |i, _| col[i]);
        let xdot = DMatrix::from_fn(n, 1, |i, _| 2.0 * col[i]);
        let err = stlsq(&theta, &xdot, &StlsqConfig::default()).unwrap_err();
        match err {
            BaselineError::Singular { state } => assert_eq!(state, 0),
            other => panic!("unexpected error {other:?}"),
        }
        // With ridge the same problem solves.
        let cfg = StlsqConfig {
            ridge: 1e-6,
            ..Default::default()
        };
        assert!(stlsq(&theta, &xdot, &cfg).is_ok());
    }

    #[test]
    fn sindy_fit_is_deterministic_and_flags_noise() {
        let times = uniform_grid(0.0, 24.0, 50);
        let clean = crate::data::gen_lotka_volterra(1.0, 0.1, 1.5, 0.075, [10.0, 5.0], &times)
            .unwrap();
        let noisy = crate::data::apply_noise(
            &clean,
            &crate::data::NoiseSpec::LognormalMultiplicative { sigma: 0.1, seed: 42 },
        )
        .unwrap();
        let normed = crate::data::normalize(&noisy).unwrap();
        let lib = build_polynomial_library(2, 2);
        let a = sindy_fit(&normed, &lib, &StlsqConfig::default()).unwrap();
        let b = sindy_fit(&normed, &lib, &StlsqConfig::default()).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn constant_data_fits_to_zero_matrix() {
        let times = uniform_grid(0.0, 10.0, 20);
        let ds = Dataset {
            times: times.clone(),
            observations: DMatrix::from_element(20, 2, 3.0),
            labels: vec!["u".to_string(), "v".to_string()],
            scales: vec![1.0, 1.0],
        };
        let lib = build_polynomial_library(2, 2);
        // Constant columns make the design rank-deficient (1 == u^2 / 9);
        // a touch of ridge resolves it, and the derivative target is zero.
        let cfg = StlsqConfig {
            ridge: 1e-8,
            ..Default::default()
        };
        let xi = sindy_fit(&ds, &lib, &cfg).unwrap();
        assert!(xi.values.iter().all(|&v| v == 0.0));
    }
}
