//! Polynomial candidate libraries for sparse dynamics identification.
//!
//! A [`FunctionLibrary`] holds an ordered set of monomial terms in the state
//! variables together with the parameters of an odd-degree damping term
//! `-eps * x_j^p` that is added to every state equation. The damping term
//! keeps trial dynamics bounded during inference without affecting the
//! identified model on the scale of the data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default damping coefficient, intended for data normalized to unit
/// standard deviation.
pub const DEFAULT_STAB_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("state vector has dimension {got}, library expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coefficient matrix is {rows}x{cols}, library expects {terms}x{dim}")]
    CoefficientShape {
        rows: usize,
        cols: usize,
        terms: usize,
        dim: usize,
    },
}

/// A single monomial, stored as the exponent of each state variable.
/// All-zero exponents denote the constant function 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Evaluate the monomial at a state vector.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (&e, &xi) in self.exponents.iter().zip(x) {
            if e > 0 {
                v *= xi.powi(e as i32);
            }
        }
        v
    }

    /// Partial derivative of the monomial with respect to state variable `k`.
    pub fn eval_partial(&self, x: &[f64], k: usize) -> f64 {
        let ek = self.exponents[k];
        if ek == 0 {
            return 0.0;
        }
        let mut v = ek as f64 * x[k].powi(ek as i32 - 1);
        for (m, (&e, &xm)) in self.exponents.iter().zip(x).enumerate() {
            if m != k && e > 0 {
                v *= xm.powi(e as i32);
            }
        }
        v
    }

    /// Human-readable name, e.g. `1`, `u`, `u^2*v`.
    pub fn name(&self, labels: &[String]) -> String {
        if self.degree() == 0 {
            return "1".to_string();
        }
        let mut parts = Vec::new();
        for (m, &e) in self.exponents.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(labels[m].clone()),
                _ => parts.push(format!("{}^{}", labels[m], e)),
            }
        }
        parts.join("*")
    }
}

/// Ordered set of monomial candidate terms plus damping parameters.
///
/// Terms are ordered by ascending total degree; ties are broken so that
/// powers of earlier state variables come first (`u^2` before `u*v` before
/// `v^2`). The ordering is deterministic, so coefficient tables are
/// reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    pub dim: usize,
    pub max_degree: u32,
    pub terms: Vec<Term>,
    pub stab_degree: u32,
    pub stab_eps: f64,
}

/// The damping exponent paired with a library of maximal degree `n`:
/// `n+1` if `n` is even, `n+2` if `n` is odd, so the result is always odd.
pub fn stabilization_degree(max_degree: u32) -> u32 {
    if max_degree % 2 == 0 {
        max_degree + 1
    } else {
        max_degree + 2
    }
}

/// Build the full polynomial library of all monomials with total degree
/// `0..=max_degree` in `dim` state variables, in canonical order.
pub fn build_polynomial_library(dim: usize, max_degree: u32) -> FunctionLibrary {
    assert!(dim >= 1, "dim must be at least 1");
    assert!(max_degree >= 1, "max_degree must be at least 1");
    let mut terms = Vec::new();
    let mut exponents = vec![0u32; dim];
    enumerate_terms(dim, max_degree, 0, &mut exponents, &mut terms);
    terms.sort_by(|a, b| {
        a.degree()
            .cmp(&b.degree())
            .then_with(|| b.exponents.cmp(&a.exponents))
    });
    FunctionLibrary {
        dim,
        max_degree,
        terms,
        stab_degree: stabilization_degree(max_degree),
        stab_eps: DEFAULT_STAB_EPS,
    }
}

fn enumerate_terms(
    dim: usize,
    budget: u32,
    pos: usize,
    exponents: &mut Vec<u32>,
    out: &mut Vec<Term>,
) {
    if pos == dim {
        out.push(Term {
            exponents: exponents.clone(),
        });
        return;
    }
    for e in 0..=budget {
        exponents[pos] = e;
        enumerate_terms(dim, budget - e, pos + 1, exponents, out);
    }
    exponents[pos] = 0;
}

impl FunctionLibrary {
    /// Build a library from an explicit term list. Terms are reordered into
    /// canonical order; `max_degree` is taken as the largest total degree.
    pub fn from_terms(dim: usize, mut terms: Vec<Term>, stab_eps: f64) -> Self {
        assert!(!terms.is_empty(), "term list must be non-empty");
        assert!(
            terms.iter().all(|t| t.exponents.len() == dim),
            "every term must have {dim} exponents"
        );
        terms.sort_by(|a, b| {
            a.degree()
                .cmp(&b.degree())
                .then_with(|| b.exponents.cmp(&a.exponents))
        });
        terms.dedup();
        let max_degree = terms.iter().map(Term::degree).max().unwrap().max(1);
        FunctionLibrary {
            dim,
            max_degree,
            terms,
            stab_degree: stabilization_degree(max_degree),
            stab_eps,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Names of all terms given state labels.
    pub fn term_names(&self, labels: &[String]) -> Vec<String> {
        self.terms.iter().map(|t| t.name(labels)).collect()
    }

    /// Evaluate all library terms at a state vector.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>, LibraryError> {
        if x.len() != self.dim {
            return Err(LibraryError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.n_terms());
        self.eval_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Evaluate all terms into a preallocated slice of length `n_terms`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, t) in self.terms.iter().enumerate() {
            out[i] = t.eval(x);
        }
    }

    /// Right-hand side of the identified dynamics:
    /// `f_j(x) = sum_i theta_i(x) xi[i][j] - eps * x_j^p`.
    pub fn eval_rhs(
        &self,
        xi: &CoefficientMatrix,
        x: &[f64],
    ) -> Result<DVector<f64>, LibraryError> {
        xi.check_shape(self)?;
        if x.len() != self.dim {
            return Err(LibraryError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut theta = vec![0.0; self.n_terms()];
        let mut out = DVector::zeros(self.dim);
        self.eval_rhs_into(&xi.values, x, &mut theta, out.as_mut_slice());
        Ok(out)
    }

    /// Low-level RHS evaluation with caller-provided scratch. Used in the
    /// integrator's inner loop.
    pub fn eval_rhs_into(&self, xi: &DMatrix<f64>, x: &[f64], theta: &mut [f64], out: &mut [f64]) {
        self.eval_into(x, theta);
        let l = self.n_terms();
        for j in 0..self.dim {
            let mut acc = 0.0;
            for i in 0..l {
                acc += theta[i] * xi[(i, j)];
            }
            if self.stab_eps != 0.0 {
                acc -= self.stab_eps * x[j].powi(self.stab_degree as i32);
            }
            out[j] = acc;
        }
    }

    /// State Jacobian and coefficient sensitivities of the RHS at `x`.
    ///
    /// `df_dx[(j, k)] = d f_j / d x_k`, including the damping derivative
    /// `-eps * p * x_j^(p-1)` on the diagonal. The coefficient block is
    /// sparse: `d f_j / d xi[i][j'] = theta_i(x)` when `j' == j` and zero
    /// otherwise, so it is returned as the vector of term values.
    pub fn eval_rhs_jacobians(
        &self,
        xi: &CoefficientMatrix,
        x: &[f64],
    ) -> Result<RhsJacobians, LibraryError> {
        xi.check_shape(self)?;
        if x.len() != self.dim {
            return Err(LibraryError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let l = self.n_terms();
        let d = self.dim;
        let mut theta = DVector::zeros(l);
        self.eval_into(x, theta.as_mut_slice());
        let mut dtheta = DMatrix::zeros(l, d);
        for (i, t) in self.terms.iter().enumerate() {
            for k in 0..d {
                dtheta[(i, k)] = t.eval_partial(x, k);
            }
        }
        let mut df_dx = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..l {
                    acc += dtheta[(i, k)] * xi.values[(i, j)];
                }
                if k == j && self.stab_eps != 0.0 {
                    acc -= self.stab_eps
                        * self.stab_degree as f64
                        * x[j].powi(self.stab_degree as i32 - 1);
                }
                df_dx[(j, k)] = acc;
            }
        }
        Ok(RhsJacobians { df_dx, theta })
    }
}

/// Jacobians of the library RHS at one state point.
#[derive(Debug, Clone)]
pub struct RhsJacobians {
    /// `d f_j / d x_k`, a `d x d` matrix.
    pub df_dx: DMatrix<f64>,
    /// Library term values `theta_i(x)`; `d f_j / d xi[i][j] = theta_i(x)`,
    /// zero across columns `j' != j`.
    pub theta: DVector<f64>,
}

/// The `l x d` matrix of linear-combination coefficients mapping library
/// terms to state derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub values: DMatrix<f64>,
}

impl CoefficientMatrix {
    pub fn zeros(lib: &FunctionLibrary) -> Self {
        CoefficientMatrix {
            values: DMatrix::zeros(lib.n_terms(), lib.dim),
        }
    }

    pub fn from_matrix(lib: &FunctionLibrary, values: DMatrix<f64>) -> Result<Self, LibraryError> {
        let m = CoefficientMatrix { values };
        m.check_shape(lib)?;
        Ok(m)
    }

    pub fn check_shape(&self, lib: &FunctionLibrary) -> Result<(), LibraryError> {
        if self.values.nrows() != lib.n_terms() || self.values.ncols() != lib.dim {
            return Err(LibraryError::CoefficientShape {
                rows: self.values.nrows(),
                cols: self.values.ncols(),
                terms: lib.n_terms(),
                dim: lib.dim,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn quadratic_bivariate_library_terms() {
        let lib = build_polynomial_library(2, 2);
        let names = lib.term_names(&labels(&["u", "v"]));
        assert_eq!(names, vec!["1", "u", "v", "u^2", "u*v", "v^2"]);
        assert_eq!(lib.stab_degree, 3);
        assert_eq!(lib.stab_eps, DEFAULT_STAB_EPS);
    }

    #[test]
    fn linear_univariate_library() {
        let lib = build_polynomial_library(1, 1);
        let names = lib.term_names(&labels(&["x"]));
        assert_eq!(names, vec!["1", "x"]);
        assert_eq!(lib.stab_degree, 3);
    }

    #[test]
    fn cubic_bivariate_term_count() {
        // Oracle: count exponent pairs (a, b) with a + b <= 3 by enumeration.
        let mut count = 0;
        for a in 0..=3 {
            for b in 0..=3 {
                if a + b <= 3 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 10);
        let lib = build_polynomial_library(2, 3);
        assert_eq!(lib.n_terms(), 10);
        let names = lib.term_names(&labels(&["u", "v"]));
        assert_eq!(
            names,
            vec!["1", "u", "v", "u^2", "u*v", "v^2", "u^3", "u^2*v", "u*v^2", "v^3"]
        );
    }

    #[test]
    fn library_construction_is_deterministic() {
        let a = build_polynomial_library(3, 4);
        let b = build_polynomial_library(3, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn eval_library_at_origin() {
        let lib = build_polynomial_library(2, 2);
        let v = lib.eval(&[0.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn eval_library_values() {
        let lib = build_polynomial_library(2, 2);
        let v = lib.eval(&[10.0, 5.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 10.0, 5.0, 100.0, 50.0, 25.0]);

        let lib1 = build_polynomial_library(1, 1);
        let v1 = lib1.eval(&[3.0]).unwrap();
        assert_eq!(v1.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let lib = build_polynomial_library(2, 2);
        assert!(lib.eval(&[1.0]).is_err());
    }

    #[test]
    fn stabilization_degree_rule() {
        assert_eq!(stabilization_degree(2), 3);
        assert_eq!(stabilization_degree(3), 5);
        assert_eq!(stabilization_degree(1), 3);
        for n in 1..10 {
            assert_eq!(stabilization_degree(n) % 2, 1);
        }
    }

    /// Lotka-Volterra coefficients (alpha=1, beta=0.1, gamma=1.5,
    /// delta=0.075) in the canonical (2, 2) library.
    fn lotka_volterra_xi(lib: &FunctionLibrary) -> CoefficientMatrix {
        let mut xi = CoefficientMatrix::zeros(lib);
        // du/dt = u - 0.1 u v ; dv/dt = -1.5 v + 0.075 u v
        xi.values[(1, 0)] = 1.0; // u -> du
        xi.values[(4, 0)] = -0.1; // u*v -> du
        xi.values[(2, 1)] = -1.5; // v -> dv
        xi.values[(4, 1)] = 0.075; // u*v -> dv
        xi
    }

    #[test]
    fn rhs_stabilization_only() {
        let mut lib = build_polynomial_library(1, 1);
        lib.stab_eps = 1e-3;
        let xi = CoefficientMatrix::zeros(&lib);
        let f = lib.eval_rhs(&xi, &[2.0]).unwrap();
        assert!((f[0] - (-0.008)).abs() < 1e-15);
    }

    #[test]
    fn rhs_lotka_volterra_hand_value() {
        // Hand evaluation: du = 10 - 0.1*50 = 5, dv = -7.5 + 0.075*50 = -3.75.
        let mut lib = build_polynomial_library(2, 2);
        lib.stab_eps = 0.0;
        let xi = lotka_volterra_xi(&lib);
        let f = lib.eval_rhs(&xi, &[10.0, 5.0]).unwrap();
        assert!((f[0] - 5.0).abs() < 1e-12);
        assert!((f[1] - (-3.75)).abs() < 1e-12);
    }

    #[test]
    fn rhs_zero_everything() {
        let mut lib = build_polynomial_library(2, 2);
        lib.stab_eps = 0.0;
        let xi = CoefficientMatrix::zeros(&lib);
        let f = lib.eval_rhs(&xi, &[3.0, -4.0]).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn jacobian_zero_case_and_constant_term() {
        let mut lib = build_polynomial_library(2, 2);
        lib.stab_eps = 0.0;
        let xi = CoefficientMatrix::zeros(&lib);
        let jac = lib.eval_rhs_jacobians(&xi, &[1.3, -0.4]).unwrap();
        assert!(jac.df_dx.iter().all(|&v| v == 0.0));
        // d f_j / d xi[0][j] = theta_0(x) = 1 for the constant term.
        assert_eq!(jac.theta[0], 1.0);
    }

    fn finite_diff_df_dx(
        lib: &FunctionLibrary,
        xi: &CoefficientMatrix,
        x: &[f64],
        h: f64,
    ) -> DMatrix<f64> {
        let d = lib.dim;
        let mut out = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fp = lib.eval_rhs(xi, &xp).unwrap();
            let fm = lib.eval_rhs(xi, &xm).unwrap();
            for j in 0..d {
                out[(j, k)] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences_lotka_volterra() {
        let mut lib = build_polynomial_library(2, 2);
        lib.stab_eps = 0.0;
        let xi = lotka_volterra_xi(&lib);
        let x = [10.0, 5.0];
        let jac = lib.eval_rhs_jacobians(&xi, &x).unwrap();
        let fd = finite_diff_df_dx(&lib, &xi, &x, 1e-5);
        for j in 0..2 {
            for k in 0..2 {
                let denom = fd[(j, k)].abs().max(1.0);
                assert!(
                    (jac.df_dx[(j, k)] - fd[(j, k)]).abs() / denom < 1e-6,
                    "mismatch at ({j},{k}): {} vs {}",
                    jac.df_dx[(j, k)],
                    fd[(j, k)]
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut lib = build_polynomial_library(2, 3);
        lib.stab_eps = 1e-4;
        for _ in 0..100 {
            let mut xi = CoefficientMatrix::zeros(&lib);
            for v in xi.values.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let jac = lib.eval_rhs_jacobians(&xi, &x).unwrap();
            let fd = finite_diff_df_dx(&lib, &xi, &x, 1e-6);
            for j in 0..2 {
                for k in 0..2 {
                    let denom = fd[(j, k)].abs().max(1e-3);
                    assert!(
                        (jac.df_dx[(j, k)] - fd[(j, k)]).abs() / denom < 1e-5,
                        "mismatch at ({j},{k}): {} vs {}",
                        jac.df_dx[(j, k)],
                        fd[(j, k)]
                    );
                }
            }
        }
    }

    #[test]
    fn stabilization_dominates_at_large_state() {
        let lib = build_polynomial_library(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut xi = CoefficientMatrix::zeros(&lib);
            for v in xi.values.iter_mut() {
                *v = rng.random_range(-1e-4..1e-4);
            }
            for sign in [-1.0, 1.0] {
                let x = [sign * 1e3, sign * 1e3];
                let f = lib.eval_rhs(&xi, &x).unwrap();
                for j in 0..2 {
                    assert!(
                        f[j].signum() == -x[j].signum(),
                        "damping should dominate: f = {f:?} at x = {x:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn custom_term_list_is_canonicalized() {
        let terms = vec![
            Term {
                exponents: vec![1, 1],
            },
            Term {
                exponents: vec![0, 0],
            },
            Term {
                exponents: vec![2, 0],
            },
        ];
        let lib = FunctionLibrary::from_terms(2, terms, 0.0);
        let names = lib.term_names(&labels(&["u", "v"]));
        assert_eq!(names, vec!["1", "u^2", "u*v"]);
        assert_eq!(lib.max_degree, 2);
        assert_eq!(lib.stab_degree, 3);
    }
}
