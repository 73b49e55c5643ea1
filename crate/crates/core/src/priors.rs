//! Prior distributions: log-densities, gradients, unconstraining
//! transforms, and samplers, including the sparsity-promoting hierarchies
//! used for the dynamics coefficients.
//!
//! The spike-and-slab hierarchy pairs every coefficient with a Bernoulli
//! indicator selecting a wide slab or a narrow spike; the regularized
//! horseshoe shrinks through a global scale, per-coefficient local scales,
//! and a slab-width variable that caps how far coefficients escape
//! shrinkage.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::library::CoefficientMatrix;

const LN_2PI: f64 = 1.8378770664093453;

/// A univariate distribution with named parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Gamma { alpha: f64, beta: f64 },
    InverseGamma { alpha: f64, beta: f64 },
    HalfCauchy { scale: f64 },
    Laplace { mu: f64, b: f64 },
    Bernoulli { pi: f64 },
}

use DistributionSpec::*;

impl DistributionSpec {
    /// Check parameter constraints, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let bad = |what: &str| Err(format!("{what} must be strictly positive in {self:?}"));
        match *self {
            Normal { sigma, .. } | Lognormal { sigma, .. } if sigma <= 0.0 => bad("sigma"),
            Gamma { alpha, beta } | InverseGamma { alpha, beta } if alpha <= 0.0 || beta <= 0.0 => {
                bad("alpha and beta")
            }
            HalfCauchy { scale } if scale <= 0.0 => bad("scale"),
            Laplace { b, .. } if b <= 0.0 => bad("b"),
            Bernoulli { pi } if !(0.0..=1.0).contains(&pi) => {
                Err(format!("pi must lie in [0, 1] in {self:?}"))
            }
            _ => Ok(()),
        }
    }

    /// Natural-log density at `x`; `-inf` outside the support.
    pub fn logpdf(&self, x: f64) -> f64 {
        match *self {
            Normal { mu, sigma } => {
                let z = (x - mu) / sigma;
                -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
            }
            Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - mu) / sigma;
                -x.ln() - sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
            Gamma { alpha, beta } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                alpha * beta.ln() - libm::lgamma(alpha) + (alpha - 1.0) * x.ln() - beta * x
            }
            InverseGamma { alpha, beta } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                alpha * beta.ln() - libm::lgamma(alpha) - (alpha + 1.0) * x.ln() - beta / x
            }
            HalfCauchy { scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = x / scale;
                (2.0 / std::f64::consts::PI).ln() - scale.ln() - (1.0 + z * z).ln()
            }
            Laplace { mu, b } => -(2.0 * b).ln() - (x - mu).abs() / b,
            Bernoulli { pi } => {
                if x == 1.0 {
                    pi.ln()
                } else if x == 0.0 {
                    (1.0 - pi).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Derivative of [`Self::logpdf`] with respect to `x` where it is
    /// differentiable. The Laplace kink uses subgradient 0; the Bernoulli
    /// variant is discrete and returns 0.
    pub fn logpdf_grad(&self, x: f64) -> f64 {
        match *self {
            Normal { mu, sigma } => -(x - mu) / (sigma * sigma),
            Lognormal { mu, sigma } => (-1.0 - (x.ln() - mu) / (sigma * sigma)) / x,
            Gamma { alpha, beta } => (alpha - 1.0) / x - beta,
            InverseGamma { alpha, beta } => -(alpha + 1.0) / x + beta / (x * x),
            HalfCauchy { scale } => -2.0 * x / (scale * scale + x * x),
            Laplace { mu, b } => {
                if x == mu {
                    0.0
                } else {
                    -(x - mu).signum() / b
                }
            }
            Bernoulli { .. } => 0.0,
        }
    }

    /// Whether the support is the positive half-line (sampled on a log
    /// scale by the gradient samplers).
    pub fn positive_support(&self) -> bool {
        matches!(
            self,
            Lognormal { .. } | Gamma { .. } | InverseGamma { .. } | HalfCauchy { .. }
        )
    }

    /// Map `x` in the support to an unconstrained value `y`, returning the
    /// log absolute Jacobian `ln |dx/dy|`.
    pub fn unconstrain(&self, x: f64) -> (f64, f64) {
        if self.positive_support() {
            let y = x.ln();
            (y, y)
        } else {
            (x, 0.0)
        }
    }

    /// Inverse of [`Self::unconstrain`].
    pub fn constrain(&self, y: f64) -> f64 {
        if self.positive_support() {
            y.exp()
        } else {
            y
        }
    }

    /// Log-density of the transformed variable at unconstrained `y`
    /// (including the Jacobian term) and its derivative with respect to `y`.
    pub fn unconstrained_logpdf_and_grad(&self, y: f64) -> (f64, f64) {
        if self.positive_support() {
            let x = y.exp();
            (self.logpdf(x) + y, self.logpdf_grad(x) * x + 1.0)
        } else {
            (self.logpdf(y), self.logpdf_grad(y))
        }
    }

    /// Draw one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Normal { mu, sigma } => rand_distr::Normal::new(mu, sigma).unwrap().sample(rng),
            Lognormal { mu, sigma } => rand_distr::LogNormal::new(mu, sigma).unwrap().sample(rng),
            Gamma { alpha, beta } => rand_distr::Gamma::new(alpha, 1.0 / beta)
                .unwrap()
                .sample(rng),
            InverseGamma { alpha, beta } => {
                1.0 / rand_distr::Gamma::new(alpha, 1.0 / beta)
                    .unwrap()
                    .sample(rng)
            }
            HalfCauchy { scale } => rand_distr::Cauchy::new(0.0, scale)
                .unwrap()
                .sample(rng)
                .abs(),
            Laplace { mu, b } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Bernoulli { pi } => {
                if rng.random::<f64>() < pi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Rough variance of the unconstrained parameterization, used to seed
    /// the sampler's mass matrix before adaptation takes over.
    pub fn unconstrained_variance_hint(&self) -> f64 {
        fn trigamma(a: f64) -> f64 {
            // Series approximation, adequate for a scale hint.
            1.0 / a + 1.0 / (2.0 * a * a) + 1.0 / (6.0 * a * a * a)
        }
        match *self {
            Normal { sigma, .. } => sigma * sigma,
            Lognormal { sigma, .. } => sigma * sigma,
            Gamma { alpha, .. } | InverseGamma { alpha, .. } => trigamma(alpha),
            HalfCauchy { .. } => 2.0,
            Laplace { b, .. } => 2.0 * b * b,
            Bernoulli { .. } => 1.0,
        }
    }

    /// A representative central value, used to seed chain initial states.
    pub fn median(&self) -> f64 {
        match *self {
            Normal { mu, .. } | Laplace { mu, .. } => mu,
            Lognormal { mu, .. } => mu.exp(),
            Gamma { alpha, beta } => alpha / beta,
            InverseGamma { alpha, beta } => beta / (alpha + 1.0),
            HalfCauchy { scale } => scale,
            Bernoulli { pi } => {
                if pi >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn log_normal_density(x: f64, sd: f64) -> f64 {
    let z = x / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Spike-and-slab hierarchy for an `l x d` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabSpec {
    /// Prior inclusion probability of each term.
    pub pi: f64,
    /// Slab standard deviation `c`.
    pub slab_sd: f64,
    /// Relaxed spike standard deviation, much smaller than `slab_sd`.
    pub spike_sd: f64,
    /// Per-coefficient scale factors `alpha[(i, j)]`.
    pub scale: DMatrix<f64>,
}

impl SpikeSlabSpec {
    pub fn new(n_terms: usize, dim: usize) -> Self {
        SpikeSlabSpec {
            pi: 0.5,
            slab_sd: 1.0,
            spike_sd: 1e-3,
            scale: DMatrix::from_element(n_terms, dim, 1.0),
        }
    }

    /// Standard deviation of the coefficient prior given its indicator.
    pub fn sd(&self, i: usize, j: usize, included: bool) -> f64 {
        let base = if included { self.slab_sd } else { self.spike_sd };
        base * self.scale[(i, j)]
    }

    /// Draw a full (coefficients, indicators) pair from the hierarchy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<f64>, DMatrix<u8>) {
        let (l, d) = self.scale.shape();
        let mut xi = DMatrix::zeros(l, d);
        let mut lambda = DMatrix::zeros(l, d);
        for i in 0..l {
            for j in 0..d {
                let inc = rng.random::<f64>() < self.pi;
                lambda[(i, j)] = inc as u8;
                let sd = self.sd(i, j, inc);
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                xi[(i, j)] = sd * z;
            }
        }
        (xi, lambda)
    }
}

/// Joint log-prior of coefficients and indicators under the spike-and-slab
/// hierarchy: each coefficient is normal with the slab or spike scale
/// selected by its indicator, plus the Bernoulli indicator mass.
pub fn spike_slab_logprior(
    xi: &CoefficientMatrix,
    lambda: &DMatrix<u8>,
    spec: &SpikeSlabSpec,
) -> f64 {
    let (l, d) = spec.scale.shape();
    assert_eq!(xi.values.shape(), (l, d));
    assert_eq!(lambda.shape(), (l, d));
    let ln_pi = spec.pi.ln();
    let ln_1m_pi = (1.0 - spec.pi).ln();
    let mut acc = 0.0;
    for i in 0..l {
        for j in 0..d {
            let included = lambda[(i, j)] == 1;
            acc += log_normal_density(xi.values[(i, j)], spec.sd(i, j, included));
            acc += if included { ln_pi } else { ln_1m_pi };
        }
    }
    acc
}

/// Regularized-horseshoe hierarchy for an `l x d` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RegHorseshoeSpec {
    /// Scale of the half-Cauchy prior on the global shrinkage.
    pub tau0: f64,
    /// Slab degrees of freedom.
    pub nu: f64,
    /// Slab scale.
    pub s: f64,
    /// Per-coefficient scale factors `alpha[(i, j)]`.
    pub scale: DMatrix<f64>,
}

impl RegHorseshoeSpec {
    pub fn new(n_terms: usize, dim: usize) -> Self {
        RegHorseshoeSpec {
            tau0: 0.1,
            nu: 4.0,
            s: 2.0,
            scale: DMatrix::from_element(n_terms, dim, 1.0),
        }
    }

    /// Prior on the squared slab width `c^2`.
    pub fn c2_prior(&self) -> DistributionSpec {
        InverseGamma {
            alpha: self.nu / 2.0,
            beta: self.nu / 2.0 * self.s * self.s,
        }
    }

    /// Draw (coefficients, local scales, global scale, squared slab width).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
        let (l, d) = self.scale.shape();
        let tau = (HalfCauchy { scale: self.tau0 }).sample(rng);
        let c2 = self.c2_prior().sample(rng);
        let c = c2.sqrt();
        let mut lambdas = DMatrix::zeros(l, d);
        let mut xi = DMatrix::zeros(l, d);
        for i in 0..l {
            for j in 0..d {
                let lam = (HalfCauchy { scale: 1.0 }).sample(rng);
                lambdas[(i, j)] = lam;
                let sd = rh_lambda_tilde(lam, tau, c) * tau * self.scale[(i, j)];
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                xi[(i, j)] = sd * z;
            }
        }
        (xi, lambdas, tau, c2)
    }
}

/// Regularized local scale: `c * lambda / sqrt(c^2 + tau^2 lambda^2)`.
/// Approaches `lambda` when `tau * lambda << c` and saturates at `c / tau`
/// when `tau * lambda >> c`.
pub fn rh_lambda_tilde(lambda: f64, tau: f64, c: f64) -> f64 {
    c * lambda / (c * c + tau * tau * lambda * lambda).sqrt()
}

/// Joint log-prior of coefficients and hierarchy variables under the
/// regularized horseshoe: Gaussian coefficients with per-entry scale
/// `lambda_tilde * tau * alpha`, half-Cauchy priors on each local scale
/// and on the global scale, and an inverse-gamma prior on `c^2`.
pub fn rh_logprior(
    xi: &CoefficientMatrix,
    lambdas: &DMatrix<f64>,
    tau: f64,
    c2: f64,
    spec: &RegHorseshoeSpec,
) -> f64 {
    let (l, d) = spec.scale.shape();
    assert_eq!(xi.values.shape(), (l, d));
    assert_eq!(lambdas.shape(), (l, d));
    let c = c2.sqrt();
    let unit_hc = HalfCauchy { scale: 1.0 };
    let tau_hc = HalfCauchy { scale: spec.tau0 };
    let mut acc = tau_hc.logpdf(tau) + spec.c2_prior().logpdf(c2);
    for i in 0..l {
        for j in 0..d {
            let lam = lambdas[(i, j)];
            let sd = rh_lambda_tilde(lam, tau, c) * tau * spec.scale[(i, j)];
            acc += log_normal_density(xi.values[(i, j)], sd) + unit_hc.logpdf(lam);
        }
    }
    acc
}

/// Gradient of [`rh_logprior`] with respect to the coefficients and the
/// logs of the hierarchy variables.
pub fn rh_logprior_grad(
    xi: &CoefficientMatrix,
    lambdas: &DMatrix<f64>,
    tau: f64,
    c2: f64,
    spec: &RegHorseshoeSpec,
) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
    let (l, d) = spec.scale.shape();
    let c = c2.sqrt();
    let mut d_xi = DMatrix::zeros(l, d);
    let mut d_log_lambda = DMatrix::zeros(l, d);
    // Hyperprior contributions to the log-scale gradients.
    let mut d_log_tau = tau * (HalfCauchy { scale: spec.tau0 }).logpdf_grad(tau);
    let mut d_log_c2 = c2 * self_logpdf_grad(&spec.c2_prior(), c2);
    for i in 0..l {
        for j in 0..d {
            let lam = lambdas[(i, j)];
            let alpha = spec.scale[(i, j)];
            let x = xi.values[(i, j)];
            let dd = c * c + tau * tau * lam * lam;
            let lt = c * lam / dd.sqrt();
            let sd = lt * tau * alpha;
            // logN(x; 0, sd^2) partials.
            let dl_dx = -x / (sd * sd);
            let dl_dsd = -1.0 / sd + x * x / (sd * sd * sd);
            let dlt_dlam = c * c * c / dd.powf(1.5);
            let dlt_dtau = -lt * tau * lam * lam / dd;
            let dlt_dc = lt * tau * tau * lam * lam / (c * dd);
            d_xi[(i, j)] = dl_dx;
            d_log_lambda[(i, j)] = dl_dsd * tau * alpha * dlt_dlam * lam
                + lam * (HalfCauchy { scale: 1.0 }).logpdf_grad(lam);
            d_log_tau += dl_dsd * alpha * (dlt_dtau * tau + lt) * tau;
            d_log_c2 += dl_dsd * tau * alpha * dlt_dc * (c / 2.0);
        }
    }
    (d_xi, d_log_lambda, d_log_tau, d_log_c2)
}

fn self_logpdf_grad(dist: &DistributionSpec, x: f64) -> f64 {
    dist.logpdf_grad(x)
}
