//! Bayesian linear regression under the three coefficient priors, used by
//! the prior-comparison experiment. The likelihood is cheap and exact, so
//! these targets double as fast integration tests of the samplers.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::mcmc::{
    compound_run, diagnostics, nuts_run, ChainConfig, Diagnostics, McmcError, TargetDensity,
};
use crate::priors::{rh_lambda_tilde, DistributionSpec};

const LN_2PI: f64 = 1.8378770664093453;

/// Coefficient prior for the regression demo.
#[derive(Debug, Clone)]
pub enum LinRegPrior {
    Laplace { b: f64 },
    SpikeSlab { pi: f64, slab_sd: f64 },
    RegHorseshoe { tau0: f64, nu: f64, s: f64 },
}

/// Synthetic regression data: standard-normal predictors, fixed sparse
/// coefficients, Gaussian noise.
pub fn gen_regression_data(
    n: usize,
    beta: &[f64],
    noise_sd: f64,
    seed: u64,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = beta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(n, p, |_, _| std_normal.sample(&mut rng));
    let noise = rand_distr::Normal::new(0.0, noise_sd).unwrap();
    let y = DVector::from_fn(n, |i, _| {
        (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + noise.sample(&mut rng)
    });
    (x, y)
}

struct RegData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    p: usize,
}

impl RegData {
    fn loglik_grad(
        &self,
        beta: &[f64],
        sigma: f64,
        grad_beta: Option<&mut [f64]>,
    ) -> (f64, f64) {
        let n = self.y.len();
        let inv_var = 1.0 / (sigma * sigma);
        let mut loglik = -(n as f64) * (sigma.ln() + 0.5 * LN_2PI);
        let mut d_sigma = -(n as f64) / sigma;
        let mut resid = vec![0.0; n];
        for i in 0..n {
            let mut pred = 0.0;
            for j in 0..self.p {
                pred += self.x[(i, j)] * beta[j];
            }
            let r = self.y[i] - pred;
            resid[i] = r;
            loglik += -0.5 * r * r * inv_var;
            d_sigma += r * r / (sigma * sigma * sigma);
        }
        if let Some(gb) = grad_beta {
            for j in 0..self.p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += self.x[(i, j)] * resid[i];
                }
                gb[j] = acc * inv_var;
            }
        }
        (loglik, d_sigma)
    }
}

fn sigma_prior() -> DistributionSpec {
    DistributionSpec::HalfCauchy { scale: 1.0 }
}

/// Laplace-prior target: `[beta (p) | log sigma]`.
struct LaplaceTarget {
    data: RegData,
    b: f64,
}

impl TargetDensity for LaplaceTarget {
    fn continuous_dim(&self) -> usize {
        self.data.p + 1
    }
    fn log_density(&self, theta: &[f64], _: &[u8]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let prior = DistributionSpec::Laplace { mu: 0.0, b: self.b };
        let mut lp = sigma_prior().unconstrained_logpdf_and_grad(theta[p]).0;
        for &v in &theta[..p] {
            lp += prior.logpdf(v);
        }
        lp + self.data.loglik_grad(&theta[..p], sigma, None).0
    }
    fn log_density_grad(&self, theta: &[f64], _: &[u8], grad: &mut [f64]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let prior = DistributionSpec::Laplace { mu: 0.0, b: self.b };
        let (loglik, d_sigma) = self.data.loglik_grad(&theta[..p], sigma, Some(&mut grad[..p]));
        let mut lp = loglik;
        for (j, &v) in theta[..p].iter().enumerate() {
            lp += prior.logpdf(v);
            grad[j] += prior.logpdf_grad(v);
        }
        let (s_lp, s_grad) = sigma_prior().unconstrained_logpdf_and_grad(theta[p]);
        grad[p] = d_sigma * sigma + s_grad;
        lp + s_lp
    }
}

/// Spike-and-slab target: `[z (p) | log sigma]` plus one indicator per
/// coefficient; effective `beta_j = z_j * slab_sd * lambda_j`.
struct SpikeSlabRegTarget {
    data: RegData,
    pi: f64,
    slab_sd: f64,
}

impl SpikeSlabRegTarget {
    fn betas(&self, theta: &[f64], indicators: &[u8]) -> Vec<f64> {
        (0..self.data.p)
            .map(|j| theta[j] * indicators[j] as f64 * self.slab_sd)
            .collect()
    }
}

impl TargetDensity for SpikeSlabRegTarget {
    fn continuous_dim(&self) -> usize {
        self.data.p + 1
    }
    fn indicator_dim(&self) -> usize {
        self.data.p
    }
    fn log_density(&self, theta: &[f64], indicators: &[u8]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let mut lp = sigma_prior().unconstrained_logpdf_and_grad(theta[p]).0;
        for &z in &theta[..p] {
            lp += -0.5 * LN_2PI - 0.5 * z * z;
        }
        for &lam in indicators {
            lp += if lam == 1 {
                self.pi.ln()
            } else {
                (1.0 - self.pi).ln()
            };
        }
        lp + self.data.loglik_grad(&self.betas(theta, indicators), sigma, None).0
    }
    fn log_density_grad(&self, theta: &[f64], indicators: &[u8], grad: &mut [f64]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let betas = self.betas(theta, indicators);
        let mut g_beta = vec![0.0; p];
        let (loglik, d_sigma) = self.data.loglik_grad(&betas, sigma, Some(&mut g_beta));
        let mut lp = loglik;
        for j in 0..p {
            let z = theta[j];
            lp += -0.5 * LN_2PI - 0.5 * z * z;
            grad[j] = g_beta[j] * indicators[j] as f64 * self.slab_sd - z;
        }
        for &lam in indicators {
            lp += if lam == 1 {
                self.pi.ln()
            } else {
                (1.0 - self.pi).ln()
            };
        }
        let (s_lp, s_grad) = sigma_prior().unconstrained_logpdf_and_grad(theta[p]);
        grad[p] = d_sigma * sigma + s_grad;
        lp + s_lp
    }
    fn initial_indicators(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        use rand::Rng;
        (0..self.data.p)
            .map(|_| u8::from(rng.random::<f64>() < self.pi))
            .collect()
    }
}

/// Regularized-horseshoe target (non-centered):
/// `[z (p) | log sigma | log lambda (p) | log tau | log c2]`.
struct RhRegTarget {
    data: RegData,
    tau0: f64,
    nu: f64,
    s: f64,
}

impl RhRegTarget {
    fn c2_prior(&self) -> DistributionSpec {
        DistributionSpec::InverseGamma {
            alpha: self.nu / 2.0,
            beta: self.nu / 2.0 * self.s * self.s,
        }
    }
}

impl TargetDensity for RhRegTarget {
    fn continuous_dim(&self) -> usize {
        2 * self.data.p + 3
    }
    fn log_density(&self, theta: &[f64], _: &[u8]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let tau = theta[2 * p + 1].exp();
        let c2 = theta[2 * p + 2].exp();
        let c = c2.sqrt();
        let unit_hc = DistributionSpec::HalfCauchy { scale: 1.0 };
        let tau_hc = DistributionSpec::HalfCauchy { scale: self.tau0 };
        let mut lp = sigma_prior().unconstrained_logpdf_and_grad(theta[p]).0
            + tau_hc.logpdf(tau)
            + theta[2 * p + 1]
            + self.c2_prior().logpdf(c2)
            + theta[2 * p + 2];
        let mut betas = vec![0.0; p];
        for j in 0..p {
            let z = theta[j];
            let lam = theta[p + 1 + j].exp();
            lp += -0.5 * LN_2PI - 0.5 * z * z + unit_hc.logpdf(lam) + theta[p + 1 + j];
            betas[j] = z * rh_lambda_tilde(lam, tau, c) * tau;
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.data.loglik_grad(&betas, sigma, None).0
    }
    fn log_density_grad(&self, theta: &[f64], _: &[u8], grad: &mut [f64]) -> f64 {
        let p = self.data.p;
        let sigma = theta[p].exp();
        let tau = theta[2 * p + 1].exp();
        let c2 = theta[2 * p + 2].exp();
        let c = c2.sqrt();
        let unit_hc = DistributionSpec::HalfCauchy { scale: 1.0 };
        let tau_hc = DistributionSpec::HalfCauchy { scale: self.tau0 };

        let mut betas = vec![0.0; p];
        let mut sds = vec![0.0; p];
        let mut lambdas = vec![0.0; p];
        for j in 0..p {
            let lam = theta[p + 1 + j].exp();
            lambdas[j] = lam;
            sds[j] = rh_lambda_tilde(lam, tau, c) * tau;
            betas[j] = theta[j] * sds[j];
        }
        let mut g_beta = vec![0.0; p];
        let (loglik, d_sigma) = self.data.loglik_grad(&betas, sigma, Some(&mut g_beta));

        let mut lp = loglik
            + tau_hc.logpdf(tau)
            + theta[2 * p + 1]
            + self.c2_prior().logpdf(c2)
            + theta[2 * p + 2];
        let mut g_rho = tau * tau_hc.logpdf_grad(tau) + 1.0;
        let mut g_zeta = c2 * self.c2_prior().logpdf_grad(c2) + 1.0;
        for j in 0..p {
            let z = theta[j];
            let lam = lambdas[j];
            lp += -0.5 * LN_2PI - 0.5 * z * z + unit_hc.logpdf(lam) + theta[p + 1 + j];
            grad[j] = g_beta[j] * sds[j] - z;
            let dd = c * c + tau * tau * lam * lam;
            let lt = c * lam / dd.sqrt();
            let dlt_dlam = c * c * c / dd.powf(1.5);
            let dlt_dtau = -lt * tau * lam * lam / dd;
            let dlt_dc = lt * tau * tau * lam * lam / (c * dd);
            grad[p + 1 + j] =
                g_beta[j] * z * tau * dlt_dlam * lam + lam * unit_hc.logpdf_grad(lam) + 1.0;
            g_rho += g_beta[j] * z * (dlt_dtau * tau + lt) * tau;
            g_zeta += g_beta[j] * z * tau * dlt_dc * (c / 2.0);
        }
        let (s_lp, s_grad) = sigma_prior().unconstrained_logpdf_and_grad(theta[p]);
        grad[p] = d_sigma * sigma + s_grad;
        grad[2 * p + 1] = g_rho;
        grad[2 * p + 2] = g_zeta;
        lp + s_lp
    }
    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = self.data.p;
        let mut theta = Vec::with_capacity(2 * p + 3);
        for _ in 0..=p {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            theta.push(0.1 * z);
        }
        for _ in 0..p {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            theta.push(0.1 * z);
        }
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        theta.push(self.tau0.ln() + 0.1 * z);
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        theta.push((self.s * self.s).ln() + 0.1 * z);
        theta
    }
}

/// Posterior summary of one regression fit: pooled effective coefficient
/// draws per predictor, plus inclusion probabilities when available.
#[derive(Debug, Clone)]
pub struct LinRegFit {
    /// Pooled effective coefficient draws, one vector per predictor.
    pub beta_draws: Vec<Vec<f64>>,
    pub sigma_draws: Vec<f64>,
    pub inclusion: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// Fit the regression under one of the demo priors.
pub fn fit_linreg(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &LinRegPrior,
    cfg: &ChainConfig,
) -> Result<LinRegFit, McmcError> {
    let p = x.ncols();
    let data = RegData {
        x: x.clone(),
        y: y.clone(),
        p,
    };
    match prior {
        LinRegPrior::Laplace { b } => {
            let target = LaplaceTarget { data, b: *b };
            let store = nuts_run(&target, cfg)?;
            let beta_draws = (0..p).map(|j| store.pooled_continuous(j)).collect();
            let sigma_draws = store
                .pooled_continuous(p)
                .into_iter()
                .map(f64::exp)
                .collect();
            Ok(LinRegFit {
                beta_draws,
                sigma_draws,
                inclusion: None,
                diagnostics: diagnostics(&store),
            })
        }
        LinRegPrior::SpikeSlab { pi, slab_sd } => {
            let target = SpikeSlabRegTarget {
                data,
                pi: *pi,
                slab_sd: *slab_sd,
            };
            let store = compound_run(&target, cfg)?;
            let beta_draws: Vec<Vec<f64>> = (0..p)
                .map(|j| {
                    let z = store.pooled_continuous(j);
                    let lam = store.pooled_indicator(j);
                    z.iter()
                        .zip(&lam)
                        .map(|(&z, &l)| z * l as f64 * slab_sd)
                        .collect()
                })
                .collect();
            let inclusion = (0..p)
                .map(|j| {
                    let lam = store.pooled_indicator(j);
                    lam.iter().map(|&l| l as f64).sum::<f64>() / lam.len() as f64
                })
                .collect();
            let sigma_draws = store
                .pooled_continuous(p)
                .into_iter()
                .map(f64::exp)
                .collect();
            Ok(LinRegFit {
                beta_draws,
                sigma_draws,
                inclusion: Some(inclusion),
                diagnostics: diagnostics(&store),
            })
        }
        LinRegPrior::RegHorseshoe { tau0, nu, s } => {
            let target = RhRegTarget {
                data,
                tau0: *tau0,
                nu: *nu,
                s: *s,
            };
            let store = nuts_run(&target, cfg)?;
            let beta_draws: Vec<Vec<f64>> = (0..p)
                .map(|j| {
                    let z = store.pooled_continuous(j);
                    let lam: Vec<f64> = store
                        .pooled_continuous(p + 1 + j)
                        .into_iter()
                        .map(f64::exp)
                        .collect();
                    let tau: Vec<f64> = store
                        .pooled_continuous(2 * p + 1)
                        .into_iter()
                        .map(f64::exp)
                        .collect();
                    let c: Vec<f64> = store
                        .pooled_continuous(2 * p + 2)
                        .into_iter()
                        .map(|v| v.exp().sqrt())
                        .collect();
                    (0..z.len())
                        .map(|k| z[k] * rh_lambda_tilde(lam[k], tau[k], c[k]) * tau[k])
                        .collect()
                })
                .collect();
            let sigma_draws = store
                .pooled_continuous(p)
                .into_iter()
                .map(f64::exp)
                .collect();
            Ok(LinRegFit {
                beta_draws,
                sigma_draws,
                inclusion: None,
                diagnostics: diagnostics(&store),
            })
        }
    }
}
