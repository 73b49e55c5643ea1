//! Posterior target densities assembled from a model and a dataset.
//!
//! Sampling parameterizations:
//! - coefficients are sampled as standardized values `z` with unit-normal
//!   priors; the effective coefficient entering the dynamics is
//!   `z * scale(hierarchy)`. For the spike-and-slab prior the scale is
//!   `slab_sd * alpha` gated by the indicator, which reproduces the
//!   spike/slab joint density exactly while letting dormant coefficients
//!   mix freely. For the regularized horseshoe the scale is
//!   `lambda_tilde * tau * alpha` (non-centered form).
//! - positive-support nuisance parameters (x0 under positive priors, the
//!   noise scales, horseshoe locals/global/slab width) are sampled on the
//!   log scale with Jacobian corrections.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::data::Dataset;
use crate::library::CoefficientMatrix;
use crate::mcmc::TargetDensity;
use crate::odeint::integrate_with_sensitivities_relaxed;
use crate::priors::{rh_lambda_tilde, DistributionSpec, RegHorseshoeSpec, SpikeSlabSpec};

use super::{ObservationKind, UqSindyModel};

const LN_2PI: f64 = 1.8378770664093453;

/// Immutable problem data shared by every chain.
pub(crate) struct ModelData {
    pub model: UqSindyModel,
    pub times: Vec<f64>,
    pub y: DMatrix<f64>,
    pub log_y: DMatrix<f64>,
    pub n_terms: usize,
    pub dim: usize,
    /// Ridge least-squares coefficient estimate used to warm-start chains.
    pub ls_init: DMatrix<f64>,
}

impl ModelData {
    pub fn new(model: UqSindyModel, data: &Dataset) -> Self {
        let n_terms = model.library.n_terms();
        let dim = model.library.dim;
        assert_eq!(data.dim(), dim, "data dimension must match the library");
        let log_y = data.observations.map(|v| if v > 0.0 { v.ln() } else { f64::NAN });
        let ls_init = warm_start_coefficients(&model.library, data);
        ModelData {
            model,
            times: data.times.clone(),
            y: data.observations.clone(),
            log_y,
            n_terms,
            dim,
            ls_init,
        }
    }

    pub fn n_xi(&self) -> usize {
        self.n_terms * self.dim
    }

    /// Log-likelihood of the data given effective coefficients, initial
    /// state, and noise scales. `-inf` on integration failure or (for the
    /// lognormal model) non-positive predictions.
    pub fn loglik(&self, xi_eff: &DMatrix<f64>, x0: &[f64], sigmas: &[f64]) -> f64 {
        let xi = CoefficientMatrix {
            values: xi_eff.clone(),
        };
        let traj = match crate::odeint::integrate(
            &self.model.library,
            &xi,
            x0,
            &self.times,
            &self.model.integrator,
        ) {
            Ok(t) => t,
            Err(_) => return f64::NEG_INFINITY,
        };
        let n = self.times.len();
        let mut acc = 0.0;
        for j in 0..self.dim {
            let sigma = sigmas[j];
            let ln_sigma = sigma.ln();
            for i in 0..n {
                let pred = traj.states[(i, j)];
                match self.model.obs.kind {
                    ObservationKind::Normal => {
                        let r = self.y[(i, j)] - pred;
                        acc += -ln_sigma - 0.5 * LN_2PI - 0.5 * r * r / (sigma * sigma);
                    }
                    ObservationKind::Lognormal => {
                        if pred <= 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        let s = self.log_y[(i, j)] - pred.ln();
                        acc += -self.log_y[(i, j)] - ln_sigma - 0.5 * LN_2PI
                            - 0.5 * s * s / (sigma * sigma);
                    }
                }
            }
        }
        acc
    }

    /// Log-likelihood plus its gradients with respect to the effective
    /// coefficients in `active` (flat column-major indices), the initial
    /// state, and the noise scales. `None` signals an invalid state.
    pub fn loglik_grad(
        &self,
        xi_eff: &DMatrix<f64>,
        x0: &[f64],
        sigmas: &[f64],
        active: &[usize],
    ) -> Option<LikGrad> {
        let xi = CoefficientMatrix {
            values: xi_eff.clone(),
        };
        let (traj, sens) = integrate_with_sensitivities_relaxed(
            &self.model.library,
            &xi,
            x0,
            &self.times,
            &self.model.integrator,
            active,
        )
        .ok()?;
        let n = self.times.len();
        let d = self.dim;
        let mut loglik = 0.0;
        let mut d_xi = vec![0.0; self.n_xi()];
        let mut d_x0 = vec![0.0; d];
        let mut d_sigma = vec![0.0; d];
        for j in 0..d {
            let sigma = sigmas[j];
            let inv_var = 1.0 / (sigma * sigma);
            for i in 0..n {
                let pred = traj.states[(i, j)];
                // d loglik / d pred, plus the loglik and sigma terms.
                let dl_dpred = match self.model.obs.kind {
                    ObservationKind::Normal => {
                        let r = self.y[(i, j)] - pred;
                        loglik += -sigma.ln() - 0.5 * LN_2PI - 0.5 * r * r * inv_var;
                        d_sigma[j] += -1.0 / sigma + r * r / (sigma * sigma * sigma);
                        r * inv_var
                    }
                    ObservationKind::Lognormal => {
                        if pred <= 0.0 {
                            return None;
                        }
                        let s = self.log_y[(i, j)] - pred.ln();
                        loglik += -self.log_y[(i, j)] - sigma.ln() - 0.5 * LN_2PI
                            - 0.5 * s * s * inv_var;
                        d_sigma[j] += -1.0 / sigma + s * s / (sigma * sigma * sigma);
                        s * inv_var / pred
                    }
                };
                for &q in active {
                    d_xi[q] += dl_dpred * sens.dstate_dxi[i][(j, q)];
                }
                for k in 0..d {
                    d_x0[k] += dl_dpred * sens.dstate_dx0[i][(j, k)];
                }
            }
        }
        if !loglik.is_finite() {
            return None;
        }
        Some(LikGrad {
            loglik,
            d_xi,
            d_x0,
            d_sigma,
        })
    }
}

pub(crate) struct LikGrad {
    pub loglik: f64,
    pub d_xi: Vec<f64>,
    pub d_x0: Vec<f64>,
    pub d_sigma: Vec<f64>,
}

/// Ridge least squares on finite-difference derivatives, the classic
/// point-estimate starting guess. Falls back to zeros when the data is too
/// short or the solve fails.
fn warm_start_coefficients(
    lib: &crate::library::FunctionLibrary,
    data: &Dataset,
) -> DMatrix<f64> {
    let l = lib.n_terms();
    let d = lib.dim;
    let fallback = DMatrix::zeros(l, d);
    if data.n_samples() < 3 {
        return fallback;
    }
    let Ok(xdot) = crate::baseline::finite_diff_derivatives(&data.times, &data.observations)
    else {
        return fallback;
    };
    let n = data.n_samples();
    let mut theta = DMatrix::zeros(n, l);
    let mut row = vec![0.0; l];
    let mut x = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            x[j] = data.observations[(i, j)];
        }
        lib.eval_into(&x, &mut row);
        for (j, &v) in row.iter().enumerate() {
            theta[(i, j)] = v;
        }
    }
    let cfg = crate::baseline::StlsqConfig {
        threshold: 1e-12,
        ridge: 1e-6,
        max_iters: 1,
    };
    match crate::baseline::stlsq_quiet(&theta, &xdot, &cfg) {
        Ok(values) => values.map(|v| if v.is_finite() { v.clamp(-5.0, 5.0) } else { 0.0 }),
        Err(_) => fallback,
    }
}

fn bit_key(parts: &[&[f64]]) -> Vec<u64> {
    let mut key = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for part in parts {
        key.extend(part.iter().map(|v| v.to_bits()));
    }
    key
}

/// Nuisance-block helpers shared by every target: unconstrained x0 and
/// noise scales with their priors and Jacobians.
fn nuisance_logp(data: &ModelData, w_x0: &[f64], w_sigma: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let d = data.dim;
    let mut lp = 0.0;
    let mut x0 = vec![0.0; d];
    let mut sigmas = vec![0.0; d];
    for j in 0..d {
        let dist = &data.model.x0_prior[j];
        x0[j] = dist.constrain(w_x0[j]);
        lp += dist.unconstrained_logpdf_and_grad(w_x0[j]).0;
        let nd = &data.model.obs.noise_prior[j];
        sigmas[j] = nd.constrain(w_sigma[j]);
        lp += nd.unconstrained_logpdf_and_grad(w_sigma[j]).0;
    }
    (lp, x0, sigmas)
}

/// Gradient contributions of the nuisance blocks: prior parts plus the
/// chain rule mapping likelihood gradients to unconstrained coordinates.
fn nuisance_grads(
    data: &ModelData,
    w_x0: &[f64],
    w_sigma: &[f64],
    lik: &LikGrad,
    grad_x0: &mut [f64],
    grad_sigma: &mut [f64],
) {
    let d = data.dim;
    for j in 0..d {
        let dist = &data.model.x0_prior[j];
        let x = dist.constrain(w_x0[j]);
        let dxdw = if dist.positive_support() { x } else { 1.0 };
        grad_x0[j] = lik.d_x0[j] * dxdw + dist.unconstrained_logpdf_and_grad(w_x0[j]).1;
        let nd = &data.model.obs.noise_prior[j];
        let s = nd.constrain(w_sigma[j]);
        let dsdw = if nd.positive_support() { s } else { 1.0 };
        grad_sigma[j] = lik.d_sigma[j] * dsdw + nd.unconstrained_logpdf_and_grad(w_sigma[j]).1;
    }
}

/// Mass hints for the x0 and sigma blocks: prior scales, capped because
/// the data usually pins these much tighter than the prior.
fn nuisance_inv_mass(data: &ModelData, out: &mut Vec<f64>) {
    for j in 0..data.dim {
        out.push(data.model.x0_prior[j].unconstrained_variance_hint().min(1e-2));
    }
    for j in 0..data.dim {
        out.push(data.model.obs.noise_prior[j].unconstrained_variance_hint().min(1.0));
    }
}

fn initial_nuisance(data: &ModelData, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let d = data.dim;
    let n = data.y.nrows();
    let mut w_x0 = vec![0.0; d];
    let mut w_sigma = vec![0.0; d];
    for j in 0..d {
        let jitter: f64 = rand_distr::StandardNormal.sample(rng);
        let y0 = data.y[(0, j)];
        let dist = &data.model.x0_prior[j];
        let guess = if dist.positive_support() {
            y0.max(1e-3)
        } else {
            y0
        };
        w_x0[j] = dist.unconstrain(guess).0 + 0.05 * jitter;

        // Noise-scale guess from second differences of the observations
        // (in log space for the lognormal model). Overestimates when the
        // sampling is coarse, which is the safe direction: the likelihood
        // anneals it down during warmup.
        let column = |i: usize| match data.model.obs.kind {
            super::ObservationKind::Normal => data.y[(i, j)],
            super::ObservationKind::Lognormal => data.log_y[(i, j)],
        };
        let mut acc = 0.0;
        for i in 1..n.saturating_sub(1) {
            let dd = column(i + 1) - 2.0 * column(i) + column(i - 1);
            acc += dd * dd;
        }
        let resid_sd = if n >= 3 {
            (acc / (6.0 * (n - 2) as f64)).sqrt()
        } else {
            0.0
        };
        let nd = &data.model.obs.noise_prior[j];
        let prior_scale = nd.median().max(1e-6);
        let guess = resid_sd.clamp(1e-4, 10.0 * prior_scale).min(prior_scale.max(resid_sd));
        let jitter: f64 = rand_distr::StandardNormal.sample(rng);
        w_sigma[j] = nd.unconstrain(guess.max(1e-4)).0 + 0.1 * jitter;
    }
    (w_x0, w_sigma)
}

/// Spike-and-slab posterior: continuous block
/// `[z (l*d, column-major) | x0 | sigma]` (nuisances unconstrained),
/// one binary indicator per coefficient.
pub struct SpikeSlabTarget {
    pub(crate) data: Arc<ModelData>,
    pub(crate) spec: SpikeSlabSpec,
    loglik_cache: Mutex<VecDeque<(Vec<u64>, f64)>>,
}

impl SpikeSlabTarget {
    pub(crate) fn new(data: Arc<ModelData>, spec: SpikeSlabSpec) -> Self {
        SpikeSlabTarget {
            data,
            spec,
            loglik_cache: Mutex::new(VecDeque::with_capacity(4)),
        }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        (
            &theta[..n_xi],
            &theta[n_xi..n_xi + d],
            &theta[n_xi + d..n_xi + 2 * d],
        )
    }

    /// Effective coefficient for flat index `q` given its indicator.
    pub(crate) fn effective(&self, z: f64, lambda: u8, q: usize) -> f64 {
        let (l, _) = self.spec.scale.shape();
        let (i, j) = (q % l, q / l);
        z * lambda as f64 * self.spec.slab_sd * self.spec.scale[(i, j)]
    }

    fn xi_eff(&self, z: &[f64], indicators: &[u8]) -> DMatrix<f64> {
        let l = self.data.n_terms;
        let d = self.data.dim;
        DMatrix::from_fn(l, d, |i, j| {
            let q = j * l + i;
            self.effective(z[q], indicators[q], q)
        })
    }

    /// Cached likelihood: exact-state key, tiny LRU. Dormant-coefficient
    /// indicator flips leave the effective state unchanged and hit the
    /// cache, so a Gibbs sweep costs one integration per active flip.
    fn loglik_cached(&self, xi_eff: &DMatrix<f64>, x0: &[f64], sigmas: &[f64]) -> f64 {
        let key = bit_key(&[xi_eff.as_slice(), x0, sigmas]);
        {
            let cache = self.loglik_cache.lock().unwrap();
            if let Some((_, v)) = cache.iter().find(|(k, _)| *k == key) {
                return *v;
            }
        }
        let value = self.data.loglik(xi_eff, x0, sigmas);
        let mut cache = self.loglik_cache.lock().unwrap();
        if cache.len() >= 4 {
            cache.pop_front();
        }
        cache.push_back((key, value));
        value
    }

}

impl TargetDensity for SpikeSlabTarget {
    fn continuous_dim(&self) -> usize {
        self.data.n_xi() + 2 * self.data.dim
    }

    fn indicator_dim(&self) -> usize {
        self.data.n_xi()
    }

    fn log_density(&self, theta: &[f64], indicators: &[u8]) -> f64 {
        let (z, w_x0, w_sigma) = self.split(theta);
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, w_x0, w_sigma);
        let mut lp = nuis_lp;
        for &zi in z {
            lp += -0.5 * LN_2PI - 0.5 * zi * zi;
        }
        let ln_pi = self.spec.pi.ln();
        let ln_1m = (1.0 - self.spec.pi).ln();
        for &lam in indicators {
            lp += if lam == 1 { ln_pi } else { ln_1m };
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let xi_eff = self.xi_eff(z, indicators);
        lp + self.loglik_cached(&xi_eff, &x0, &sigmas)
    }

    fn log_density_grad(&self, theta: &[f64], indicators: &[u8], grad: &mut [f64]) -> f64 {
        let (z, w_x0, w_sigma) = self.split(theta);
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, w_x0, w_sigma);
        if !nuis_lp.is_finite() {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        }
        let xi_eff = self.xi_eff(z, indicators);
        let active: Vec<usize> = (0..n_xi).filter(|&q| indicators[q] == 1).collect();
        let Some(lik) = self.data.loglik_grad(&xi_eff, &x0, &sigmas, &active) else {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        };

        let l = self.data.n_terms;
        let mut lp = nuis_lp + lik.loglik;
        for (q, &zi) in z.iter().enumerate() {
            lp += -0.5 * LN_2PI - 0.5 * zi * zi;
            let (i, j) = (q % l, q / l);
            let scale = indicators[q] as f64 * self.spec.slab_sd * self.spec.scale[(i, j)];
            grad[q] = lik.d_xi[q] * scale - zi;
        }
        let ln_pi = self.spec.pi.ln();
        let ln_1m = (1.0 - self.spec.pi).ln();
        for &lam in indicators {
            lp += if lam == 1 { ln_pi } else { ln_1m };
        }
        let (gx0, gsig) = grad[n_xi..].split_at_mut(d);
        nuisance_grads(&self.data, w_x0, w_sigma, &lik, gx0, gsig);
        lp
    }

    fn indicator_log_odds(&self, theta: &[f64], indicators: &[u8], k: usize) -> f64 {
        let (z, w_x0, w_sigma) = self.split(theta);
        let (_, x0, sigmas) = nuisance_logp(&self.data, w_x0, w_sigma);
        let l = self.data.n_terms;
        let (i, j) = (k % l, k / l);

        let mut xi_eff = self.xi_eff(z, indicators);
        xi_eff[(i, j)] = self.effective(z[k], 1, k);
        let ll_on = self.loglik_cached(&xi_eff, &x0, &sigmas);
        xi_eff[(i, j)] = 0.0;
        let ll_off = self.loglik_cached(&xi_eff, &x0, &sigmas);

        // The standardized coefficient's unit-normal prior is indicator
        // independent, so only the likelihood and the Bernoulli mass move.
        (ll_on - ll_off) + self.spec.pi.ln() - (1.0 - self.spec.pi).ln()
    }

    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let l = self.data.n_terms;
        let mut theta = Vec::with_capacity(self.continuous_dim());
        for q in 0..self.data.n_xi() {
            let (i, j) = (q % l, q / l);
            let guess = self.data.ls_init[(i, j)] / (self.spec.slab_sd * self.spec.scale[(i, j)]);
            let zi: f64 = rand_distr::StandardNormal.sample(rng);
            theta.push(guess.clamp(-3.0, 3.0) + 0.1 * zi);
        }
        let (w_x0, w_sigma) = initial_nuisance(&self.data, rng);
        theta.extend(w_x0);
        theta.extend(w_sigma);
        theta
    }

    fn initial_indicators(&self, _rng: &mut ChaCha8Rng) -> Vec<u8> {
        // Start from the full model. Dropping a spurious term is always a
        // viable single flip, while assembling a multi-term equation from
        // the empty model can require several simultaneous flips that the
        // one-at-a-time sweep would never accept.
        vec![1; self.indicator_dim()]
    }

    fn initial_inv_mass(&self) -> Vec<f64> {
        let mut out = vec![0.25; self.data.n_xi()];
        nuisance_inv_mass(&self.data, &mut out);
        out
    }
}

/// Regularized-horseshoe posterior, fully continuous:
/// `[z (l*d) | x0 | sigma | log lambda (l*d) | log tau | log c2]`.
pub struct RegHorseshoeTarget {
    pub(crate) data: Arc<ModelData>,
    pub(crate) spec: RegHorseshoeSpec,
}

struct RhBlocks<'a> {
    z: &'a [f64],
    w_x0: &'a [f64],
    w_sigma: &'a [f64],
    eta: &'a [f64],
    rho: f64,
    zeta: f64,
}

impl RegHorseshoeTarget {
    pub(crate) fn new(data: Arc<ModelData>, spec: RegHorseshoeSpec) -> Self {
        RegHorseshoeTarget { data, spec }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> RhBlocks<'a> {
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        RhBlocks {
            z: &theta[..n_xi],
            w_x0: &theta[n_xi..n_xi + d],
            w_sigma: &theta[n_xi + d..n_xi + 2 * d],
            eta: &theta[n_xi + 2 * d..2 * n_xi + 2 * d],
            rho: theta[2 * n_xi + 2 * d],
            zeta: theta[2 * n_xi + 2 * d + 1],
        }
    }

    /// Coefficient scale for flat index `q`.
    fn sd(&self, lambda: f64, tau: f64, c: f64, q: usize) -> f64 {
        let (l, _) = self.spec.scale.shape();
        let (i, j) = (q % l, q / l);
        rh_lambda_tilde(lambda, tau, c) * tau * self.spec.scale[(i, j)]
    }
}

impl TargetDensity for RegHorseshoeTarget {
    fn continuous_dim(&self) -> usize {
        2 * self.data.n_xi() + 2 * self.data.dim + 2
    }

    fn log_density(&self, theta: &[f64], _: &[u8]) -> f64 {
        let b = self.split(theta);
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, b.w_x0, b.w_sigma);
        let tau = b.rho.exp();
        let c2 = b.zeta.exp();
        let c = c2.sqrt();
        if !tau.is_finite() || !c2.is_finite() || tau == 0.0 || c2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        let unit_hc = DistributionSpec::HalfCauchy { scale: 1.0 };
        let tau_hc = DistributionSpec::HalfCauchy {
            scale: self.spec.tau0,
        };
        let mut lp = nuis_lp + tau_hc.logpdf(tau) + b.rho + self.spec.c2_prior().logpdf(c2) + b.zeta;
        let l = self.data.n_terms;
        let d = self.data.dim;
        let mut xi_eff = DMatrix::zeros(l, d);
        for q in 0..self.data.n_xi() {
            let lam = b.eta[q].exp();
            lp += -0.5 * LN_2PI - 0.5 * b.z[q] * b.z[q];
            lp += unit_hc.logpdf(lam) + b.eta[q];
            xi_eff[(q % l, q / l)] = b.z[q] * self.sd(lam, tau, c, q);
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.data.loglik(&xi_eff, &x0, &sigmas)
    }

    fn log_density_grad(&self, theta: &[f64], _: &[u8], grad: &mut [f64]) -> f64 {
        let b = self.split(theta);
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        let l = self.data.n_terms;
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, b.w_x0, b.w_sigma);
        let tau = b.rho.exp();
        let c2 = b.zeta.exp();
        let c = c2.sqrt();
        if !nuis_lp.is_finite() || !tau.is_finite() || !c2.is_finite() || tau == 0.0 || c2 == 0.0 {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        }

        let mut xi_eff = DMatrix::zeros(l, d);
        let mut sds = vec![0.0; n_xi];
        let mut lambdas = vec![0.0; n_xi];
        for q in 0..n_xi {
            let lam = b.eta[q].exp();
            lambdas[q] = lam;
            sds[q] = self.sd(lam, tau, c, q);
            xi_eff[(q % l, q / l)] = b.z[q] * sds[q];
        }
        let active: Vec<usize> = (0..n_xi).collect();
        let Some(lik) = self.data.loglik_grad(&xi_eff, &x0, &sigmas, &active) else {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        };

        let unit_hc = DistributionSpec::HalfCauchy { scale: 1.0 };
        let tau_hc = DistributionSpec::HalfCauchy {
            scale: self.spec.tau0,
        };
        let mut lp =
            nuis_lp + lik.loglik + tau_hc.logpdf(tau) + b.rho + self.spec.c2_prior().logpdf(c2)
                + b.zeta;
        let mut g_rho = tau * tau_hc.logpdf_grad(tau) + 1.0;
        // d/d zeta of [log InvGamma(c2) + zeta].
        let ig = self.spec.c2_prior();
        let mut g_zeta = c2 * ig.logpdf_grad(c2) + 1.0;

        for q in 0..n_xi {
            let lam = lambdas[q];
            let (i, j) = (q % l, q / l);
            let alpha = self.spec.scale[(i, j)];
            lp += -0.5 * LN_2PI - 0.5 * b.z[q] * b.z[q];
            lp += unit_hc.logpdf(lam) + b.eta[q];

            let g_xi = lik.d_xi[q];
            grad[q] = g_xi * sds[q] - b.z[q];

            let dd = c * c + tau * tau * lam * lam;
            let lt = c * lam / dd.sqrt();
            let dlt_dlam = c * c * c / dd.powf(1.5);
            let dlt_dtau = -lt * tau * lam * lam / dd;
            let dlt_dc = lt * tau * tau * lam * lam / (c * dd);

            grad[n_xi + 2 * d + q] = g_xi * b.z[q] * tau * alpha * dlt_dlam * lam
                + (lam * unit_hc.logpdf_grad(lam) + 1.0);
            g_rho += g_xi * b.z[q] * alpha * (dlt_dtau * tau + lt) * tau;
            g_zeta += g_xi * b.z[q] * tau * alpha * dlt_dc * (c / 2.0);
        }
        let (gx0, gsig) = grad[n_xi..n_xi + 2 * d].split_at_mut(d);
        nuisance_grads(&self.data, b.w_x0, b.w_sigma, &lik, gx0, gsig);
        grad[2 * n_xi + 2 * d] = g_rho;
        grad[2 * n_xi + 2 * d + 1] = g_zeta;
        lp
    }

    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Start at the least-squares guess with a consistent hierarchy:
        // pick each local scale so that lambda_tilde * tau0 * alpha equals
        // the guess magnitude (inverting the regularized-scale map), and
        // put the standardized coefficient at +-1. Chains then begin in
        // the data-fitting basin rather than the fully shrunk one.
        let n_xi = self.data.n_xi();
        let l = self.data.n_terms;
        let tau0 = self.spec.tau0;
        let c = self.spec.s;
        let mut theta = Vec::with_capacity(self.continuous_dim());
        let mut etas = Vec::with_capacity(n_xi);
        for q in 0..n_xi {
            let (i, j) = (q % l, q / l);
            let alpha = self.spec.scale[(i, j)];
            let guess = self.data.ls_init[(i, j)];
            // Floor the starting scale: wide-to-narrow adaptation through
            // the funnel is the easy direction, narrow-to-wide is not.
            let lt_target = (guess.abs().max(0.3) / (tau0 * alpha)).min(0.95 * c / tau0);
            let lam = lt_target * c / (c * c - lt_target * lt_target * tau0 * tau0).sqrt();
            let sd = rh_lambda_tilde(lam, tau0, c) * tau0 * alpha;
            let zi: f64 = rand_distr::StandardNormal.sample(rng);
            theta.push(guess / sd + 0.1 * zi);
            let zi: f64 = rand_distr::StandardNormal.sample(rng);
            etas.push(lam.ln() + 0.1 * zi);
        }
        let (w_x0, w_sigma) = initial_nuisance(&self.data, rng);
        theta.extend(w_x0);
        theta.extend(w_sigma);
        theta.extend(etas);
        let zi: f64 = rand_distr::StandardNormal.sample(rng);
        theta.push(tau0.ln() + 0.1 * zi);
        let zi: f64 = rand_distr::StandardNormal.sample(rng);
        theta.push((self.spec.s * self.spec.s).ln() + 0.1 * zi);
        theta
    }

    fn initial_inv_mass(&self) -> Vec<f64> {
        let n_xi = self.data.n_xi();
        let mut out = vec![0.25; n_xi];
        nuisance_inv_mass(&self.data, &mut out);
        out.extend(vec![1.0; n_xi]);
        out.push(0.25);
        out.push(0.25);
        out
    }
}

/// Fixed-form coefficient prior (Laplace comparison or the normal
/// reference used for shrinkage factors): `[xi (l*d) | x0 | sigma]`.
pub struct PlainCoeffTarget {
    pub(crate) data: Arc<ModelData>,
    pub(crate) prior: DistributionSpec,
}

impl PlainCoeffTarget {
    pub(crate) fn new(data: Arc<ModelData>, prior: DistributionSpec) -> Self {
        PlainCoeffTarget { data, prior }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        (
            &theta[..n_xi],
            &theta[n_xi..n_xi + d],
            &theta[n_xi + d..n_xi + 2 * d],
        )
    }

    fn xi_matrix(&self, xi: &[f64]) -> DMatrix<f64> {
        let l = self.data.n_terms;
        let d = self.data.dim;
        DMatrix::from_fn(l, d, |i, j| xi[j * l + i])
    }
}

impl TargetDensity for PlainCoeffTarget {
    fn continuous_dim(&self) -> usize {
        self.data.n_xi() + 2 * self.data.dim
    }

    fn log_density(&self, theta: &[f64], _: &[u8]) -> f64 {
        let (xi, w_x0, w_sigma) = self.split(theta);
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, w_x0, w_sigma);
        let mut lp = nuis_lp;
        for &v in xi {
            lp += self.prior.logpdf(v);
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.data.loglik(&self.xi_matrix(xi), &x0, &sigmas)
    }

    fn log_density_grad(&self, theta: &[f64], _: &[u8], grad: &mut [f64]) -> f64 {
        let (xi, w_x0, w_sigma) = self.split(theta);
        let n_xi = self.data.n_xi();
        let d = self.data.dim;
        let (nuis_lp, x0, sigmas) = nuisance_logp(&self.data, w_x0, w_sigma);
        if !nuis_lp.is_finite() {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        }
        let active: Vec<usize> = (0..n_xi).collect();
        let Some(lik) = self
            .data
            .loglik_grad(&self.xi_matrix(xi), &x0, &sigmas, &active)
        else {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        };
        let mut lp = nuis_lp + lik.loglik;
        for (q, &v) in xi.iter().enumerate() {
            lp += self.prior.logpdf(v);
            grad[q] = lik.d_xi[q] + self.prior.logpdf_grad(v);
        }
        let (gx0, gsig) = grad[n_xi..].split_at_mut(d);
        nuisance_grads(&self.data, w_x0, w_sigma, &lik, gx0, gsig);
        lp
    }

    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let l = self.data.n_terms;
        let mut theta = Vec::with_capacity(self.continuous_dim());
        for q in 0..self.data.n_xi() {
            let (i, j) = (q % l, q / l);
            let zi: f64 = rand_distr::StandardNormal.sample(rng);
            theta.push(self.data.ls_init[(i, j)] + 0.05 * zi);
        }
        let (w_x0, w_sigma) = initial_nuisance(&self.data, rng);
        theta.extend(w_x0);
        theta.extend(w_sigma);
        theta
    }

    fn initial_inv_mass(&self) -> Vec<f64> {
        let mut out = vec![0.25; self.data.n_xi()];
        nuisance_inv_mass(&self.data, &mut out);
        out
    }
}

/// The posterior target for a model/dataset pair, dispatching on the
/// coefficient prior.
pub enum ModelTarget {
    SpikeSlab(SpikeSlabTarget),
    RegHorseshoe(RegHorseshoeTarget),
    Plain(PlainCoeffTarget),
}

impl ModelTarget {
    pub(crate) fn data(&self) -> &Arc<ModelData> {
        match self {
            ModelTarget::SpikeSlab(t) => &t.data,
            ModelTarget::RegHorseshoe(t) => &t.data,
            ModelTarget::Plain(t) => &t.data,
        }
    }
}

impl TargetDensity for ModelTarget {
    fn continuous_dim(&self) -> usize {
        match self {
            ModelTarget::SpikeSlab(t) => t.continuous_dim(),
            ModelTarget::RegHorseshoe(t) => t.continuous_dim(),
            ModelTarget::Plain(t) => t.continuous_dim(),
        }
    }
    fn indicator_dim(&self) -> usize {
        match self {
            ModelTarget::SpikeSlab(t) => t.indicator_dim(),
            ModelTarget::RegHorseshoe(t) => t.indicator_dim(),
            ModelTarget::Plain(t) => t.indicator_dim(),
        }
    }
    fn log_density(&self, theta: &[f64], indicators: &[u8]) -> f64 {
        match self {
            ModelTarget::SpikeSlab(t) => t.log_density(theta, indicators),
            ModelTarget::RegHorseshoe(t) => t.log_density(theta, indicators),
            ModelTarget::Plain(t) => t.log_density(theta, indicators),
        }
    }
    fn log_density_grad(&self, theta: &[f64], indicators: &[u8], grad: &mut [f64]) -> f64 {
        match self {
            ModelTarget::SpikeSlab(t) => t.log_density_grad(theta, indicators, grad),
            ModelTarget::RegHorseshoe(t) => t.log_density_grad(theta, indicators, grad),
            ModelTarget::Plain(t) => t.log_density_grad(theta, indicators, grad),
        }
    }
    fn indicator_log_odds(&self, theta: &[f64], indicators: &[u8], k: usize) -> f64 {
        match self {
            ModelTarget::SpikeSlab(t) => t.indicator_log_odds(theta, indicators, k),
            ModelTarget::RegHorseshoe(t) => t.indicator_log_odds(theta, indicators, k),
            ModelTarget::Plain(t) => t.indicator_log_odds(theta, indicators, k),
        }
    }
    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ModelTarget::SpikeSlab(t) => t.initial_position(rng),
            ModelTarget::RegHorseshoe(t) => t.initial_position(rng),
            ModelTarget::Plain(t) => t.initial_position(rng),
        }
    }
    fn initial_indicators(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        match self {
            ModelTarget::SpikeSlab(t) => t.initial_indicators(rng),
            ModelTarget::RegHorseshoe(t) => t.initial_indicators(rng),
            ModelTarget::Plain(t) => t.initial_indicators(rng),
        }
    }
    fn initial_inv_mass(&self) -> Vec<f64> {
        match self {
            ModelTarget::SpikeSlab(t) => t.initial_inv_mass(),
            ModelTarget::RegHorseshoe(t) => t.initial_inv_mass(),
            ModelTarget::Plain(t) => t.initial_inv_mass(),
        }
    }
}
