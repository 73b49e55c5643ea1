//! Multinomial No-U-Turn sampler for a single chain: leapfrog dynamics with
//! a diagonal mass matrix, dual-averaging step-size adaptation, and staged
//! mass-matrix estimation during warmup.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::TargetDensity;

/// Energy error beyond which a trajectory is declared divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Dual-averaging constants.
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

pub(super) struct NutsChain<'a, T: TargetDensity> {
    target: &'a T,
    dim: usize,
    pub theta: Vec<f64>,
    grad: Vec<f64>,
    pub logp: f64,
    pub indicators: Vec<u8>,

    // Diagonal mass matrix: inv_mass[i] is the posterior variance estimate.
    inv_mass: Vec<f64>,

    // Dual averaging state.
    step: f64,
    mu: f64,
    h_bar: f64,
    log_step_bar: f64,
    da_iter: usize,

    // Warmup schedule.
    n_warmup: usize,
    iter: usize,
    window_end: usize,
    window_len: usize,
    welford_n: usize,
    welford_mean: Vec<f64>,
    welford_m2: Vec<f64>,

    target_accept: f64,
    max_depth: usize,

    pub last_divergent: bool,
    pub last_depth: u32,
}

impl<'a, T: TargetDensity> NutsChain<'a, T> {
    pub fn new(
        target: &'a T,
        theta: Vec<f64>,
        indicators: Vec<u8>,
        n_warmup: usize,
        target_accept: f64,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let dim = theta.len();
        let mut grad = vec![0.0; dim];
        let logp = target.log_density_grad(&theta, &indicators, &mut grad);
        assert!(
            logp.is_finite(),
            "initial position has non-finite log density"
        );
        let inv_mass: Vec<f64> = target
            .initial_inv_mass()
            .into_iter()
            .map(|v| v.clamp(1e-10, 1e10))
            .collect();
        assert_eq!(inv_mass.len(), dim);
        let step = find_reasonable_step(target, &theta, &indicators, logp, &grad, &inv_mass, rng);
        // Mass estimation runs over the middle half of warmup.
        let phase_b_start = n_warmup / 4;
        let window_len = (n_warmup / 10).max(25);
        let mut chain = NutsChain {
            target,
            dim,
            theta,
            grad,
            logp,
            indicators,
            inv_mass,
            step,
            mu: (10.0 * step).ln(),
            h_bar: 0.0,
            log_step_bar: 0.0,
            da_iter: 0,
            n_warmup,
            iter: 0,
            window_end: phase_b_start + window_len,
            window_len,
            welford_n: 0,
            welford_mean: vec![0.0; dim],
            welford_m2: vec![0.0; dim],
            target_accept,
            max_depth,
            last_divergent: false,
            last_depth: 0,
        };
        chain.log_step_bar = chain.step.ln();
        chain
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn set_max_depth(&mut self, depth: usize) {
        self.max_depth = depth;
    }

    /// Refresh the cached density after the discrete block changed.
    pub fn refresh(&mut self) {
        self.logp = self
            .target
            .log_density_grad(&self.theta, &self.indicators, &mut self.grad);
    }

    /// One NUTS transition plus warmup adaptation bookkeeping.
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) {
        let dim = self.dim;
        let mut momentum = vec![0.0; dim];
        for i in 0..dim {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            momentum[i] = z / self.inv_mass[i].sqrt();
        }
        let joint0 = self.logp - kinetic(&self.inv_mass, &momentum);

        let mut fwd = State {
            theta: self.theta.clone(),
            momentum: momentum.clone(),
            grad: self.grad.clone(),
            logp: self.logp,
        };
        let mut bwd = fwd.clone();
        let start_theta = self.theta.clone();
        let start_grad = self.grad.clone();
        let start_logp = self.logp;

        let mut log_sum_w = 0.0f64;
        let mut sum_alpha = 0.0;
        let mut n_alpha = 0usize;
        let mut divergent = false;
        let mut depth = 0u32;

        while (depth as usize) < self.max_depth {
            let go_forward = rng.random::<bool>();
            let subtree = if go_forward {
                self.build_tree(depth, 1.0, &mut fwd, joint0, rng)
            } else {
                self.build_tree(depth, -1.0, &mut bwd, joint0, rng)
            };
            sum_alpha += subtree.sum_alpha;
            n_alpha += subtree.n_alpha;
            if subtree.divergent {
                divergent = true;
                break;
            }
            if subtree.turning {
                break;
            }
            // Biased progressive sampling toward the new subtree.
            if (rng.random::<f64>()).ln() < subtree.log_sum_w - log_sum_w {
                self.theta = subtree.theta_prop;
                self.grad = subtree.grad_prop;
                self.logp = subtree.logp_prop;
            }
            log_sum_w = log_sum_exp(log_sum_w, subtree.log_sum_w);
            depth += 1;
            if is_turning(&self.inv_mass, &bwd, &fwd) {
                break;
            }
        }

        if divergent {
            // Rejected transition: repeat the previous state.
            self.theta = start_theta;
            self.grad = start_grad;
            self.logp = start_logp;
        }
        self.last_divergent = divergent;
        self.last_depth = depth;

        let accept_stat = if n_alpha > 0 {
            sum_alpha / n_alpha as f64
        } else {
            0.0
        };
        self.adapt(accept_stat);
        self.iter += 1;
    }

    fn adapt(&mut self, accept_stat: f64) {
        if self.iter >= self.n_warmup {
            self.step = self.log_step_bar.exp();
            return;
        }
        // Dual averaging toward the target acceptance statistic.
        self.da_iter += 1;
        let m = self.da_iter as f64;
        let eta = 1.0 / (m + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat);
        let log_step = self.mu - m.sqrt() / DA_GAMMA * self.h_bar;
        let w = m.powf(-DA_KAPPA);
        self.log_step_bar = w * log_step + (1.0 - w) * self.log_step_bar;
        self.step = log_step.exp();

        // Mass-matrix windows over the middle half of warmup.
        let phase_b_start = self.n_warmup / 4;
        let phase_b_end = 3 * self.n_warmup / 4;
        if self.iter >= phase_b_start && self.iter < phase_b_end {
            self.welford_n += 1;
            let n = self.welford_n as f64;
            for i in 0..self.dim {
                let delta = self.theta[i] - self.welford_mean[i];
                self.welford_mean[i] += delta / n;
                self.welford_m2[i] += delta * (self.theta[i] - self.welford_mean[i]);
            }
            let window_closes = self.iter + 1 >= self.window_end.min(phase_b_end);
            if window_closes && self.welford_n >= 10 {
                let n = self.welford_n as f64;
                for i in 0..self.dim {
                    let var = self.welford_m2[i] / (n - 1.0);
                    // Shrink toward unit scale when the window is short.
                    self.inv_mass[i] = (n / (n + 5.0)) * var + 5.0 / (n + 5.0) * 1e-3;
                    self.inv_mass[i] = self.inv_mass[i].max(1e-10);
                }
                self.welford_n = 0;
                self.welford_mean.fill(0.0);
                self.welford_m2.fill(0.0);
                self.window_len *= 2;
                self.window_end = self.iter + 1 + self.window_len;
                // Restart step-size adaptation around the current step.
                self.mu = (10.0 * self.step).ln();
                self.h_bar = 0.0;
                self.da_iter = 0;
            }
        }
    }

    /// Build a balanced subtree of `2^depth` leapfrog steps extending
    /// `edge` in `direction`, leaving `edge` at the new boundary.
    fn build_tree(
        &self,
        depth: u32,
        direction: f64,
        edge: &mut State,
        joint0: f64,
        rng: &mut ChaCha8Rng,
    ) -> Subtree {
        if depth == 0 {
            let ok = self.leapfrog(edge, direction);
            let joint = if ok {
                edge.logp - kinetic(&self.inv_mass, &edge.momentum)
            } else {
                f64::NEG_INFINITY
            };
            let delta = joint - joint0;
            let divergent = !(delta > -DIVERGENCE_THRESHOLD);
            let alpha = delta.exp().min(1.0);
            return Subtree {
                theta_prop: edge.theta.clone(),
                grad_prop: edge.grad.clone(),
                logp_prop: edge.logp,
                log_sum_w: delta,
                sum_alpha: if alpha.is_finite() { alpha } else { 0.0 },
                n_alpha: 1,
                turning: false,
                divergent,
            };
        }
        let start = edge.clone();
        let mut first = self.build_tree(depth - 1, direction, edge, joint0, rng);
        if first.divergent || first.turning {
            return first;
        }
        let second = self.build_tree(depth - 1, direction, edge, joint0, rng);
        first.sum_alpha += second.sum_alpha;
        first.n_alpha += second.n_alpha;
        if second.divergent {
            first.divergent = true;
            return first;
        }
        let log_sum_w = log_sum_exp(first.log_sum_w, second.log_sum_w);
        if (rng.random::<f64>()).ln() < second.log_sum_w - log_sum_w {
            first.theta_prop = second.theta_prop;
            first.grad_prop = second.grad_prop;
            first.logp_prop = second.logp_prop;
        }
        first.log_sum_w = log_sum_w;
        // U-turn check across the combined subtree's time-ordered ends.
        first.turning = second.turning
            || if direction > 0.0 {
                is_turning(&self.inv_mass, &start, edge)
            } else {
                is_turning(&self.inv_mass, edge, &start)
            };
        first
    }

    /// One leapfrog step of size `direction * step`. Returns false when the
    /// position or gradient became non-finite.
    fn leapfrog(&self, state: &mut State, direction: f64) -> bool {
        let eps = direction * self.step;
        for i in 0..self.dim {
            state.momentum[i] += 0.5 * eps * state.grad[i];
        }
        for i in 0..self.dim {
            state.theta[i] += eps * self.inv_mass[i] * state.momentum[i];
        }
        if !state.theta.iter().all(|v| v.is_finite()) {
            state.logp = f64::NEG_INFINITY;
            return false;
        }
        state.logp = self
            .target
            .log_density_grad(&state.theta, &self.indicators, &mut state.grad);
        if !state.logp.is_finite() || !state.grad.iter().all(|v| v.is_finite()) {
            state.logp = f64::NEG_INFINITY;
            return false;
        }
        for i in 0..self.dim {
            state.momentum[i] += 0.5 * eps * state.grad[i];
        }
        true
    }
}

#[derive(Clone)]
pub(super) struct State {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

struct Subtree {
    theta_prop: Vec<f64>,
    grad_prop: Vec<f64>,
    logp_prop: f64,
    log_sum_w: f64,
    sum_alpha: f64,
    n_alpha: usize,
    turning: bool,
    divergent: bool,
}

pub(super) fn kinetic(inv_mass: &[f64], momentum: &[f64]) -> f64 {
    0.5 * momentum
        .iter()
        .zip(inv_mass)
        .map(|(p, im)| p * p * im)
        .sum::<f64>()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// U-turn criterion across the (backward, forward) boundary pair.
fn is_turning(inv_mass: &[f64], bwd: &State, fwd: &State) -> bool {
    let mut dot_fwd = 0.0;
    let mut dot_bwd = 0.0;
    for i in 0..inv_mass.len() {
        let span = fwd.theta[i] - bwd.theta[i];
        dot_fwd += span * inv_mass[i] * fwd.momentum[i];
        dot_bwd += span * inv_mass[i] * bwd.momentum[i];
    }
    dot_fwd < 0.0 || dot_bwd < 0.0
}

/// Crude step-size search: double or halve until the first leapfrog step
/// crosses 50% acceptance (Hoffman & Gelman, algorithm 4).
#[allow(clippy::too_many_arguments)]
fn find_reasonable_step<T: TargetDensity>(
    target: &T,
    theta: &[f64],
    indicators: &[u8],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = theta.len();
    let mut step = 1.0f64;
    let mut momentum = vec![0.0; dim];
    for (i, m) in momentum.iter_mut().enumerate() {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        *m = z / inv_mass[i].sqrt();
    }
    let joint0 = logp - kinetic(inv_mass, &momentum);

    let try_step = |step: f64| -> f64 {
        let mut th = theta.to_vec();
        let mut p = momentum.clone();
        let mut g = grad.to_vec();
        for i in 0..dim {
            p[i] += 0.5 * step * g[i];
        }
        for i in 0..dim {
            th[i] += step * inv_mass[i] * p[i];
        }
        if !th.iter().all(|v| v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = target.log_density_grad(&th, indicators, &mut g);
        if !lp.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        for i in 0..dim {
            p[i] += 0.5 * step * g[i];
        }
        lp - kinetic(inv_mass, &p) - joint0
    };

    let mut delta = try_step(step);
    let mut shrink_guard = 0;
    while !delta.is_finite() && shrink_guard < 100 {
        step *= 0.5;
        delta = try_step(step);
        shrink_guard += 1;
    }
    if !delta.is_finite() {
        return step.max(1e-10);
    }
    let dir: f64 = if delta > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if dir * delta <= dir * (0.5f64).ln() {
            break;
        }
        step *= 2.0f64.powf(dir);
        delta = try_step(step);
        if !delta.is_finite() {
            if dir > 0.0 {
                step *= 0.5;
            }
            break;
        }
    }
    step.clamp(1e-10, 1e3)
}
