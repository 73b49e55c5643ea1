//! Gradient-based No-U-Turn sampling, a compound sampler interleaving
//! Gibbs updates of binary indicators with NUTS updates of the continuous
//! block, and convergence diagnostics.

mod diagnostics;
mod nuts;

pub use diagnostics::{diagnostics, ess_bulk, split_rhat, Diagnostics};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("every post-warmup transition diverged in chain {chain}; the target density or its scale is likely mis-specified")]
    AllDivergent { chain: usize },
    #[error("target must have at least one continuous coordinate")]
    EmptyTarget,
    #[error("compound sampling requires a target with a discrete block")]
    NoDiscreteBlock,
}

/// A log posterior over a continuous block and an optional block of binary
/// indicators. `log_density` must return `-inf` (never NaN) for invalid
/// states, and gradients must be finite wherever the density is.
pub trait TargetDensity {
    fn continuous_dim(&self) -> usize;

    /// Number of binary indicators; zero means no discrete block.
    fn indicator_dim(&self) -> usize {
        0
    }

    fn log_density(&self, theta: &[f64], indicators: &[u8]) -> f64;

    /// Writes the gradient with respect to `theta` and returns the log
    /// density.
    fn log_density_grad(&self, theta: &[f64], indicators: &[u8], grad: &mut [f64]) -> f64;

    /// Log-odds of `indicators[k] = 1` against `0` with everything else
    /// fixed. The default evaluates the density twice; implementations
    /// with expensive likelihoods usually override this with a cached
    /// version.
    fn indicator_log_odds(&self, theta: &[f64], indicators: &[u8], k: usize) -> f64 {
        let mut scratch = indicators.to_vec();
        scratch[k] = 1;
        let on = self.log_density(theta, &scratch);
        scratch[k] = 0;
        let off = self.log_density(theta, &scratch);
        on - off
    }

    /// Metropolis log-acceptance ratio for jointly flipping indicators
    /// `j` and `k` (the double flip is its own inverse, so the proposal is
    /// symmetric and the ratio is just the density difference). Pair moves
    /// let the sampler hop between overlapping model representations that
    /// single-site sweeps cannot exchange.
    fn indicator_pair_log_ratio(&self, theta: &[f64], indicators: &[u8], j: usize, k: usize) -> f64 {
        let mut flipped = indicators.to_vec();
        flipped[j] ^= 1;
        flipped[k] ^= 1;
        self.log_density(theta, &flipped) - self.log_density(theta, indicators)
    }

    /// Starting continuous position for one chain.
    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.continuous_dim())
            .map(|_| {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                0.1 * z
            })
            .collect()
    }

    /// Starting indicator configuration for one chain.
    fn initial_indicators(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..self.indicator_dim())
            .map(|_| u8::from(rng.random::<f64>() < 0.5))
            .collect()
    }

    /// Initial diagonal mass entries (posterior variance guesses).
    /// Warmup adaptation replaces these; a good guess only shortens the
    /// early deep-tree phase.
    fn initial_inv_mass(&self) -> Vec<f64> {
        vec![1.0; self.continuous_dim()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_warmup: usize,
    pub n_draws: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_warmup: 1000,
            n_draws: 1000,
            n_chains: 4,
            target_accept: 0.9,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

/// Per-draw sampler statistics for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub step_size: f64,
    pub tree_depths: Vec<u32>,
    pub divergences: Vec<bool>,
}

/// Post-warmup draws for all chains. Divergent transitions are flagged,
/// never dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub continuous_dim: usize,
    pub indicator_dim: usize,
    /// Per chain: `n_draws x continuous_dim`.
    pub draws: Vec<DMatrix<f64>>,
    /// Per chain: `n_draws x indicator_dim`.
    pub indicators: Vec<DMatrix<u8>>,
    /// Per chain, per draw.
    pub log_density: Vec<Vec<f64>>,
    pub stats: Vec<ChainStats>,
}

impl SampleStore {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_draws_per_chain(&self) -> usize {
        self.draws.first().map_or(0, |m| m.nrows())
    }

    pub fn n_total_draws(&self) -> usize {
        self.n_chains() * self.n_draws_per_chain()
    }

    /// All chains' draws of one continuous coordinate, chain-major.
    pub fn pooled_continuous(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_total_draws());
        for chain in &self.draws {
            out.extend(chain.column(param).iter().copied());
        }
        out
    }

    /// All chains' draws of one indicator, chain-major.
    pub fn pooled_indicator(&self, k: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_total_draws());
        for chain in &self.indicators {
            out.extend(chain.column(k).iter().copied());
        }
        out
    }

    pub fn divergence_count(&self) -> usize {
        self.stats
            .iter()
            .map(|s| s.divergences.iter().filter(|&&d| d).count())
            .sum()
    }

    pub fn divergence_fraction(&self) -> f64 {
        if self.n_total_draws() == 0 {
            0.0
        } else {
            self.divergence_count() as f64 / self.n_total_draws() as f64
        }
    }
}

fn chain_rngs(seed: u64, chain: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    // Separate streams for the continuous and discrete moves so a frozen
    // discrete block leaves the continuous trajectory untouched.
    let mut continuous = ChaCha8Rng::seed_from_u64(seed);
    continuous.set_stream(2 * chain as u64);
    let mut discrete = ChaCha8Rng::seed_from_u64(seed);
    discrete.set_stream(2 * chain as u64 + 1);
    (continuous, discrete)
}

/// Multinomial NUTS over the continuous block. The target must have no
/// discrete block (condition it first if it does).
pub fn nuts_run<T>(target: &T, cfg: &ChainConfig) -> Result<SampleStore, McmcError>
where
    T: TargetDensity + Sync,
{
    run_chains(target, cfg, false)
}

/// Compound sampler: each iteration sweeps all indicators in random order,
/// resampling each from its full conditional, then advances the continuous
/// block one NUTS transition conditional on the new indicators.
pub fn compound_run<T>(target: &T, cfg: &ChainConfig) -> Result<SampleStore, McmcError>
where
    T: TargetDensity + Sync,
{
    if target.indicator_dim() == 0 {
        return Err(McmcError::NoDiscreteBlock);
    }
    run_chains(target, cfg, true)
}

fn run_chains<T>(target: &T, cfg: &ChainConfig, discrete: bool) -> Result<SampleStore, McmcError>
where
    T: TargetDensity + Sync,
{
    if target.continuous_dim() == 0 {
        return Err(McmcError::EmptyTarget);
    }
    let results: Vec<(DMatrix<f64>, DMatrix<u8>, Vec<f64>, ChainStats)> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain| run_single_chain(target, cfg, chain, discrete))
        .collect();

    let mut store = SampleStore {
        continuous_dim: target.continuous_dim(),
        indicator_dim: target.indicator_dim(),
        draws: Vec::with_capacity(cfg.n_chains),
        indicators: Vec::with_capacity(cfg.n_chains),
        log_density: Vec::with_capacity(cfg.n_chains),
        stats: Vec::with_capacity(cfg.n_chains),
    };
    for (draws, indicators, logp, stats) in results {
        store.draws.push(draws);
        store.indicators.push(indicators);
        store.log_density.push(logp);
        store.stats.push(stats);
    }
    for (chain, stats) in store.stats.iter().enumerate() {
        if !stats.divergences.is_empty() && stats.divergences.iter().all(|&d| d) {
            return Err(McmcError::AllDivergent { chain });
        }
    }
    Ok(store)
}

/// Tree-depth cap for the NUTS update inside the compound sampler: the
/// continuous block only needs local moves between indicator sweeps, so
/// trajectories are kept short.
const COMPOUND_MAX_DEPTH: usize = 6;

fn run_single_chain<T>(
    target: &T,
    cfg: &ChainConfig,
    chain: usize,
    discrete: bool,
) -> (DMatrix<f64>, DMatrix<u8>, Vec<f64>, ChainStats)
where
    T: TargetDensity,
{
    let (mut rng_cont, mut rng_disc) = chain_rngs(cfg.seed, chain);
    let mut theta0 = target.initial_position(&mut rng_cont);
    let mut indicators0 = if discrete {
        target.initial_indicators(&mut rng_disc)
    } else {
        vec![]
    };
    if discrete {
        // One repair sweep so indicator configurations with zero prior
        // mass cannot poison the initial density.
        for k in 0..indicators0.len() {
            let log_odds = target.indicator_log_odds(&theta0, &indicators0, k);
            let p_on = 1.0 / (1.0 + (-log_odds).exp());
            indicators0[k] = u8::from(rng_disc.random::<f64>() < p_on);
        }
    }
    // A random start can land outside the likelihood's support (for the
    // dynamics targets: trajectories leaving the positive orthant under a
    // lognormal observation model). Shrink toward the origin, redrawing
    // occasionally, until the density is finite.
    let mut attempts = 0;
    while !target.log_density(&theta0, &indicators0).is_finite() && attempts < 100 {
        if attempts % 10 == 9 {
            theta0 = target.initial_position(&mut rng_cont);
        } else {
            for v in theta0.iter_mut() {
                *v *= 0.5;
            }
        }
        attempts += 1;
    }
    let mut sampler = nuts::NutsChain::new(
        target,
        theta0,
        indicators0,
        cfg.n_warmup,
        cfg.target_accept,
        cfg.max_tree_depth,
        &mut rng_cont,
    );

    let d = target.continuous_dim();
    let k = if discrete { target.indicator_dim() } else { 0 };
    let mut draws = DMatrix::zeros(cfg.n_draws, d);
    let mut indicators = DMatrix::zeros(cfg.n_draws, k);
    let mut logp = Vec::with_capacity(cfg.n_draws);
    let mut depths = Vec::with_capacity(cfg.n_draws);
    let mut divergences = Vec::with_capacity(cfg.n_draws);
    let mut order: Vec<usize> = (0..k).collect();

    // The discrete block stays frozen through the first half of warmup so
    // the continuous block reaches a sound fit of the full model before
    // any pruning happens; flipping indicators around a half-converged fit
    // strands chains in poor sparse basins.
    let discrete_start = cfg.n_warmup / 2;
    for iter in 0..(cfg.n_warmup + cfg.n_draws) {
        if discrete && iter == discrete_start {
            // Once the discrete block starts moving, the continuous update
            // switches to short trajectories between sweeps.
            sampler.set_max_depth(cfg.max_tree_depth.min(COMPOUND_MAX_DEPTH));
        }
        if discrete && iter >= discrete_start {
            order.shuffle(&mut rng_disc);
            let mut changed = false;
            for &idx in &order {
                let log_odds = target.indicator_log_odds(&sampler.theta, &sampler.indicators, idx);
                let p_on = 1.0 / (1.0 + (-log_odds).exp());
                let new = u8::from(rng_disc.random::<f64>() < p_on);
                if new != sampler.indicators[idx] {
                    sampler.indicators[idx] = new;
                    changed = true;
                }
            }
            // Pair moves: propose double flips so overlapping terms can
            // trade places or switch on together.
            if k >= 2 {
                for _ in 0..k.div_ceil(2) {
                    let a = rng_disc.random_range(0..k);
                    let mut b = rng_disc.random_range(0..k - 1);
                    if b >= a {
                        b += 1;
                    }
                    let ratio = target.indicator_pair_log_ratio(
                        &sampler.theta,
                        &sampler.indicators,
                        a,
                        b,
                    );
                    if rng_disc.random::<f64>().ln() < ratio {
                        sampler.indicators[a] ^= 1;
                        sampler.indicators[b] ^= 1;
                        changed = true;
                    }
                }
            }
            if changed {
                sampler.refresh();
            }
        }
        sampler.advance(&mut rng_cont);
        if iter >= cfg.n_warmup {
            let row = iter - cfg.n_warmup;
            for j in 0..d {
                draws[(row, j)] = sampler.theta[j];
            }
            for j in 0..k {
                indicators[(row, j)] = sampler.indicators[j];
            }
            logp.push(sampler.logp);
            depths.push(sampler.last_depth);
            divergences.push(sampler.last_divergent);
        }
    }

    let stats = ChainStats {
        step_size: sampler.step_size(),
        tree_depths: depths,
        divergences,
    };
    (draws, indicators, logp, stats)
}
