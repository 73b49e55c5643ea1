//! Convergence diagnostics: rank-normalized split potential-scale-reduction
//! and bulk effective sample size, following Vehtari et al. (2021).

use super::SampleStore;

/// Per-parameter convergence summary. Degenerate (zero-variance)
/// parameters report NaN rather than failing.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub split_rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub divergence_count: usize,
}

/// Diagnostics over every continuous coordinate of the store.
pub fn diagnostics(store: &SampleStore) -> Diagnostics {
    Diagnostics {
        split_rhat: split_rhat(store),
        ess_bulk: ess_bulk(store),
        divergence_count: store.divergence_count(),
    }
}

/// Split each chain in half, rank-normalize the pooled draws, and compute
/// the classic potential scale reduction over the 2C half-chains.
pub fn split_rhat(store: &SampleStore) -> Vec<f64> {
    (0..store.continuous_dim)
        .map(|p| {
            let halves = rank_normalized_half_chains(store, p);
            halves.map_or(f64::NAN, |h| psrf(&h))
        })
        .collect()
}

/// Bulk effective sample size on the rank-normalized split chains.
pub fn ess_bulk(store: &SampleStore) -> Vec<f64> {
    let total = store.n_total_draws() as f64;
    (0..store.continuous_dim)
        .map(|p| {
            let halves = rank_normalized_half_chains(store, p);
            halves.map_or(f64::NAN, |h| ess_from_chains(&h).min(total))
        })
        .collect()
}

/// Split every chain into halves and rank-normalize the pooled draws.
/// Returns None when the parameter is degenerate (all draws identical).
fn rank_normalized_half_chains(store: &SampleStore, param: usize) -> Option<Vec<Vec<f64>>> {
    let n = store.n_draws_per_chain();
    if n < 4 || store.n_chains() < 2 {
        return None;
    }
    let half = n / 2;
    let mut chains: Vec<Vec<f64>> = Vec::with_capacity(2 * store.n_chains());
    for m in &store.draws {
        let col = m.column(param);
        chains.push((0..half).map(|i| col[i]).collect());
        chains.push((n - half..n).map(|i| col[i]).collect());
    }
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let first = pooled[0];
    if pooled.iter().all(|&x| x == first) {
        return None;
    }
    let ranks = average_ranks(&pooled);
    let s = pooled.len() as f64;
    let mut it = ranks.into_iter();
    let normalized: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| {
                    let r = it.next().unwrap();
                    inverse_normal_cdf((r - 0.375) / (s + 0.25))
                })
                .collect()
        })
        .collect();
    Some(normalized)
}

/// Potential scale reduction factor over equal-length chains.
fn psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&chain_means);
    let b = n / (m - 1.0)
        * chain_means
            .iter()
            .map(|x| (x - grand) * (x - grand))
            .sum::<f64>();
    let w = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, &mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::INFINITY;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Effective sample size via per-chain autocovariances combined with
/// Geyer's initial monotone positive sequence.
fn ess_from_chains(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let chain_vars: Vec<f64> = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, &mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = mean(&chain_vars);
    let grand = mean(&chain_means);
    let b_over_n = chain_means
        .iter()
        .map(|x| (x - grand) * (x - grand))
        .sum::<f64>()
        / (m - 1.0);
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b_over_n;
    if var_plus <= 0.0 {
        return f64::NAN;
    }

    // Combined autocorrelation at each lag.
    let rho = |t: usize| -> f64 {
        let mean_autocov = chains
            .iter()
            .zip(&chain_means)
            .map(|(c, &mu)| {
                (0..n - t)
                    .map(|i| (c[i] - mu) * (c[i + t] - mu))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m;
        1.0 - (w - mean_autocov) / var_plus
    };

    let mut tau = 1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 1;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        // Enforce monotone non-increasing pair sums.
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    (m * n as f64) / tau
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average ranks (ties share the mean rank), 1-based.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Acklam's rational approximation to the standard normal quantile
/// function; relative error below 1.2e-9 over (0, 1).
pub(crate) fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
