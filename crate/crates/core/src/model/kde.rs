//! Posterior mode estimation via a Gaussian kernel density estimate with
//! Silverman bandwidth, maximized on a 512-point grid over the draw range.

const GRID: usize = 512;

pub fn posterior_mode(draws: &[f64]) -> f64 {
    assert!(!draws.is_empty(), "posterior mode needs draws");
    let n = draws.len() as f64;
    let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return lo;
    }
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let idx = (p * (sorted.len() - 1) as f64).round() as usize;
        sorted[idx]
    };
    let iqr = q(0.75) - q(0.25);
    // Silverman's rule; spike-heavy draws can have zero IQR, so fall back
    // to whichever spread statistic is positive.
    let spread = if iqr > 0.0 {
        sd.min(iqr / 1.34)
    } else if sd > 0.0 {
        sd
    } else {
        (hi - lo) / 100.0
    };
    let bw = (0.9 * spread * n.powf(-0.2)).max((hi - lo) * 1e-4);

    let mut best_x = lo;
    let mut best_density = f64::NEG_INFINITY;
    for g in 0..GRID {
        let x = lo + (hi - lo) * g as f64 / (GRID - 1) as f64;
        let mut density = 0.0;
        for &d in draws {
            let z = (x - d) / bw;
            density += (-0.5 * z * z).exp();
        }
        if density > best_density {
            best_density = density;
            best_x = x;
        }
    }
    best_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    #[test]
    fn constant_draws_return_the_constant() {
        assert_eq!(posterior_mode(&[2.5; 300]), 2.5);
    }

    #[test]
    fn gaussian_draws_mode_near_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = rand_distr::Normal::new(1.5, 0.1).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let mode = posterior_mode(&draws);
        assert!((mode - 1.5).abs() < 0.02, "mode = {mode}");
    }

    #[test]
    fn spike_dominated_draws_mode_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = rand_distr::Normal::new(0.8, 0.2).unwrap();
        let mut draws = vec![0.0; 950];
        draws.extend((0..50).map(|_| normal.sample(&mut rng)));
        let mode = posterior_mode(&draws);
        assert!(mode.abs() < 1e-6, "mode = {mode}");
    }
}
