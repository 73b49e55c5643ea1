//! Posterior predictive distributions: integrate posterior draws over a
//! time grid, optionally add observation noise, and summarize pointwise.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::library::CoefficientMatrix;
use crate::odeint::integrate;

use super::{ObservationKind, PosteriorSamples, UqSindyModel};

#[derive(Debug, Error)]
pub enum PpdError {
    #[error("requested {requested} draws but only {available} are available")]
    NotEnoughDraws { requested: usize, available: usize },
    #[error("{failed} of {attempted} posterior draws failed to integrate (more than 10%)")]
    TooManyFailures { failed: usize, attempted: usize },
    #[error("prediction grid must start at or after the training initial time {t0}")]
    GridBeforeTraining { t0: f64 },
    #[error("prediction grid must be strictly increasing and non-empty")]
    BadGrid,
}

#[derive(Debug, Clone, Copy)]
pub struct PpdOptions {
    /// Add observation noise to each simulated trajectory.
    pub include_noise: bool,
    /// Credibility band quantiles.
    pub lower_q: f64,
    pub upper_q: f64,
}

impl Default for PpdOptions {
    fn default() -> Self {
        PpdOptions {
            include_noise: true,
            lower_q: 0.05,
            upper_q: 0.95,
        }
    }
}

/// Pointwise summary of the posterior predictive distribution.
#[derive(Debug, Clone)]
pub struct PpdSummary {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// `n x d` pointwise means and band edges.
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub n_draws_used: usize,
    pub lower_q: f64,
    pub upper_q: f64,
}

impl PpdSummary {
    /// Fraction of observation points lying inside the band.
    pub fn coverage(&self, times: &[f64], observations: &DMatrix<f64>) -> f64 {
        let mut inside = 0usize;
        let mut total = 0usize;
        for (i, t) in times.iter().enumerate() {
            let row = self
                .times
                .iter()
                .position(|x| (x - t).abs() < 1e-9)
                .unwrap_or_else(|| panic!("time {t} not on the summary grid"));
            for j in 0..observations.ncols() {
                total += 1;
                let y = observations[(i, j)];
                if y >= self.lower[(row, j)] && y <= self.upper[(row, j)] {
                    inside += 1;
                }
            }
        }
        inside as f64 / total as f64
    }
}

/// Simulate `n_draws` posterior draws over `times` and summarize. Draws
/// whose integration fails are skipped and counted; more than 10% failures
/// is an error.
pub fn ppd(
    model: &UqSindyModel,
    samples: &PosteriorSamples,
    times: &[f64],
    n_draws: usize,
    rng: &mut ChaCha8Rng,
    options: &PpdOptions,
) -> Result<PpdSummary, PpdError> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PpdError::BadGrid);
    }
    let t0 = samples.t0;
    if times[0] < t0 - 1e-12 {
        return Err(PpdError::GridBeforeTraining { t0 });
    }
    let available = samples.n_total_draws();
    if n_draws > available {
        return Err(PpdError::NotEnoughDraws {
            requested: n_draws,
            available,
        });
    }

    // Integration grid: prepend the training start when the requested grid
    // begins later.
    let prepend = (times[0] - t0).abs() > 1e-12;
    let mut grid = Vec::with_capacity(times.len() + 1);
    if prepend {
        grid.push(t0);
    }
    grid.extend_from_slice(times);

    let d = model.library.dim;
    let n = times.len();
    let chosen: Vec<usize> = if n_draws == available {
        (0..available).collect()
    } else {
        sample_indices(rng, available, n_draws).into_vec()
    };

    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut trajs: Vec<DMatrix<f64>> = Vec::with_capacity(n_draws);
    let mut failed = 0usize;
    for &draw in &chosen {
        let (xi_flat, x0, sigmas) = samples.draw_parameters(draw);
        let xi = CoefficientMatrix {
            values: DMatrix::from_fn(model.library.n_terms(), d, |i, j| {
                xi_flat[j * model.library.n_terms() + i]
            }),
        };
        match integrate(&model.library, &xi, &x0, &grid, &model.integrator) {
            Ok(traj) => {
                let offset = usize::from(prepend);
                let mut states = DMatrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        let mut v = traj.states[(i + offset, j)];
                        if options.include_noise {
                            let z: f64 = normal.sample(rng);
                            v = match model.obs.kind {
                                ObservationKind::Normal => v + sigmas[j] * z,
                                ObservationKind::Lognormal => v * (sigmas[j] * z).exp(),
                            };
                        }
                        states[(i, j)] = v;
                    }
                }
                trajs.push(states);
            }
            Err(_) => {
                failed += 1;
                if options.include_noise {
                    // Keep the noise stream aligned across successes and
                    // failures so results only depend on the chosen seed.
                    for _ in 0..(n * d) {
                        let _: f64 = normal.sample(rng);
                    }
                }
            }
        }
    }
    if failed * 10 > chosen.len() {
        return Err(PpdError::TooManyFailures {
            failed,
            attempted: chosen.len(),
        });
    }

    let used = trajs.len();
    let mut mean = DMatrix::zeros(n, d);
    let mut lower = DMatrix::zeros(n, d);
    let mut upper = DMatrix::zeros(n, d);
    let mut column = Vec::with_capacity(used);
    for i in 0..n {
        for j in 0..d {
            column.clear();
            column.extend(trajs.iter().map(|t| t[(i, j)]));
            mean[(i, j)] = column.iter().sum::<f64>() / used as f64;
            lower[(i, j)] = quantile(&mut column, options.lower_q);
            upper[(i, j)] = quantile(&mut column, options.upper_q);
        }
    }
    Ok(PpdSummary {
        times: times.to_vec(),
        labels: samples.state_labels.clone(),
        mean,
        lower,
        upper,
        n_draws_used: used,
        lower_q: options.lower_q,
        upper_q: options.upper_q,
    })
}

/// Linear-interpolated empirical quantile; sorts in place.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}
