//! Benchmark dataset generation, observation noise, normalization, and CSV
//! ingestion.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::library::{build_polynomial_library, CoefficientMatrix};
use crate::odeint::{integrate, IntegratorConfig, OdeError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset times must be strictly increasing (row {row})")]
    NonMonotoneTimes { row: usize },
    #[error("column {name:?} has zero variance, cannot normalize")]
    ZeroVariance { name: String },
    #[error("multiplicative noise requires positive states (found {value} at row {row})")]
    NonPositiveState { row: usize, value: f64 },
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("csv header must start with a time column named \"t\", found {found:?}")]
    BadHeader { found: String },
    #[error("row {line} is missing column {column:?}")]
    MissingColumn { line: usize, column: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Multivariate time series with per-column scale bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    /// `n x d` observations.
    pub observations: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Per-column divisors applied by [`normalize`]; 1.0 when unnormalized.
    pub scales: Vec<f64>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    fn validate(&self) -> Result<(), DataError> {
        for (row, w) in self.times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(DataError::NonMonotoneTimes { row: row + 1 });
            }
        }
        Ok(())
    }
}

/// Observation noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `y = x * exp(eta)`, `eta ~ N(0, sigma^2)`; requires positive states.
    LognormalMultiplicative { sigma: f64, seed: u64 },
    /// `y = x + eta`, `eta ~ N(0, sigma^2)`.
    AdditiveNormal { sigma: f64, seed: u64 },
}

fn simulate(
    xi_entries: &[(usize, usize, f64)],
    max_degree: u32,
    x0: &[f64],
    times: &[f64],
    labels: &[&str],
) -> Result<Dataset, DataError> {
    // Ground truth uses the exact dynamics: no damping term.
    let mut lib = build_polynomial_library(x0.len(), max_degree);
    lib.stab_eps = 0.0;
    let mut xi = CoefficientMatrix::zeros(&lib);
    for &(i, j, v) in xi_entries {
        xi.values[(i, j)] = v;
    }
    let cfg = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..Default::default()
    };
    let traj = integrate(&lib, &xi, x0, times, &cfg)?;
    Ok(Dataset {
        times: times.to_vec(),
        observations: traj.states,
        labels: labels.iter().map(|s| s.to_string()).collect(),
        scales: vec![1.0; x0.len()],
    })
}

/// Noise-free predator-prey trajectory:
/// `du/dt = alpha u - beta u v`, `dv/dt = -gamma v + delta u v`.
pub fn gen_lotka_volterra(
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    x0: [f64; 2],
    times: &[f64],
) -> Result<Dataset, DataError> {
    // Canonical (2, 2) library order: [1, u, v, u^2, u*v, v^2].
    simulate(
        &[
            (1, 0, alpha),
            (4, 0, -beta),
            (2, 1, -gamma),
            (4, 1, delta),
        ],
        2,
        &x0,
        times,
        &["u", "v"],
    )
}

/// Noise-free damped cubic oscillator:
/// `du/dt = alpha u^3 + beta v^3`, `dv/dt = gamma u^3 + delta v^3`.
pub fn gen_oscillator(
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    x0: [f64; 2],
    times: &[f64],
) -> Result<Dataset, DataError> {
    // Canonical (2, 3) library order:
    // [1, u, v, u^2, u*v, v^2, u^3, u^2*v, u*v^2, v^3].
    simulate(
        &[(6, 0, alpha), (9, 0, beta), (6, 1, gamma), (9, 1, delta)],
        3,
        &x0,
        times,
        &["u", "v"],
    )
}

/// Contaminate a clean dataset with observation noise.
pub fn apply_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset, DataError> {
    let mut out = dataset.clone();
    match *spec {
        NoiseSpec::LognormalMultiplicative { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
            for row in 0..out.observations.nrows() {
                for col in 0..out.observations.ncols() {
                    let x = out.observations[(row, col)];
                    if x <= 0.0 {
                        return Err(DataError::NonPositiveState { row, value: x });
                    }
                    out.observations[(row, col)] = x * normal.sample(&mut rng).exp();
                }
            }
        }
        NoiseSpec::AdditiveNormal { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
            for v in out.observations.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Divide each column by its sample standard deviation, recording the
/// divisors so observations can be mapped back to original units.
pub fn normalize(dataset: &Dataset) -> Result<Dataset, DataError> {
    let mut out = dataset.clone();
    let n = dataset.n_samples() as f64;
    for col in 0..out.observations.ncols() {
        let column = out.observations.column(col);
        let mean = column.sum() / n;
        let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(DataError::ZeroVariance {
                name: out.labels[col].clone(),
            });
        }
        let sd = var.sqrt();
        for v in out.observations.column_mut(col).iter_mut() {
            *v /= sd;
        }
        out.scales[col] *= sd;
    }
    Ok(out)
}

/// Parse a dataset from a CSV file with header `t,<name1>,...,<named>`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(|e| DataError::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("t") {
        return Err(DataError::BadHeader {
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let labels: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let d = labels.len();
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| DataError::Csv {
            line,
            message: e.to_string(),
        })?;
        let parse = |field: Option<&str>, column: &str| -> Result<f64, DataError> {
            let raw = field.ok_or_else(|| DataError::MissingColumn {
                line,
                column: column.to_string(),
            })?;
            raw.trim().parse::<f64>().map_err(|e| DataError::Csv {
                line,
                message: format!("column {column:?}: {e}"),
            })
        };
        times.push(parse(record.get(0), "t")?);
        let mut row = Vec::with_capacity(d);
        for (j, label) in labels.iter().enumerate() {
            row.push(parse(record.get(j + 1), label)?);
        }
        rows.push(row);
    }
    let observations = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let dataset = Dataset {
        times,
        observations,
        labels,
        scales: vec![1.0; d],
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset in the same CSV schema accepted by [`load_csv`].
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| DataError::Csv {
        line: 0,
        message: e.to_string(),
    })?;
    let mut header = vec!["t".to_string()];
    header.extend(dataset.labels.iter().cloned());
    writer.write_record(&header).map_err(|e| DataError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    for (i, &t) in dataset.times.iter().enumerate() {
        let mut record = vec![format!("{t}")];
        for j in 0..dataset.dim() {
            record.push(format!("{}", dataset.observations[(i, j)]));
        }
        writer.write_record(&record).map_err(|e| DataError::Csv {
            line: i + 2,
            message: e.to_string(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// `n` uniformly spaced times over `[t0, t1]`, both endpoints included.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
        .collect()
}
