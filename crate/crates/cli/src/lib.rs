//! Command implementations for the `uqsindy` binary: simulate benchmark
//! data, fit models, emit posterior predictive bands and reports, run the
//! point-estimate baseline, and reproduce the prior-comparison experiment.

pub mod config;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use uqsindy::baseline::{sindy_fit, StlsqConfig};
use uqsindy::data::{
    apply_noise, gen_lotka_volterra, gen_oscillator, load_csv, normalize, uniform_grid, write_csv,
    Dataset,
};
use uqsindy::library::{build_polynomial_library, FunctionLibrary, Term};
use uqsindy::mcmc::{ChainStats, SampleStore};
use uqsindy::model::linreg::{fit_linreg, gen_regression_data, LinRegFit, LinRegPrior};
use uqsindy::model::{
    fit, inclusion_probabilities, posterior_mode, ppd, shrinkage_from_fits, CoeffPrior,
    ObservationModel, PosteriorSamples, PpdOptions, UqSindyModel,
};
use uqsindy::priors::{RegHorseshoeSpec, SpikeSlabSpec};

use config::{
    load_config, DatasetSource, PriorConfig, PriorDemoConfig, RunConfig, SystemKind,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {field}: {message}")]
    Config {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("io error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] uqsindy::data::DataError),
    #[error(transparent)]
    Model(#[from] uqsindy::model::ModelError),
    #[error(transparent)]
    Ppd(#[from] uqsindy::model::PpdError),
    #[error(transparent)]
    Baseline(#[from] uqsindy::baseline::BaselineError),
    #[error(transparent)]
    Mcmc(#[from] uqsindy::mcmc::McmcError),
    #[error("inference diagnostics failed: {message}")]
    Diagnostics { message: String },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// 0 success, 2 config error, 3 inference diagnostics failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 2,
            CliError::Diagnostics { .. } => 3,
            CliError::Io { .. } => 4,
            _ => 1,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
}

fn load_run_config(
    config_path: &Path,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = load_config(config_path)?;
    cfg.resolve_paths(config_path.parent());
    apply_overrides(&mut cfg, out, overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, out: Option<&Path>, overrides: Overrides) {
    if let Some(seed) = overrides.seed {
        cfg.sampler.seed = seed;
        if let DatasetSource::Generator(g) = &mut cfg.dataset {
            if let Some(noise) = &mut g.noise {
                match noise {
                    uqsindy::data::NoiseSpec::LognormalMultiplicative { seed: s, .. } => *s = seed,
                    uqsindy::data::NoiseSpec::AdditiveNormal { seed: s, .. } => *s = seed,
                }
            }
        }
    }
    if let Some(chains) = overrides.chains {
        cfg.sampler.n_chains = chains;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir.to_path_buf();
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json serialization cannot fail");
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Clean (optional) and observed datasets for a config.
pub fn build_datasets(cfg: &RunConfig) -> Result<(Option<Dataset>, Dataset), CliError> {
    match &cfg.dataset {
        DatasetSource::Generator(g) => {
            let times = uniform_grid(g.t_start, g.t_end, g.n_samples);
            let [alpha, beta, gamma, delta] = g.params;
            let clean = match g.system {
                SystemKind::LotkaVolterra => {
                    gen_lotka_volterra(alpha, beta, gamma, delta, g.x0, &times)?
                }
                SystemKind::Oscillator => {
                    gen_oscillator(alpha, beta, gamma, delta, g.x0, &times)?
                }
            };
            let observed = match &g.noise {
                Some(spec) => apply_noise(&clean, spec)?,
                None => clean.clone(),
            };
            Ok((Some(clean), observed))
        }
        DatasetSource::Csv(path) => Ok((None, load_csv(path)?)),
    }
}

/// The analysis dataset: observed data, normalized when requested.
pub fn analysis_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let (_, observed) = build_datasets(cfg)?;
    Ok(if cfg.normalize {
        normalize(&observed)?
    } else {
        observed
    })
}

/// Assemble the library described by the config for a given state
/// dimension.
pub fn build_library(cfg: &RunConfig, dim: usize) -> Result<FunctionLibrary, CliError> {
    let lib = match &cfg.library.terms {
        Some(term_list) => {
            for (i, t) in term_list.iter().enumerate() {
                if t.len() != dim {
                    return Err(CliError::Invalid(format!(
                        "library.terms[{i}] has {} exponents, the data has {dim} states",
                        t.len()
                    )));
                }
            }
            let terms = term_list
                .iter()
                .map(|e| Term { exponents: e.clone() })
                .collect();
            FunctionLibrary::from_terms(dim, terms, cfg.library.stab_eps)
        }
        None => {
            let mut lib = build_polynomial_library(dim, cfg.library.max_degree);
            lib.stab_eps = cfg.library.stab_eps;
            lib
        }
    };
    Ok(lib)
}

/// Assemble the full model for a config and dataset.
pub fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<UqSindyModel, CliError> {
    let d = data.dim();
    let lib = build_library(cfg, d)?;
    let l = lib.n_terms();
    for &(term, state, value) in cfg.alpha_overrides() {
        if term >= l || state >= d {
            return Err(CliError::Invalid(format!(
                "alpha override ({term}, {state}) outside the {l}x{d} coefficient grid"
            )));
        }
        if value <= 0.0 {
            return Err(CliError::Invalid(
                "alpha override values must be strictly positive".to_string(),
            ));
        }
    }
    let coeff_prior = match &cfg.prior {
        PriorConfig::SpikeSlab {
            pi,
            slab_sd,
            spike_sd,
            alpha_overrides,
        } => {
            let mut spec = SpikeSlabSpec::new(l, d);
            spec.pi = *pi;
            spec.slab_sd = *slab_sd;
            spec.spike_sd = *spike_sd;
            for &(term, state, value) in alpha_overrides {
                spec.scale[(term, state)] = value;
            }
            CoeffPrior::SpikeSlab(spec)
        }
        PriorConfig::RegHorseshoe {
            tau0,
            nu,
            s,
            alpha_overrides,
            ..
        } => {
            let mut spec = RegHorseshoeSpec::new(l, d);
            spec.tau0 = *tau0;
            spec.nu = *nu;
            spec.s = *s;
            for &(term, state, value) in alpha_overrides {
                spec.scale[(term, state)] = value;
            }
            CoeffPrior::RegHorseshoe(spec)
        }
        PriorConfig::Laplace { b } => CoeffPrior::Laplace { b: *b },
        PriorConfig::NormalReference => CoeffPrior::NormalReference,
    };
    Ok(UqSindyModel {
        library: lib,
        coeff_prior,
        x0_prior: vec![cfg.x0_prior; d],
        obs: ObservationModel {
            kind: cfg.observation.kind,
            noise_prior: vec![cfg.observation.noise_prior; d],
        },
        integrator: cfg.integrator.clone(),
    })
}

/// `simulate`: write clean and noisy CSVs plus a provenance document.
pub fn run_simulate(
    config_path: &Path,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<(), CliError> {
    let cfg = load_run_config(config_path, out, overrides)?;
    let DatasetSource::Generator(_) = &cfg.dataset else {
        return Err(CliError::Invalid(
            "simulate requires a generator dataset block".to_string(),
        ));
    };
    let (clean, noisy) = build_datasets(&cfg)?;
    let clean = clean.expect("generator always yields a clean trajectory");
    ensure_dir(&cfg.output_dir)?;
    write_csv(&clean, cfg.output_dir.join("clean.csv"))?;
    write_csv(&noisy, cfg.output_dir.join("noisy.csv"))?;
    write_json(
        &cfg.output_dir.join("provenance.json"),
        &json!({ "command": "simulate", "config": cfg }),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ParamSummary {
    name: String,
    mean: f64,
    sd: f64,
    mode: f64,
    q05: f64,
    q95: f64,
}

fn summarize(draws: &[f64], name: &str) -> ParamSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] * (1.0 - (pos - lo as f64)) + sorted[hi] * (pos - lo as f64)
    };
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        mode: posterior_mode(draws),
        q05: q(0.05),
        q95: q(0.95),
    }
}

/// Write posterior draws in long form: chain, draw, parameter, value.
fn write_draws_csv(samples: &PosteriorSamples, path: &Path) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let io_err = |e: csv::Error| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    writer
        .write_record(["chain", "draw", "parameter", "value"])
        .map_err(io_err)?;
    for (chain, m) in samples.chains.iter().enumerate() {
        for row in 0..m.nrows() {
            for (col, name) in samples.names.iter().enumerate() {
                writer
                    .write_record([
                        chain.to_string(),
                        row.to_string(),
                        name.clone(),
                        format!("{:?}", m[(row, col)]),
                    ])
                    .map_err(|e| CliError::Io {
                        path: path.to_path_buf(),
                        message: e.to_string(),
                    })?;
            }
        }
    }
    writer.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Outcome of `fit`: artifacts are always written; the gate reports
/// whether convergence diagnostics passed.
#[derive(Debug)]
pub struct FitOutcome {
    pub gate_ok: bool,
    pub max_split_rhat: f64,
    pub divergence_fraction: f64,
    pub results_path: PathBuf,
}

/// `fit`: run inference, write the coefficient report and draws.
pub fn run_fit(
    config_path: &Path,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<FitOutcome, CliError> {
    let cfg = load_run_config(config_path, out, overrides)?;
    let data = analysis_dataset(&cfg)?;
    let model = build_model(&cfg, &data)?;
    let samples = fit(&model, &data, &cfg.sampler)?;

    let inclusion = match &model.coeff_prior {
        CoeffPrior::SpikeSlab(_) => Some(inclusion_probabilities(&samples)?),
        _ => None,
    };
    let kappa = match &cfg.prior {
        PriorConfig::RegHorseshoe { shrinkage_reference: true, .. } => {
            let mut reference_model = model.clone();
            reference_model.coeff_prior = CoeffPrior::NormalReference;
            let reference = fit(&reference_model, &data, &cfg.sampler)?;
            Some(shrinkage_from_fits(&samples, &reference))
        }
        _ => None,
    };

    let l = samples.n_terms;
    let d = samples.dim;
    let mut coefficients = Vec::with_capacity(l * d);
    for state in 0..d {
        for term in 0..l {
            let name = samples.coefficient_name(term, state);
            let draws = samples.pooled(&name).expect("coefficient draws exist");
            let summary = summarize(&draws, &name);
            coefficients.push(json!({
                "term": samples.term_names[term],
                "state": samples.state_labels[state],
                "name": summary.name,
                "mean": summary.mean,
                "sd": summary.sd,
                "mode": summary.mode,
                "q05": summary.q05,
                "q95": summary.q95,
                "inclusion": inclusion.as_ref().map(|m| m[(term, state)]),
                "kappa": kappa.as_ref().and_then(|m| m[(term, state)].kappa),
                "kappa_undefined": kappa.as_ref().map(|m| m[(term, state)].kappa.is_none()),
            }));
        }
    }
    let other_params: Vec<ParamSummary> = samples
        .names
        .iter()
        .filter(|n| !n.starts_with("xi["))
        .map(|n| summarize(&samples.pooled(n).unwrap(), n))
        .collect();

    let diag = &samples.diagnostics;
    let max_rhat = diag
        .split_rhat
        .iter()
        .cloned()
        .filter(|v| v.is_finite())
        .fold(f64::NAN, f64::max);
    let divergence_fraction = samples.store.divergence_fraction();
    let per_param: Vec<_> = samples
        .raw_names
        .iter()
        .zip(diag.split_rhat.iter().zip(&diag.ess_bulk))
        .map(|(name, (rhat, ess))| json!({ "name": name, "split_rhat": rhat, "ess_bulk": ess }))
        .collect();

    ensure_dir(&cfg.output_dir)?;
    let results_path = cfg.output_dir.join("results.json");
    write_json(
        &results_path,
        &json!({
            "config": cfg,
            "prior_kind": samples.prior_kind,
            "state_labels": samples.state_labels,
            "scales": data.scales,
            "t0": samples.t0,
            "coefficients": coefficients,
            "parameters": other_params,
            "diagnostics": {
                "max_split_rhat": max_rhat,
                "divergence_count": diag.divergence_count,
                "divergence_fraction": divergence_fraction,
                "per_parameter": per_param,
            },
        }),
    )?;
    write_draws_csv(&samples, &cfg.output_dir.join("draws.csv"))?;

    let gate_ok = !(max_rhat > 1.05) && divergence_fraction <= 0.01;
    Ok(FitOutcome {
        gate_ok,
        max_split_rhat: max_rhat,
        divergence_fraction,
        results_path,
    })
}

/// Reload a draws file written by [`run_fit`] into a usable posterior.
pub fn samples_from_draws_csv(
    path: &Path,
    model: &UqSindyModel,
    data: &Dataset,
) -> Result<PosteriorSamples, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut n_chains = 0usize;
    let mut n_draws = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let parse_err = |what: &str| CliError::Io {
            path: path.to_path_buf(),
            message: format!("malformed draws row: bad {what}"),
        };
        let chain: usize = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("chain"))?;
        let draw: usize = record.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("draw"))?;
        let name = record.get(2).ok_or_else(|| parse_err("parameter"))?;
        let value: f64 = record.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("value"))?;
        let col = match names.iter().position(|n| n == name) {
            Some(c) => c,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        n_chains = n_chains.max(chain + 1);
        n_draws = n_draws.max(draw + 1);
        rows.push((chain, draw, col, value));
    }
    if rows.is_empty() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            message: "draws file is empty".to_string(),
        });
    }
    let mut chains = vec![DMatrix::zeros(n_draws, names.len()); n_chains];
    for (chain, draw, col, value) in rows {
        chains[chain][(draw, col)] = value;
    }

    let store = SampleStore {
        continuous_dim: names.len(),
        indicator_dim: 0,
        draws: chains.clone(),
        indicators: vec![DMatrix::zeros(n_draws, 0); n_chains],
        log_density: vec![vec![0.0; n_draws]; n_chains],
        stats: vec![
            ChainStats {
                step_size: f64::NAN,
                tree_depths: vec![0; n_draws],
                divergences: vec![false; n_draws],
            };
            n_chains
        ],
    };
    let diagnostics = uqsindy::mcmc::diagnostics(&store);
    Ok(PosteriorSamples {
        store,
        raw_names: names.clone(),
        names,
        chains,
        diagnostics,
        prior_kind: "reloaded",
        state_labels: data.labels.clone(),
        term_names: model.library.term_names(&data.labels),
        n_terms: model.library.n_terms(),
        dim: model.library.dim,
        t0: data.times[0],
    })
}

/// `predict`: posterior predictive bands over a requested grid.
pub fn run_predict(
    config_path: &Path,
    draws_path: &Path,
    t_start: f64,
    t_end: f64,
    n_points: usize,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<PathBuf, CliError> {
    let cfg = load_run_config(config_path, out, overrides)?;
    if n_points == 0 || (n_points > 1 && t_end <= t_start) {
        return Err(CliError::Invalid(
            "prediction grid needs n_points >= 1 and t_end > t_start".to_string(),
        ));
    }
    let data = analysis_dataset(&cfg)?;
    let model = build_model(&cfg, &data)?;
    let samples = samples_from_draws_csv(draws_path, &model, &data)?;

    let times = if n_points == 1 {
        vec![t_start]
    } else {
        uniform_grid(t_start, t_end, n_points)
    };
    let training_end = *data.times.last().unwrap();
    if t_end > training_end {
        eprintln!("note: grid extends beyond the training window (forecast)");
    }
    let options = PpdOptions {
        include_noise: cfg.ppd.include_noise,
        lower_q: cfg.ppd.lower_q,
        upper_q: cfg.ppd.upper_q,
    };
    let n_draws = cfg.ppd.n_draws.min(samples.n_total_draws());
    let mut rng = <ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(
        cfg.sampler.seed ^ 0x9e3779b97f4a7c15,
    );
    let summary = ppd(&model, &samples, &times, n_draws, &mut rng, &options)?;

    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("ppd.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let io_err = |e: csv::Error| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    };
    writer
        .write_record(["time", "state", "mean", "q05", "q95"])
        .map_err(io_err)?;
    for (i, t) in summary.times.iter().enumerate() {
        for (j, label) in summary.labels.iter().enumerate() {
            writer
                .write_record([
                    format!("{t}"),
                    label.clone(),
                    format!("{:?}", summary.mean[(i, j)]),
                    format!("{:?}", summary.lower[(i, j)]),
                    format!("{:?}", summary.upper[(i, j)]),
                ])
                .map_err(|e| CliError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
    }
    writer.flush().map_err(|e| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}

/// `baseline`: finite differences + STLSQ, coefficient matrix as CSV.
pub fn run_baseline(
    config_path: &Path,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<PathBuf, CliError> {
    let cfg = load_run_config(config_path, out, overrides)?;
    let data = analysis_dataset(&cfg)?;
    let lib = build_library(&cfg, data.dim())?;
    let stlsq_cfg = StlsqConfig {
        threshold: cfg.baseline.threshold,
        ridge: cfg.baseline.ridge,
        max_iters: cfg.baseline.max_iters,
    };
    let xi = sindy_fit(&data, &lib, &stlsq_cfg)?;

    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("baseline_xi.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut header = vec!["term".to_string()];
    header.extend(data.labels.iter().cloned());
    writer.write_record(&header).map_err(|e| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let term_names = lib.term_names(&data.labels);
    for (i, term) in term_names.iter().enumerate() {
        let mut record = vec![term.clone()];
        for j in 0..data.dim() {
            record.push(format!("{:?}", xi.values[(i, j)]));
        }
        writer.write_record(&record).map_err(|e| CliError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| CliError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}

/// Summaries emitted by `prior-demo` for one prior family.
fn demo_summary(fit: &LinRegFit, beta_true: &[f64]) -> serde_json::Value {
    let per_coef: Vec<_> = fit
        .beta_draws
        .iter()
        .enumerate()
        .map(|(j, draws)| {
            let s = summarize(draws, &format!("beta[{j}]"));
            let frac_zero = draws.iter().filter(|v| v.abs() < 1e-6).count() as f64
                / draws.len() as f64;
            json!({
                "name": s.name,
                "true": beta_true[j],
                "mean": s.mean,
                "mode": s.mode,
                "q05": s.q05,
                "q95": s.q95,
                "half_width90": 0.5 * (s.q95 - s.q05),
                "frac_exact_zero": frac_zero,
                "inclusion": fit.inclusion.as_ref().map(|inc| inc[j]),
            })
        })
        .collect();
    json!({
        "coefficients": per_coef,
        "sigma_mean": fit.sigma_draws.iter().sum::<f64>() / fit.sigma_draws.len() as f64,
    })
}

/// `prior-demo`: the sparse linear regression comparison across the
/// Laplace, spike-and-slab, and regularized-horseshoe priors.
pub fn run_prior_demo(
    config_path: &Path,
    out: Option<&Path>,
    overrides: Overrides,
) -> Result<PathBuf, CliError> {
    let mut cfg: PriorDemoConfig = load_config(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(chains) = overrides.chains {
        cfg.sampler.n_chains = chains;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir.to_path_buf();
    }
    let (x, y) = gen_regression_data(cfg.n_samples, &cfg.beta, cfg.noise_sd, cfg.seed);
    let laplace = fit_linreg(&x, &y, &LinRegPrior::Laplace { b: cfg.laplace_b }, &cfg.sampler)?;
    let spike_slab = fit_linreg(
        &x,
        &y,
        &LinRegPrior::SpikeSlab {
            pi: cfg.spike_slab_pi,
            slab_sd: cfg.spike_slab_sd,
        },
        &cfg.sampler,
    )?;
    let horseshoe = fit_linreg(
        &x,
        &y,
        &LinRegPrior::RegHorseshoe {
            tau0: cfg.horseshoe_tau0,
            nu: cfg.horseshoe_nu,
            s: cfg.horseshoe_s,
        },
        &cfg.sampler,
    )?;

    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("prior_demo.json");
    write_json(
        &path,
        &json!({
            "config": cfg,
            "laplace": demo_summary(&laplace, &cfg.beta),
            "spike_slab": demo_summary(&spike_slab, &cfg.beta),
            "reg_horseshoe": demo_summary(&horseshoe, &cfg.beta),
        }),
    )?;
    Ok(path)
}

/// `diagnostics`: convergence table for a draws file; nonzero gate when
/// any split R-hat exceeds 1.05.
pub fn run_diagnostics(draws_path: &Path) -> Result<bool, CliError> {
    let mut reader = csv::Reader::from_path(draws_path).map_err(|e| CliError::Io {
        path: draws_path.to_path_buf(),
        message: e.to_string(),
    })?;
    // Reuse the draws loader's layout by reading into a store directly.
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    let (mut n_chains, mut n_draws) = (0usize, 0usize);
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Io {
            path: draws_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let chain: usize = record.get(0).and_then(|s| s.parse().ok()).unwrap_or(0);
        let draw: usize = record.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
        let name = record.get(2).unwrap_or("?").to_string();
        let value: f64 = record.get(3).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
        let col = match names.iter().position(|n| n == &name) {
            Some(c) => c,
            None => {
                names.push(name);
                names.len() - 1
            }
        };
        n_chains = n_chains.max(chain + 1);
        n_draws = n_draws.max(draw + 1);
        rows.push((chain, draw, col, value));
    }
    let mut chains = vec![DMatrix::zeros(n_draws, names.len()); n_chains];
    for (chain, draw, col, value) in rows {
        chains[chain][(draw, col)] = value;
    }
    let store = SampleStore {
        continuous_dim: names.len(),
        indicator_dim: 0,
        draws: chains,
        indicators: vec![DMatrix::zeros(n_draws, 0); n_chains],
        log_density: vec![vec![0.0; n_draws]; n_chains],
        stats: vec![
            ChainStats {
                step_size: f64::NAN,
                tree_depths: vec![0; n_draws],
                divergences: vec![false; n_draws],
            };
            n_chains
        ],
    };
    let diag = uqsindy::mcmc::diagnostics(&store);
    println!("{:<24} {:>10} {:>10}", "parameter", "split_rhat", "ess_bulk");
    let mut ok = true;
    for (name, (rhat, ess)) in names
        .iter()
        .zip(diag.split_rhat.iter().zip(&diag.ess_bulk))
    {
        println!("{name:<24} {rhat:>10.4} {ess:>10.1}");
        if *rhat > 1.05 {
            ok = false;
        }
    }
    println!(
        "{n_chains} chains x {n_draws} draws; gate {}",
        if ok { "passed" } else { "FAILED (split_rhat > 1.05)" }
    );
    Ok(ok)
}
