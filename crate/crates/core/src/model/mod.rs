//! The full probabilistic model: likelihood plus priors over coefficients,
//! initial conditions, and noise scales, with inference, posterior
//! predictive summaries, inclusion probabilities, and shrinkage
//! pseudo-probabilities.

mod kde;
pub mod linreg;
mod ppd;
mod target;

pub use kde::posterior_mode;
pub use ppd::{ppd, PpdError, PpdOptions, PpdSummary};
pub use target::ModelTarget;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::library::{CoefficientMatrix, FunctionLibrary};
use crate::mcmc::{
    compound_run, diagnostics, nuts_run, ChainConfig, Diagnostics, McmcError, SampleStore,
};
use crate::odeint::IntegratorConfig;
use crate::priors::{rh_lambda_tilde, DistributionSpec, RegHorseshoeSpec, SpikeSlabSpec};

use target::ModelData;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("data has {got} state columns, the library expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{what} needs one entry per state dimension ({expected}), got {got}")]
    PriorShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("the lognormal observation model requires strictly positive observations (row {row}, column {col})")]
    NonPositiveObservation { row: usize, col: usize },
    #[error("operation requires a {required} fit, this one used {actual}")]
    WrongPriorKind {
        required: &'static str,
        actual: &'static str,
    },
    #[error(transparent)]
    Mcmc(#[from] McmcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Normal,
    Lognormal,
}

/// Observation model: likelihood family plus per-dimension priors on the
/// noise scales.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub kind: ObservationKind,
    pub noise_prior: Vec<DistributionSpec>,
}

/// Coefficient prior choices. The Laplace and plain-normal variants exist
/// for comparison experiments and shrinkage reference fits.
#[derive(Debug, Clone)]
pub enum CoeffPrior {
    SpikeSlab(SpikeSlabSpec),
    RegHorseshoe(RegHorseshoeSpec),
    Laplace { b: f64 },
    NormalReference,
}

impl CoeffPrior {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CoeffPrior::SpikeSlab(_) => "spike_slab",
            CoeffPrior::RegHorseshoe(_) => "reg_horseshoe",
            CoeffPrior::Laplace { .. } => "laplace",
            CoeffPrior::NormalReference => "normal_reference",
        }
    }
}

/// Complete model specification.
#[derive(Debug, Clone)]
pub struct UqSindyModel {
    pub library: FunctionLibrary,
    pub coeff_prior: CoeffPrior,
    pub x0_prior: Vec<DistributionSpec>,
    pub obs: ObservationModel,
    pub integrator: IntegratorConfig,
}

impl UqSindyModel {
    fn validate(&self, data: &Dataset) -> Result<(), ModelError> {
        let d = self.library.dim;
        if data.dim() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: data.dim(),
            });
        }
        if self.x0_prior.len() != d {
            return Err(ModelError::PriorShape {
                what: "x0 prior",
                expected: d,
                got: self.x0_prior.len(),
            });
        }
        if self.obs.noise_prior.len() != d {
            return Err(ModelError::PriorShape {
                what: "noise prior",
                expected: d,
                got: self.obs.noise_prior.len(),
            });
        }
        let shape = match &self.coeff_prior {
            CoeffPrior::SpikeSlab(s) => Some(s.scale.shape()),
            CoeffPrior::RegHorseshoe(s) => Some(s.scale.shape()),
            _ => None,
        };
        if let Some((l, dd)) = shape {
            assert_eq!(
                (l, dd),
                (self.library.n_terms(), d),
                "prior scale matrix must be n_terms x dim"
            );
        }
        if self.obs.kind == ObservationKind::Lognormal {
            for i in 0..data.n_samples() {
                for j in 0..d {
                    if data.observations[(i, j)] <= 0.0 {
                        return Err(ModelError::NonPositiveObservation { row: i, col: j });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Log-likelihood of the data at a specific coefficient matrix, initial
/// state, and noise scales. Integration failures and invalid lognormal
/// predictions yield `-inf`.
pub fn log_likelihood(
    model: &UqSindyModel,
    data: &Dataset,
    xi: &CoefficientMatrix,
    x0: &[f64],
    sigmas: &[f64],
) -> Result<f64, ModelError> {
    model.validate(data)?;
    let md = ModelData::new(model.clone(), data);
    Ok(md.loglik(&xi.values, x0, sigmas))
}

/// Assemble the posterior target density for a model/dataset pair.
///
/// Continuous layout (stable): coefficient block (column-major), then
/// unconstrained x0, then unconstrained noise scales, then the
/// unconstrained hierarchy (horseshoe only). Under the sparsifying priors
/// the coefficient block holds standardized values whose prior is unit
/// normal; the effective coefficient is recovered per draw.
pub fn build_target(model: &UqSindyModel, data: &Dataset) -> Result<ModelTarget, ModelError> {
    model.validate(data)?;
    let md = Arc::new(ModelData::new(model.clone(), data));
    Ok(match &model.coeff_prior {
        CoeffPrior::SpikeSlab(spec) => {
            ModelTarget::SpikeSlab(target::SpikeSlabTarget::new(md, spec.clone()))
        }
        CoeffPrior::RegHorseshoe(spec) => {
            ModelTarget::RegHorseshoe(target::RegHorseshoeTarget::new(md, spec.clone()))
        }
        CoeffPrior::Laplace { b } => ModelTarget::Plain(target::PlainCoeffTarget::new(
            md,
            DistributionSpec::Laplace { mu: 0.0, b: *b },
        )),
        CoeffPrior::NormalReference => ModelTarget::Plain(target::PlainCoeffTarget::new(
            md,
            DistributionSpec::Normal { mu: 0.0, sigma: 1.0 },
        )),
    })
}

/// Posterior draws with a stable name map over the constrained, physical
/// parameters (effective coefficients, x0, noise scales, hierarchy).
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    /// Raw sampler coordinates, for diagnostics and reproducibility.
    pub store: SampleStore,
    /// Names of the raw continuous coordinates.
    pub raw_names: Vec<String>,
    /// Named constrained parameters, one column per name, per chain.
    pub names: Vec<String>,
    pub chains: Vec<DMatrix<f64>>,
    pub diagnostics: Diagnostics,
    pub prior_kind: &'static str,
    pub state_labels: Vec<String>,
    pub term_names: Vec<String>,
    pub n_terms: usize,
    pub dim: usize,
    /// Initial time of the training data; predictions integrate from here.
    pub t0: f64,
}

impl PosteriorSamples {
    pub fn n_total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.nrows()).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Pooled draws of a named parameter, chain-major.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        let col = self.column_index(name)?;
        let mut out = Vec::with_capacity(self.n_total_draws());
        for chain in &self.chains {
            out.extend(chain.column(col).iter().copied());
        }
        Some(out)
    }

    pub fn coefficient_name(&self, term: usize, state: usize) -> String {
        format!(
            "xi[{}->{}]",
            self.term_names[term], self.state_labels[state]
        )
    }

    pub fn indicator_name(&self, term: usize, state: usize) -> String {
        format!(
            "lambda[{}->{}]",
            self.term_names[term], self.state_labels[state]
        )
    }

    /// (coefficients flat column-major, x0, sigmas) for one pooled draw.
    pub fn draw_parameters(&self, pooled_idx: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let per_chain = self.chains[0].nrows();
        let chain = pooled_idx / per_chain;
        let row = pooled_idx % per_chain;
        let m = &self.chains[chain];
        let n_xi = self.n_terms * self.dim;
        let xi: Vec<f64> = (0..n_xi).map(|q| m[(row, q)]).collect();
        let x0: Vec<f64> = (0..self.dim).map(|j| m[(row, n_xi + j)]).collect();
        let sigmas: Vec<f64> = (0..self.dim)
            .map(|j| m[(row, n_xi + self.dim + j)])
            .collect();
        (xi, x0, sigmas)
    }

    /// KDE posterior mode of a named parameter over pooled draws.
    pub fn mode(&self, name: &str) -> Option<f64> {
        self.pooled(name).map(|d| posterior_mode(&d))
    }
}

/// Draw from the posterior with the sampler matched to the prior: the
/// compound (Gibbs + NUTS) sampler for spike-and-slab, plain NUTS
/// otherwise.
pub fn fit(
    model: &UqSindyModel,
    data: &Dataset,
    cfg: &ChainConfig,
) -> Result<PosteriorSamples, ModelError> {
    let target = build_target(model, data)?;
    let store = match &target {
        ModelTarget::SpikeSlab(_) => compound_run(&target, cfg)?,
        _ => nuts_run(&target, cfg)?,
    };
    Ok(assemble(model, data, &target, store))
}

fn assemble(
    model: &UqSindyModel,
    data: &Dataset,
    target: &ModelTarget,
    store: SampleStore,
) -> PosteriorSamples {
    let l = model.library.n_terms();
    let d = model.library.dim;
    let n_xi = l * d;
    let state_labels = data.labels.clone();
    let term_names = model.library.term_names(&state_labels);
    let coeff_label =
        |q: usize| -> String { format!("{}->{}", term_names[q % l], state_labels[q / l]) };

    let mut raw_names: Vec<String> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    match &model.coeff_prior {
        CoeffPrior::Laplace { .. } | CoeffPrior::NormalReference => {
            raw_names.extend((0..n_xi).map(|q| format!("xi[{}]", coeff_label(q))));
        }
        _ => {
            raw_names.extend((0..n_xi).map(|q| format!("z[{}]", coeff_label(q))));
        }
    }
    raw_names.extend(state_labels.iter().map(|s| format!("x0_unc[{s}]")));
    raw_names.extend(state_labels.iter().map(|s| format!("sigma_unc[{s}]")));
    if matches!(model.coeff_prior, CoeffPrior::RegHorseshoe(_)) {
        raw_names.extend((0..n_xi).map(|q| format!("log_lambda[{}]", coeff_label(q))));
        raw_names.push("log_tau".to_string());
        raw_names.push("log_c2".to_string());
    }

    names.extend((0..n_xi).map(|q| format!("xi[{}]", coeff_label(q))));
    names.extend(state_labels.iter().map(|s| format!("x0[{s}]")));
    names.extend(state_labels.iter().map(|s| format!("sigma[{s}]")));
    match &model.coeff_prior {
        CoeffPrior::SpikeSlab(_) | CoeffPrior::RegHorseshoe(_) => {
            names.extend((0..n_xi).map(|q| format!("lambda[{}]", coeff_label(q))));
        }
        _ => {}
    }
    if matches!(model.coeff_prior, CoeffPrior::RegHorseshoe(_)) {
        names.push("tau".to_string());
        names.push("c2".to_string());
    }

    let md = target.data();
    let chains: Vec<DMatrix<f64>> = store
        .draws
        .iter()
        .zip(&store.indicators)
        .map(|(draws, indicators)| {
            let n_rows = draws.nrows();
            DMatrix::from_fn(n_rows, names.len(), |row, col| {
                named_value(model, md, draws, indicators, row, col, n_xi)
            })
        })
        .collect();

    let diag = diagnostics(&store);
    PosteriorSamples {
        raw_names,
        names,
        chains,
        diagnostics: diag,
        prior_kind: model.coeff_prior.kind_name(),
        state_labels,
        term_names,
        n_terms: l,
        dim: d,
        t0: data.times[0],
        store,
    }
}

/// Constrained value of named-parameter column `col` for one draw.
fn named_value(
    model: &UqSindyModel,
    md: &ModelData,
    draws: &DMatrix<f64>,
    indicators: &DMatrix<u8>,
    row: usize,
    col: usize,
    n_xi: usize,
) -> f64 {
    let d = md.dim;
    let l = md.n_terms;
    if col < n_xi {
        let q = col;
        let (i, j) = (q % l, q / l);
        return match &model.coeff_prior {
            CoeffPrior::SpikeSlab(spec) => {
                draws[(row, q)]
                    * indicators[(row, q)] as f64
                    * spec.slab_sd
                    * spec.scale[(i, j)]
            }
            CoeffPrior::RegHorseshoe(spec) => {
                let lam = draws[(row, n_xi + 2 * d + q)].exp();
                let tau = draws[(row, 2 * n_xi + 2 * d)].exp();
                let c = draws[(row, 2 * n_xi + 2 * d + 1)].exp().sqrt();
                draws[(row, q)] * rh_lambda_tilde(lam, tau, c) * tau * spec.scale[(i, j)]
            }
            _ => draws[(row, q)],
        };
    }
    if col < n_xi + d {
        let j = col - n_xi;
        return model.x0_prior[j].constrain(draws[(row, n_xi + j)]);
    }
    if col < n_xi + 2 * d {
        let j = col - n_xi - d;
        return model.obs.noise_prior[j].constrain(draws[(row, n_xi + d + j)]);
    }
    match &model.coeff_prior {
        CoeffPrior::SpikeSlab(_) => {
            let q = col - n_xi - 2 * d;
            indicators[(row, q)] as f64
        }
        CoeffPrior::RegHorseshoe(_) => {
            let idx = col - n_xi - 2 * d;
            if idx < n_xi {
                draws[(row, n_xi + 2 * d + idx)].exp()
            } else if idx == n_xi {
                draws[(row, 2 * n_xi + 2 * d)].exp()
            } else {
                draws[(row, 2 * n_xi + 2 * d + 1)].exp()
            }
        }
        _ => unreachable!("plain priors have no hierarchy columns"),
    }
}

/// Per-coefficient inclusion probabilities: pooled means of the
/// spike-and-slab indicator draws.
pub fn inclusion_probabilities(
    samples: &PosteriorSamples,
) -> Result<DMatrix<f64>, ModelError> {
    if samples.prior_kind != "spike_slab" {
        return Err(ModelError::WrongPriorKind {
            required: "spike_slab",
            actual: samples.prior_kind,
        });
    }
    let l = samples.n_terms;
    let d = samples.dim;
    let mut out = DMatrix::zeros(l, d);
    for q in 0..(l * d) {
        let draws = samples.store.pooled_indicator(q);
        out[(q % l, q / l)] =
            draws.iter().map(|&x| x as f64).sum::<f64>() / draws.len() as f64;
    }
    Ok(out)
}

/// Shrinkage pseudo-probability of one coefficient: the ratio of posterior
/// modes under the sparsifying fit and under a normal-reference fit. A
/// reference mode this close to zero leaves the ratio undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageFactor {
    pub kappa: Option<f64>,
    pub sparse_mode: f64,
    pub reference_mode: f64,
}

/// Run the normal-reference fit and form per-coefficient shrinkage factors
/// against an existing regularized-horseshoe fit.
pub fn shrinkage_pseudo_prob(
    model: &UqSindyModel,
    data: &Dataset,
    cfg: &ChainConfig,
    rh_samples: &PosteriorSamples,
) -> Result<DMatrix<ShrinkageFactor>, ModelError> {
    if rh_samples.prior_kind != "reg_horseshoe" {
        return Err(ModelError::WrongPriorKind {
            required: "reg_horseshoe",
            actual: rh_samples.prior_kind,
        });
    }
    let mut reference = model.clone();
    reference.coeff_prior = CoeffPrior::NormalReference;
    let ref_samples = fit(&reference, data, cfg)?;
    Ok(shrinkage_from_fits(rh_samples, &ref_samples))
}

/// Shrinkage factors from two existing fits (sparsifying and reference).
pub fn shrinkage_from_fits(
    sparse: &PosteriorSamples,
    reference: &PosteriorSamples,
) -> DMatrix<ShrinkageFactor> {
    let l = sparse.n_terms;
    let d = sparse.dim;
    DMatrix::from_fn(l, d, |i, j| {
        let name = sparse.coefficient_name(i, j);
        let sparse_mode = sparse.mode(&name).unwrap();
        let reference_mode = reference.mode(&name).unwrap();
        let kappa = if reference_mode.abs() < 1e-6 {
            None
        } else {
            Some(sparse_mode / reference_mode)
        };
        ShrinkageFactor {
            kappa,
            sparse_mode,
            reference_mode,
        }
    })
}

#[cfg(test)]
mod tests;
