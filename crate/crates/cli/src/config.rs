//! Run configuration: one JSON document per run. Field names and defaults
//! are part of the CLI contract; parsing uses path-to-field error messages
//! and round-trips through serde.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use uqsindy::data::NoiseSpec;
use uqsindy::mcmc::ChainConfig;
use uqsindy::odeint::IntegratorConfig;
use uqsindy::priors::DistributionSpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub normalize: bool,
    pub library: LibraryConfig,
    pub prior: PriorConfig,
    pub observation: ObservationConfig,
    pub x0_prior: DistributionSpec,
    #[serde(default)]
    pub sampler: ChainConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub ppd: PpdConfig,
    pub output_dir: PathBuf,
}

/// Exactly one source: a generator block or a CSV path.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    Generator(GeneratorConfig),
    Csv(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub system: SystemKind,
    /// `[alpha, beta, gamma, delta]`.
    pub params: [f64; 4],
    pub x0: [f64; 2],
    pub t_start: f64,
    pub t_end: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    LotkaVolterra,
    Oscillator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    pub max_degree: u32,
    #[serde(default = "default_stab_eps")]
    pub stab_eps: f64,
    /// Explicit term list as exponent tuples; overrides `max_degree`
    /// enumeration when present.
    #[serde(default)]
    pub terms: Option<Vec<Vec<u32>>>,
}

fn default_stab_eps() -> f64 {
    uqsindy::library::DEFAULT_STAB_EPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    SpikeSlab {
        #[serde(default = "default_pi")]
        pi: f64,
        #[serde(default = "default_one")]
        slab_sd: f64,
        #[serde(default = "default_spike_sd")]
        spike_sd: f64,
        /// `(term index, state index, value)` triples.
        #[serde(default)]
        alpha_overrides: Vec<(usize, usize, f64)>,
    },
    RegHorseshoe {
        #[serde(default = "default_tau0")]
        tau0: f64,
        #[serde(default = "default_nu")]
        nu: f64,
        #[serde(default = "default_s")]
        s: f64,
        #[serde(default)]
        alpha_overrides: Vec<(usize, usize, f64)>,
        /// Run the normal-reference fit and report shrinkage factors.
        #[serde(default = "default_true")]
        shrinkage_reference: bool,
    },
    Laplace {
        #[serde(default = "default_one")]
        b: f64,
    },
    NormalReference,
}

fn default_pi() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_spike_sd() -> f64 {
    1e-3
}
fn default_tau0() -> f64 {
    0.1
}
fn default_nu() -> f64 {
    4.0
}
fn default_s() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub kind: uqsindy::model::ObservationKind,
    pub noise_prior: DistributionSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub threshold: f64,
    pub ridge: f64,
    pub max_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let d = uqsindy::baseline::StlsqConfig::default();
        BaselineConfig {
            threshold: d.threshold,
            ridge: d.ridge,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpdConfig {
    pub include_noise: bool,
    pub lower_q: f64,
    pub upper_q: f64,
    pub n_draws: usize,
}

impl Default for PpdConfig {
    fn default() -> Self {
        PpdConfig {
            include_noise: true,
            lower_q: 0.05,
            upper_q: 0.95,
            n_draws: 500,
        }
    }
}

/// Prior-comparison experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDemoConfig {
    pub n_samples: usize,
    pub noise_sd: f64,
    pub beta: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_one")]
    pub laplace_b: f64,
    #[serde(default = "default_pi")]
    pub spike_slab_pi: f64,
    #[serde(default = "default_one")]
    pub spike_slab_sd: f64,
    #[serde(default = "default_tau0")]
    pub horseshoe_tau0: f64,
    #[serde(default = "default_nu")]
    pub horseshoe_nu: f64,
    #[serde(default = "default_s")]
    pub horseshoe_s: f64,
    #[serde(default)]
    pub sampler: ChainConfig,
    pub output_dir: PathBuf,
}

/// Parse a JSON config with field-path error messages.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

impl RunConfig {
    /// Resolve relative dataset paths against the config file's directory.
    pub fn resolve_paths(&mut self, config_dir: Option<&Path>) {
        if let (DatasetSource::Csv(path), Some(dir)) = (&mut self.dataset, config_dir) {
            if path.is_relative() {
                *path = dir.join(&path);
            }
        }
    }

    /// Structural checks beyond what serde enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, message: String| {
            Err(CliError::Config {
                path: PathBuf::new(),
                field: field.to_string(),
                message,
            })
        };
        if let DatasetSource::Generator(g) = &self.dataset {
            if g.n_samples < 2 {
                return bad("dataset.generator.n_samples", "need at least 2 samples".into());
            }
            if g.t_end <= g.t_start {
                return bad("dataset.generator.t_end", "must exceed t_start".into());
            }
        }
        if let Some(terms) = &self.library.terms {
            if terms.is_empty() {
                return bad("library.terms", "term list must be non-empty".into());
            }
        }
        if self.library.max_degree == 0 {
            return bad("library.max_degree", "must be at least 1".into());
        }
        if let Err(msg) = self.x0_prior.validate() {
            return bad("x0_prior", msg);
        }
        if let Err(msg) = self.observation.noise_prior.validate() {
            return bad("observation.noise_prior", msg);
        }
        match &self.prior {
            PriorConfig::SpikeSlab { pi, slab_sd, spike_sd, .. } => {
                if !(0.0 < *pi && *pi < 1.0) {
                    return bad("prior.pi", "must lie strictly between 0 and 1".into());
                }
                if spike_sd >= slab_sd {
                    return bad("prior.spike_sd", "must be smaller than slab_sd".into());
                }
            }
            PriorConfig::RegHorseshoe { tau0, nu, s, .. } => {
                if *tau0 <= 0.0 || *nu <= 0.0 || *s <= 0.0 {
                    return bad("prior", "tau0, nu, s must be strictly positive".into());
                }
            }
            PriorConfig::Laplace { b } => {
                if *b <= 0.0 {
                    return bad("prior.b", "must be strictly positive".into());
                }
            }
            PriorConfig::NormalReference => {}
        }
        Ok(())
    }

    /// Alpha-override triples for the coefficient prior, if any.
    pub fn alpha_overrides(&self) -> &[(usize, usize, f64)] {
        match &self.prior {
            PriorConfig::SpikeSlab { alpha_overrides, .. }
            | PriorConfig::RegHorseshoe { alpha_overrides, .. } => alpha_overrides,
            _ => &[],
        }
    }
}
