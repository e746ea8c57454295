//! Pipeline configuration: a flat `key = value` text format with `#`
//! comments. Unknown keys are hard errors so typos cannot silently fall
//! back to defaults. The root seed is mandatory; nothing in the pipeline
//! seeds itself from the clock.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::priors::HyperPriorSpec;
use crate::vae::{Activation, VaeArchitecture};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // Paths (resolved relative to the config file's directory).
    pub boundaries_old: PathBuf,
    pub boundaries_new: PathBuf,
    pub data_old: PathBuf,
    pub data_new: PathBuf,
    pub out_dir: PathBuf,

    pub grid_resolution: usize,

    // Hyperpriors of the GP kernel.
    pub hyper_lengthscale_shape: f64,
    pub hyper_lengthscale_scale: f64,
    pub hyper_sigma_scale: f64,

    // VAE knobs.
    pub vae_hidden: Vec<usize>,
    /// 0 selects the default `ceil((K1 + K2) / 4)`.
    pub vae_latent_dim: usize,
    pub vae_activation: Activation,
    pub vae_epochs: usize,
    pub vae_batch_size: usize,
    pub vae_learning_rate: f64,
    pub vae_noise_sigma: f64,
    pub vae_train_count: usize,

    // MCMC knobs.
    pub mcmc_chains: usize,
    pub mcmc_warmup: usize,
    pub mcmc_samples: usize,
    pub mcmc_target_accept: f64,
    pub mcmc_max_depth: usize,

    // Priors of the observation models.
    pub intercept_prior_sd: f64,
    pub s_prior_scale: f64,

    // Synthetic-scenario knobs (used by the synth subcommand).
    pub synth_rows_old: usize,
    pub synth_cols_old: usize,
    pub synth_rows_new: usize,
    pub synth_cols_new: usize,
    pub synth_width: f64,
    pub synth_height: f64,
    pub synth_tests_per_unit: u64,
    pub synth_b0_true: f64,
    pub synth_sigma_true: f64,
    pub synth_lengthscale_true: f64,

    pub root_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            boundaries_old: "boundaries_old.geojson".into(),
            boundaries_new: "boundaries_new.geojson".into(),
            data_old: "prevalence_old.csv".into(),
            data_new: "prevalence_new.csv".into(),
            out_dir: "out".into(),
            grid_resolution: 12,
            hyper_lengthscale_shape: 3.0,
            hyper_lengthscale_scale: 3.0,
            hyper_sigma_scale: 0.05,
            vae_hidden: Vec::new(), // empty selects 2 x (4 * dim)
            vae_latent_dim: 0,
            vae_activation: Activation::Tanh,
            vae_epochs: 200,
            vae_batch_size: 256,
            vae_learning_rate: 1e-3,
            vae_noise_sigma: 0.01,
            vae_train_count: 20_000,
            mcmc_chains: 4,
            mcmc_warmup: 200,
            mcmc_samples: 1000,
            mcmc_target_accept: 0.8,
            mcmc_max_depth: 10,
            intercept_prior_sd: 5.0,
            s_prior_scale: 1.0,
            synth_rows_old: 2,
            synth_cols_old: 2,
            synth_rows_new: 3,
            synth_cols_new: 3,
            synth_width: 1.0,
            synth_height: 1.0,
            synth_tests_per_unit: 1000,
            synth_b0_true: -0.5,
            synth_sigma_true: 0.06,
            synth_lengthscale_true: 0.8,
            root_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Parse the flat key-value text. `root_seed` must be present; any key
    /// outside the schema is an error.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = BTreeSet::new();
        let mut seed_given = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Invalid(format!("config line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Invalid(format!("config key {key:?} given twice")));
            }
            let bad = |what: &str| Error::Invalid(format!("config key {key:?}: bad {what} {value:?}"));
            macro_rules! parse {
                ($what:expr) => {
                    value.parse().map_err(|_| bad($what))?
                };
            }
            match key {
                "boundaries_old" => cfg.boundaries_old = value.into(),
                "boundaries_new" => cfg.boundaries_new = value.into(),
                "data_old" => cfg.data_old = value.into(),
                "data_new" => cfg.data_new = value.into(),
                "out_dir" => cfg.out_dir = value.into(),
                "grid_resolution" => cfg.grid_resolution = parse!("integer"),
                "hyper_lengthscale_shape" => cfg.hyper_lengthscale_shape = parse!("number"),
                "hyper_lengthscale_scale" => cfg.hyper_lengthscale_scale = parse!("number"),
                "hyper_sigma_scale" => cfg.hyper_sigma_scale = parse!("number"),
                "vae_hidden" => {
                    cfg.vae_hidden = value
                        .split(',')
                        .map(|t| t.trim().parse().map_err(|_| bad("width list")))
                        .collect::<Result<Vec<usize>>>()?;
                }
                "vae_latent_dim" => cfg.vae_latent_dim = parse!("integer"),
                "vae_activation" => cfg.vae_activation = Activation::from_name(value)?,
                "vae_epochs" => cfg.vae_epochs = parse!("integer"),
                "vae_batch_size" => cfg.vae_batch_size = parse!("integer"),
                "vae_learning_rate" => cfg.vae_learning_rate = parse!("number"),
                "vae_noise_sigma" => cfg.vae_noise_sigma = parse!("number"),
                "vae_train_count" => cfg.vae_train_count = parse!("integer"),
                "mcmc_chains" => cfg.mcmc_chains = parse!("integer"),
                "mcmc_warmup" => cfg.mcmc_warmup = parse!("integer"),
                "mcmc_samples" => cfg.mcmc_samples = parse!("integer"),
                "mcmc_target_accept" => cfg.mcmc_target_accept = parse!("number"),
                "mcmc_max_depth" => cfg.mcmc_max_depth = parse!("integer"),
                "intercept_prior_sd" => cfg.intercept_prior_sd = parse!("number"),
                "s_prior_scale" => cfg.s_prior_scale = parse!("number"),
                "synth_rows_old" => cfg.synth_rows_old = parse!("integer"),
                "synth_cols_old" => cfg.synth_cols_old = parse!("integer"),
                "synth_rows_new" => cfg.synth_rows_new = parse!("integer"),
                "synth_cols_new" => cfg.synth_cols_new = parse!("integer"),
                "synth_width" => cfg.synth_width = parse!("number"),
                "synth_height" => cfg.synth_height = parse!("number"),
                "synth_tests_per_unit" => cfg.synth_tests_per_unit = parse!("integer"),
                "synth_b0_true" => cfg.synth_b0_true = parse!("number"),
                "synth_sigma_true" => cfg.synth_sigma_true = parse!("number"),
                "synth_lengthscale_true" => cfg.synth_lengthscale_true = parse!("number"),
                "root_seed" => {
                    cfg.root_seed = parse!("integer");
                    seed_given = true;
                }
                other => {
                    return Err(Error::Invalid(format!("unknown config key {other:?}")));
                }
            }
        }
        if !seed_given {
            return Err(Error::Invalid(
                "config must set root_seed (wall-clock seeding is not supported)".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.grid_resolution < 2 {
            return Err(Error::Invalid("grid_resolution must be at least 2".into()));
        }
        if self.mcmc_chains < 2 {
            return Err(Error::Invalid("mcmc_chains must be at least 2".into()));
        }
        if self.mcmc_warmup == 0 || self.mcmc_samples == 0 {
            return Err(Error::Invalid("mcmc_warmup and mcmc_samples must be positive".into()));
        }
        if !(self.mcmc_target_accept > 0.0 && self.mcmc_target_accept < 1.0) {
            return Err(Error::Invalid("mcmc_target_accept must lie in (0, 1)".into()));
        }
        if !(self.vae_noise_sigma > 0.0) {
            return Err(Error::Invalid("vae_noise_sigma must be positive".into()));
        }
        if self.vae_train_count == 0 || self.vae_epochs == 0 || self.vae_batch_size == 0 {
            return Err(Error::Invalid("VAE training knobs must be positive".into()));
        }
        HyperPriorSpec {
            lengthscale_shape: self.hyper_lengthscale_shape,
            lengthscale_scale: self.hyper_lengthscale_scale,
            sigma_scale: self.hyper_sigma_scale,
        }
        .validated()?;
        Ok(())
    }

    /// Load from disk and resolve relative paths against the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        cfg.boundaries_old = resolve(&cfg.boundaries_old);
        cfg.boundaries_new = resolve(&cfg.boundaries_new);
        cfg.data_old = resolve(&cfg.data_old);
        cfg.data_new = resolve(&cfg.data_new);
        cfg.out_dir = resolve(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn hyperpriors(&self) -> HyperPriorSpec {
        HyperPriorSpec {
            lengthscale_shape: self.hyper_lengthscale_shape,
            lengthscale_scale: self.hyper_lengthscale_scale,
            sigma_scale: self.hyper_sigma_scale,
        }
    }

    /// Architecture for a given joint dimension, applying the defaults for
    /// unset hidden widths (two layers of 4x dim) and latent size.
    pub fn vae_architecture(&self, joint_dim: usize) -> VaeArchitecture {
        let default = VaeArchitecture::default_for(joint_dim);
        VaeArchitecture {
            hidden: if self.vae_hidden.is_empty() {
                default.hidden
            } else {
                self.vae_hidden.clone()
            },
            latent_dim: if self.vae_latent_dim == 0 {
                default.latent_dim
            } else {
                self.vae_latent_dim
            },
            activation: self.vae_activation,
        }
    }
}

/// 64-bit FNV-1a over the raw config text, rendered as hex: the provenance
/// hash embedded in every output file.
pub fn config_hash(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
