//! Flat key=value run configuration.
//!
//! Defaults target full-scale training: 4 encoder layers at
//! embedding width 512, latent width 10, lambda 20, learning rate
//! 1e-4, batch 128, 100 epochs, beam 10, at most 20 transformation
//! steps. Desk-scale runs override `layers` and `embed_dim` (see
//! `configs/desk.conf`). Unknown keys are rejected.

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    BadSyntax { line: usize },
    #[error("line {line}: invalid value for `{key}`: {value}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("could not read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam_size: usize,
    pub max_steps: usize,
    pub threshold: f64,
    pub seed: u64,
    pub class_conditioning: bool,
    pub class_embed_dim: usize,
    pub mc_traces: usize,
    pub centers_k: usize,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layers: 4,
            embed_dim: 512,
            latent_dim: 10,
            lambda: 20.0,
            learning_rate: 0.0001,
            batch_size: 128,
            epochs: 100,
            beam_size: 10,
            max_steps: 20,
            threshold: 0.5,
            seed: 0,
            class_conditioning: false,
            class_embed_dim: 32,
            mc_traces: 1,
            centers_k: 1,
            samples: 1,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::BadSyntax { line });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "layers" => config.layers = value.parse().map_err(|_| bad())?,
                "embed_dim" => config.embed_dim = value.parse().map_err(|_| bad())?,
                "latent_dim" => config.latent_dim = value.parse().map_err(|_| bad())?,
                "lambda" => config.lambda = value.parse().map_err(|_| bad())?,
                "learning_rate" => config.learning_rate = value.parse().map_err(|_| bad())?,
                "batch_size" => config.batch_size = value.parse().map_err(|_| bad())?,
                "epochs" => config.epochs = value.parse().map_err(|_| bad())?,
                "beam_size" => config.beam_size = value.parse().map_err(|_| bad())?,
                "max_steps" => config.max_steps = value.parse().map_err(|_| bad())?,
                "threshold" => config.threshold = value.parse().map_err(|_| bad())?,
                "seed" => config.seed = value.parse().map_err(|_| bad())?,
                "class_conditioning" => {
                    config.class_conditioning = value.parse().map_err(|_| bad())?
                }
                "class_embed_dim" => config.class_embed_dim = value.parse().map_err(|_| bad())?,
                "mc_traces" => config.mc_traces = value.parse().map_err(|_| bad())?,
                "centers_k" => config.centers_k = value.parse().map_err(|_| bad())?,
                "samples" => config.samples = value.parse().map_err(|_| bad())?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialization; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        format!(
            "layers = {}\nembed_dim = {}\nlatent_dim = {}\nlambda = {}\nlearning_rate = {}\n\
             batch_size = {}\nepochs = {}\nbeam_size = {}\nmax_steps = {}\nthreshold = {}\n\
             seed = {}\nclass_conditioning = {}\nclass_embed_dim = {}\nmc_traces = {}\n\
             centers_k = {}\nsamples = {}\n",
            self.layers,
            self.embed_dim,
            self.latent_dim,
            self.lambda,
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.beam_size,
            self.max_steps,
            self.threshold,
            self.seed,
            self.class_conditioning,
            self.class_embed_dim,
            self.mc_traces,
            self.centers_k,
            self.samples,
        )
    }

    /// FNV-1a hash of the canonical serialization.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
