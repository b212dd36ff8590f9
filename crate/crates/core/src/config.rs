//! Flat `key = value` run configuration.
//!
//! One file configures a whole run; command-line flags override file values.
//! Unknown keys are hard errors so typos cannot silently fall back to
//! defaults.

use std::path::Path;

use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::trainer::{Optimizer, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },

    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    Malformed {
        path: String,
        line: usize,
        text: String,
    },

    #[error("{path}:{line}: bad value for `{key}`: {msg}")]
    BadValue {
        path: String,
        line: usize,
        key: String,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Everything a training run can configure, before the input image is known.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Inputs are resized to this square side before training.
    pub image_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub min_clusters: usize,
    pub emit_every: usize,
    pub weights: LossWeights,
    pub feat_channels: usize,
    pub token_dim: usize,
    /// Defaults to `image_size / 8` when not set explicitly.
    pub patch_size: Option<usize>,
    pub num_clusters: usize,
    pub alpha: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub blur_sigma: (f64, f64),
    pub blur_kernel_size: usize,
    pub resample_augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let augment = AugmentConfig::default();
        Self {
            image_size: 256,
            iterations: 60,
            learning_rate: 5e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            min_clusters: 2,
            emit_every: 0,
            weights: LossWeights::default(),
            feat_channels: 64,
            token_dim: 64,
            patch_size: None,
            num_clusters: 16,
            alpha: 3.0,
            brightness: augment.brightness,
            contrast: augment.contrast,
            saturation: augment.saturation,
            blur_sigma: augment.blur_sigma,
            blur_kernel_size: augment.blur_kernel_size,
            resample_augment: false,
        }
    }
}

impl RunConfig {
    /// Parses a config file and applies it over the defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines from a file on top of `self`.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Malformed {
                    path: display.clone(),
                    line,
                    text: content.to_string(),
                });
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| e.at(&display, line))?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        match key {
            "image_size" => self.image_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => Optimizer::Adam,
                    "sgd" => Optimizer::Sgd,
                    other => {
                        return Err(SetError::bad(key, format!("`{other}` (use adam or sgd)")))
                    }
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "min_clusters" => self.min_clusters = parse(key, value)?,
            "emit_every" => self.emit_every = parse(key, value)?,
            "lambda_ce" => self.weights.lambda_ce = parse(key, value)?,
            "lambda_clip" => self.weights.lambda_clip = parse(key, value)?,
            "lambda_boundary" => self.weights.lambda_boundary = parse(key, value)?,
            "temperature" => self.weights.temperature = parse(key, value)?,
            "beta" => self.weights.beta = parse(key, value)?,
            "feat_channels" => self.feat_channels = parse(key, value)?,
            "token_dim" => self.token_dim = parse(key, value)?,
            "patch_size" => self.patch_size = Some(parse(key, value)?),
            "num_clusters" => self.num_clusters = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "brightness" => self.brightness = parse(key, value)?,
            "contrast" => self.contrast = parse(key, value)?,
            "saturation" => self.saturation = parse(key, value)?,
            "blur_sigma_lo" => self.blur_sigma.0 = parse(key, value)?,
            "blur_sigma_hi" => self.blur_sigma.1 = parse(key, value)?,
            "blur_kernel_size" => self.blur_kernel_size = parse(key, value)?,
            "resample_augment" => self.resample_augment = parse_bool(key, value)?,
            other => return Err(SetError::unknown(other)),
        }
        Ok(())
    }

    /// Builds the full training configuration once the input channel count
    /// is known.
    pub fn train_config(&self, in_channels: usize) -> TrainConfig {
        let model = ModelConfig {
            in_channels,
            feat_channels: self.feat_channels,
            patch_size: self.patch_size.unwrap_or((self.image_size / 8).max(1)),
            token_dim: self.token_dim,
            num_clusters: self.num_clusters,
            alpha: self.alpha,
            image_h: self.image_size,
            image_w: self.image_size,
        };
        let augment = AugmentConfig {
            brightness: self.brightness,
            contrast: self.contrast,
            saturation: self.saturation,
            blur_sigma: self.blur_sigma,
            blur_kernel_size: self.blur_kernel_size,
            seed: self.seed,
            resample_each_iteration: self.resample_augment,
        };
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            min_clusters: self.min_clusters,
            emit_every: self.emit_every,
            artifact_dir: None,
            weights: self.weights,
            model,
            augment,
        }
    }
}

/// A key/value rejection, before file position is attached.
#[derive(Debug)]
pub struct SetError {
    key: String,
    msg: Option<String>,
}

impl SetError {
    fn unknown(key: &str) -> Self {
        Self {
            key: key.to_string(),
            msg: None,
        }
    }

    fn bad(key: &str, msg: String) -> Self {
        Self {
            key: key.to_string(),
            msg: Some(msg),
        }
    }

    fn at(self, path: &str, line: usize) -> ConfigError {
        match self.msg {
            None => ConfigError::UnknownKey {
                path: path.to_string(),
                line,
                key: self.key,
            },
            Some(msg) => ConfigError::BadValue {
                path: path.to_string(),
                line,
                key: self.key,
                msg,
            },
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn is_unknown_key(&self) -> bool {
        self.msg.is_none()
    }
}

impl std::fmt::Display for SetError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.msg {
            None => write!(f, "unknown key `{}`", self.key),
            Some(msg) => write!(f, "bad value for `{}`: {}", self.key, msg),
        }
    }
}

impl std::error::Error for SetError {}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SetError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| SetError::bad(key, format!("`{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, SetError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(SetError::bad(key, format!("`{other}` is not a boolean"))),
    }
}
