//! Flat `key=value` run configuration.
//!
//! Blank lines and `#` comments are ignored, unknown keys are rejected, and
//! every value is validated when the file is parsed. [`RunConfig::dump`]
//! writes every key, so dump → parse → dump is the identity.

use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::MattingSettings;
use crate::hazesynth::{HazeParams, SynthOptions};
use crate::losses::LossWeights;
use crate::matting::CgOptions;
use crate::networks::ArchConfig;
use crate::optim::AdamConfig;
use crate::trainer::{PhotoMode, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {detail}")]
    Value { key: String, value: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub atmospheric_light: f32,
    pub beta: f32,
    pub beta_jitter_min: f32,
    pub beta_jitter_max: f32,
    pub refine_lambda: f64,
    pub matting_eps: f64,
    pub window_radius: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthOptions::default();
        Self {
            seed: 0,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            atmospheric_light: synth.haze.atmospheric_light(),
            beta: synth.haze.beta(),
            beta_jitter_min: synth.beta_jitter.0,
            beta_jitter_max: synth.beta_jitter.1,
            refine_lambda: synth.refine_lambda,
            matting_eps: synth.matting_eps,
            window_radius: synth.window_radius,
            cg_tol: synth.cg.tol,
            cg_max_iter: synth.cg.max_iter,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "image_size",
    "base_channels",
    "num_residual_blocks",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "epochs_constant",
    "epochs_decay",
    "iterations",
    "batch_size",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "photorealism_mode",
    "paired_backward",
    "checkpoint_every",
    "atmospheric_light",
    "beta",
    "beta_jitter_min",
    "beta_jitter_max",
    "refine_lambda",
    "matting_eps",
    "window_radius",
    "cg_tol",
    "cg_max_iter",
    "data_dir",
    "out_dir",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        detail: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            detail: "expected true or false".into(),
        }),
    }
}

impl RunConfig {
    /// Parses a config file body on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set_raw(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override and revalidates.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_raw(key, value)?;
        self.validate()
    }

    /// Applies a `key=value` string as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    fn set_raw(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                t.seed = self.seed;
            }
            "image_size" => self.arch.image_size = parse_num(key, v)?,
            "base_channels" => self.arch.base_channels = parse_num(key, v)?,
            "num_residual_blocks" => self.arch.num_residual_blocks = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse_num(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => t.adam.eps = parse_num(key, v)?,
            "epochs_constant" => t.epochs_constant = parse_num(key, v)?,
            "epochs_decay" => t.epochs_decay = parse_num(key, v)?,
            "iterations" => t.iterations = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "lambda1" => t.weights.lambda1 = parse_num(key, v)?,
            "lambda2" => t.weights.lambda2 = parse_num(key, v)?,
            "lambda3" => t.weights.lambda3 = parse_num(key, v)?,
            "lambda4" => t.weights.lambda4 = parse_num(key, v)?,
            "photorealism_mode" => {
                t.photorealism_mode = PhotoMode::parse(v).ok_or_else(|| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    detail: "expected both or backward_only".into(),
                })?
            }
            "paired_backward" => t.paired_backward = parse_bool(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "atmospheric_light" => self.atmospheric_light = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "beta_jitter_min" => self.beta_jitter_min = parse_num(key, v)?,
            "beta_jitter_max" => self.beta_jitter_max = parse_num(key, v)?,
            "refine_lambda" => self.refine_lambda = parse_num(key, v)?,
            "matting_eps" => self.matting_eps = parse_num(key, v)?,
            "window_radius" => self.window_radius = parse_num(key, v)?,
            "cg_tol" => self.cg_tol = parse_num(key, v)?,
            "cg_max_iter" => self.cg_max_iter = parse_num(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.arch.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        HazeParams::new(self.atmospheric_light, self.beta).map_err(|e| invalid(&e))?;
        if !(self.beta_jitter_min > 0.0 && self.beta_jitter_min <= self.beta_jitter_max) {
            return Err(ConfigError::Invalid(format!(
                "beta jitter range [{}, {}] must be positive and ordered",
                self.beta_jitter_min, self.beta_jitter_max
            )));
        }
        for (name, v) in [
            ("refine_lambda", self.refine_lambda),
            ("matting_eps", self.matting_eps),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cg_max_iter == 0 {
            return Err(ConfigError::Invalid("cg_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "image_size" => self.arch.image_size.to_string(),
            "base_channels" => self.arch.base_channels.to_string(),
            "num_residual_blocks" => self.arch.num_residual_blocks.to_string(),
            "lr" => t.lr.to_string(),
            "adam_beta1" => t.adam.beta1.to_string(),
            "adam_beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "epochs_constant" => t.epochs_constant.to_string(),
            "epochs_decay" => t.epochs_decay.to_string(),
            "iterations" => t.iterations.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lambda1" => t.weights.lambda1.to_string(),
            "lambda2" => t.weights.lambda2.to_string(),
            "lambda3" => t.weights.lambda3.to_string(),
            "lambda4" => t.weights.lambda4.to_string(),
            "photorealism_mode" => t.photorealism_mode.as_str().to_string(),
            "paired_backward" => t.paired_backward.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "atmospheric_light" => self.atmospheric_light.to_string(),
            "beta" => self.beta.to_string(),
            "beta_jitter_min" => self.beta_jitter_min.to_string(),
            "beta_jitter_max" => self.beta_jitter_max.to_string(),
            "refine_lambda" => self.refine_lambda.to_string(),
            "matting_eps" => self.matting_eps.to_string(),
            "window_radius" => self.window_radius.to_string(),
            "cg_tol" => self.cg_tol.to_string(),
            "cg_max_iter" => self.cg_max_iter.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => unreachable!("KEYS and value_of are kept in sync"),
        }
    }

    /// Current value of `key` in the text form accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.contains(&key).then(|| self.value_of(key))
    }

    pub fn dump(&self) -> String {
        let mut out = String::from("# hazeforge run configuration\n");
        for key in KEYS {
            out.push_str(&format!("{key}={}\n", self.value_of(key)));
        }
        out
    }

    pub fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            haze: HazeParams::new(self.atmospheric_light, self.beta).expect("validated"),
            beta_jitter: (self.beta_jitter_min, self.beta_jitter_max),
            refine_lambda: self.refine_lambda,
            matting_eps: self.matting_eps,
            window_radius: self.window_radius,
            cg: self.cg_options(),
            resize_to: None,
        }
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }

    pub fn matting_settings(&self) -> MattingSettings {
        MattingSettings {
            eps: self.matting_eps,
            window_radius: self.window_radius,
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.train.weights
    }

    pub fn adam(&self) -> AdamConfig {
        self.train.adam
    }
}
