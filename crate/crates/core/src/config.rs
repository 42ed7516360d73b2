//! Flat `key = value` configuration files.
//!
//! The syntax is the flat subset of TOML: one assignment per line, `#`
//! comments, no tables. Strings need quotes, numbers and booleans do not.
//! Unknown keys are errors. Command-line overrides use the same
//! `key=value` form and are applied after the file.

use std::path::Path;

pub use toml::Value;

use crate::data::WorldConfig;
use crate::error::{Error, Result};
use crate::trainer::{TrainConfig, TrainMode};

pub const WORLD_KEYS: &[&str] = &[
    "n_cities",
    "streets_per_city",
    "samples_per_street",
    "city_spread_m",
    "street_spread_m",
    "feature_dim",
    "signal_dim",
    "noise_sigma",
    "nuisance_sigma",
    "feature_offset",
    "min_lengthscale_m",
    "max_lengthscale_m",
    "seed",
];

pub const TRAIN_KEYS: &[&str] = &[
    "mode",
    "epochs",
    "batch_size",
    "base_lr",
    "weight_decay",
    "lambda_fair",
    "seed",
    "stratify_regions",
    "sigma_m",
    "d_cut_m",
    "alpha_street",
    "beta_city",
    "symmetric_loss",
    "freeze_tau",
    "warmup_frac",
    "hidden_dim",
    "embed_dim",
    "token_dim",
    "vocab_size",
    "fourier_freqs",
    "numeric_tokens",
    "train_frac",
    "split_seed",
];

/// Parses flat key-value text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, Value)>> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(table.len());
    for (k, v) in table {
        if matches!(v, Value::Table(_) | Value::Array(_)) {
            return Err(Error::Config(format!("key `{k}`: only scalar values are allowed")));
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    // bare words (e.g. mode=baseline) are accepted as strings
    let value = parse_pairs(&format!("x = {v}"))
        .map(|mut p| p.remove(0).1)
        .unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn bad(key: &str, want: &str, v: &Value) -> Error {
    Error::Config(format!("key `{key}`: expected {want}, got `{v}`"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "a non-negative integer", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

impl WorldConfig {
    pub fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "n_cities" => self.n_cities = as_usize(key, v)?,
            "streets_per_city" => self.streets_per_city = as_usize(key, v)?,
            "samples_per_street" => self.samples_per_street = as_usize(key, v)?,
            "city_spread_m" => self.city_spread_m = as_f64(key, v)?,
            "street_spread_m" => self.street_spread_m = as_f64(key, v)?,
            "feature_dim" => self.feature_dim = as_usize(key, v)?,
            "signal_dim" => self.signal_dim = as_usize(key, v)?,
            "noise_sigma" => self.noise_sigma = as_f64(key, v)?,
            "nuisance_sigma" => self.nuisance_sigma = as_f64(key, v)?,
            "feature_offset" => self.feature_offset = as_f64(key, v)?,
            "min_lengthscale_m" => self.min_lengthscale_m = as_f64(key, v)?,
            "max_lengthscale_m" => self.max_lengthscale_m = as_f64(key, v)?,
            "seed" => self.seed = as_u64(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut cfg = WorldConfig::default();
        if let Some(p) = path {
            for (k, v) in parse_pairs(&read(p)?)? {
                cfg.apply(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainConfig {
    pub fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "mode" => {
                self.mode = v
                    .as_str()
                    .ok_or_else(|| bad(key, "\"sw\" or \"baseline\"", v))?
                    .parse::<TrainMode>()?
            }
            "epochs" => self.epochs = as_usize(key, v)?,
            "batch_size" => self.batch_size = as_usize(key, v)?,
            "base_lr" => self.base_lr = as_f64(key, v)?,
            "weight_decay" => self.weight_decay = as_f64(key, v)?,
            "lambda_fair" => self.lambda_fair = as_f64(key, v)?,
            "seed" => self.seed = as_u64(key, v)?,
            "stratify_regions" => self.stratify_regions = as_bool(key, v)?,
            "sigma_m" => self.kernel.sigma_m = as_f64(key, v)?,
            "d_cut_m" => self.kernel.d_cut_m = as_f64(key, v)?,
            "alpha_street" => self.kernel.alpha_street = as_f64(key, v)?,
            "beta_city" => self.kernel.beta_city = as_f64(key, v)?,
            "symmetric_loss" => self.symmetric_loss = as_bool(key, v)?,
            "freeze_tau" => self.freeze_tau = as_bool(key, v)?,
            "warmup_frac" => self.warmup_frac = as_f64(key, v)?,
            "hidden_dim" => self.hidden_dim = as_usize(key, v)?,
            "embed_dim" => self.embed_dim = as_usize(key, v)?,
            "token_dim" => self.token_dim = as_usize(key, v)?,
            "vocab_size" => self.vocab_size = as_usize(key, v)?,
            "fourier_freqs" => self.fourier_freqs = as_usize(key, v)?,
            "numeric_tokens" => self.numeric_tokens = as_bool(key, v)?,
            "train_frac" => self.train_frac = as_f64(key, v)?,
            "split_seed" => self.split_seed = as_u64(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = path {
            for (k, v) in parse_pairs(&read(p)?)? {
                cfg.apply(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders every key with its current value, in `TRAIN_KEYS` order.
    pub fn to_kv(&self) -> String {
        let k = &self.kernel;
        let vals: Vec<String> = vec![
            format!("\"{}\"", self.mode.as_str()),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            format!("{:?}", self.base_lr),
            format!("{:?}", self.weight_decay),
            format!("{:?}", self.lambda_fair),
            self.seed.to_string(),
            self.stratify_regions.to_string(),
            format!("{:?}", k.sigma_m),
            format!("{:?}", k.d_cut_m),
            format!("{:?}", k.alpha_street),
            format!("{:?}", k.beta_city),
            self.symmetric_loss.to_string(),
            self.freeze_tau.to_string(),
            format!("{:?}", self.warmup_frac),
            self.hidden_dim.to_string(),
            self.embed_dim.to_string(),
            self.token_dim.to_string(),
            self.vocab_size.to_string(),
            self.fourier_freqs.to_string(),
            self.numeric_tokens.to_string(),
            format!("{:?}", self.train_frac),
            self.split_seed.to_string(),
        ];
        TRAIN_KEYS
            .iter()
            .zip(vals)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl WorldConfig {
    pub fn to_kv(&self) -> String {
        let vals = [
            self.n_cities.to_string(),
            self.streets_per_city.to_string(),
            self.samples_per_street.to_string(),
            format!("{:?}", self.city_spread_m),
            format!("{:?}", self.street_spread_m),
            self.feature_dim.to_string(),
            self.signal_dim.to_string(),
            format!("{:?}", self.noise_sigma),
            format!("{:?}", self.nuisance_sigma),
            format!("{:?}", self.feature_offset),
            format!("{:?}", self.min_lengthscale_m),
            format!("{:?}", self.max_lengthscale_m),
            self.seed.to_string(),
        ];
        WORLD_KEYS
            .iter()
            .zip(vals)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
