//! Run configuration files.
//!
//! A config file is TOML restricted to a fixed set of keys; `llm.*` keys may
//! be written dotted or as an `[llm]` table. Unset keys take their defaults,
//! unknown keys are rejected. `profile` (if present) seeds the stitch
//! settings from a named preset before the other keys apply.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::layout::DEFAULT_API_KEY_ENV;
use crate::pipeline::StitchConfig;

pub const KEYS: [&str; 17] = [
    "profile",
    "s_steps",
    "t_steps",
    "eta",
    "kappa",
    "canvas",
    "cutout_block",
    "cutout_head",
    "shared_noise",
    "seed",
    "head_eta",
    "restrict_to_box",
    "parallel_branches",
    "model",
    "llm.base_url",
    "llm.model",
    "llm.api_key_env",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} expects {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub stitch: StitchConfig,
    pub model: String,
    pub llm: LlmSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self { stitch: StitchConfig::default(), model: "toy".into(), llm: LlmSettings::default() }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or(ConfigError::TypeMismatch { key: key.into(), expected: "a non-negative integer" })
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or(ConfigError::TypeMismatch { key: key.into(), expected: "a non-negative integer" })
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::TypeMismatch { key: key.into(), expected: "a number" }),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or(ConfigError::TypeMismatch { key: key.into(), expected: "a boolean" })
}

fn as_string(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str().map(String::from).ok_or(ConfigError::TypeMismatch { key: key.into(), expected: "a string" })
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<AppConfig, ConfigError> {
    let table: Table = text.parse()?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);
    if let Some((key, _)) = entries.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(key.clone()));
    }
    let mut cfg = AppConfig::default();
    if let Some((key, v)) = entries.iter().find(|(k, _)| k == "profile") {
        let name = as_string(key, v)?;
        cfg.stitch =
            StitchConfig::profile(&name).ok_or_else(|| ConfigError::Invalid(format!("unknown profile {name:?}")))?;
    }
    let s = &mut cfg.stitch;
    for (key, v) in &entries {
        match key.as_str() {
            "profile" => {}
            "s_steps" => s.s_steps = as_usize(key, v)?,
            "t_steps" => s.t_steps = as_usize(key, v)?,
            "eta" => s.eta = as_f64(key, v)?,
            "kappa" => s.kappa = as_usize(key, v)?,
            "canvas" => {
                s.canvas =
                    u32::try_from(as_usize(key, v)?).map_err(|_| ConfigError::Invalid("canvas too large".into()))?
            }
            "cutout_block" => s.cutout_block = as_usize(key, v)?,
            "cutout_head" => s.cutout_head = as_usize(key, v)?,
            "shared_noise" => s.shared_noise = as_bool(key, v)?,
            "seed" => s.seed = as_u64(key, v)?,
            "head_eta" => s.head_eta = as_f64(key, v)?,
            "restrict_to_box" => s.restrict_to_box = as_bool(key, v)?,
            "parallel_branches" => s.parallel_branches = as_bool(key, v)?,
            "model" => cfg.model = as_string(key, v)?,
            "llm.base_url" => cfg.llm.base_url = as_string(key, v)?,
            "llm.model" => cfg.llm.model = as_string(key, v)?,
            "llm.api_key_env" => cfg.llm.api_key_env = as_string(key, v)?,
            _ => unreachable!("keys checked above"),
        }
    }
    cfg.stitch.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<AppConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}
