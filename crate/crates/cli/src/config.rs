//! Flat `key = value` configuration files and flag/file/default resolution.
//! Command-line flags override file values, which override built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// All keys a configuration file may define.
pub const KNOWN_KEYS: &[&str] = &[
    "agg",
    "bins",
    "count",
    "data",
    "frames_max",
    "frames_min",
    "head_dim",
    "heads",
    "heatmaps",
    "layers",
    "model",
    "noise",
    "out",
    "p_encoder",
    "p_input",
    "probs",
    "scales",
    "seed",
    "sentence_agg",
    "subsample",
    "tokens",
    "trials_encoder",
    "trials_input",
    "vocab",
    "workers",
];

/// Parsed configuration file: a flat map of string values.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{source}:{}: expected 'key = value'", idx + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "{source}:{}: unknown key '{key}'",
                    idx + 1
                )));
            }
            values.insert(key, value);
        }
        Ok(FileConfig { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                FileConfig::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }
}

/// Flag value, else file value, else default.
pub fn resolve<T: FromStr + Clone>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(text) => text
            .parse::<T>()
            .map_err(|_| CliError::Config(format!("bad value '{text}' for key '{key}'"))),
        None => Ok(default),
    }
}

/// Flag value, else file value, else an error naming the missing key.
pub fn resolve_required<T: FromStr + Clone>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(text) => text
            .parse::<T>()
            .map_err(|_| CliError::Config(format!("bad value '{text}' for key '{key}'"))),
        None => Err(CliError::Config(format!(
            "missing required setting '{key}' (flag or config file)"
        ))),
    }
}

/// Comma-separated float list, e.g. cluster scales or sweep probabilities.
pub fn parse_float_list(text: &str, key: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad float '{f}' in '{key}'")))
        })
        .collect()
}
