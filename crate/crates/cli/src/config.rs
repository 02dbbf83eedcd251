//! Flat TOML defaults file.
//!
//! Every key is optional and shared across commands. A value given on the
//! command line wins over the file, and the file wins over built-in defaults.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::path::Path;

use headprune::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epsilon: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    pub eta: Option<f64>,
    pub iterations: Option<u64>,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub t0: Option<f64>,
    pub sigma: Option<f64>,
    pub split: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub arch: Option<String>,
    pub model: Option<String>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub samples: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }
}

/// Command-line value, then config-file value, then the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] for list-valued flags, where an empty list means "not given".
pub fn pick_list<T>(flag: Vec<T>, file: Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
    if !flag.is_empty() {
        flag
    } else {
        file.unwrap_or(default)
    }
}
