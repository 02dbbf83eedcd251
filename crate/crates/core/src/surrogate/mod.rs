//! Regressors that stand in for measured bias and perplexity.

mod arch;
mod network;
mod preprocess;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use arch::{default_layer_sizes, family, parse_layer_sizes, ModelFamily, MODEL_FAMILIES};
pub use network::{SurrogateRegressor, PREDICTION_RANGE};
pub use preprocess::{
    clamp_threshold, preprocess, read_corpus, std_dev, SampleRecord, ScalingSpec, TrainingCorpus,
};
pub use train::{finite_diff_check, train, EpochStats, FdReport, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SURROGATE_FORMAT: &str = "headprune-surrogate";
pub const SURROGATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Bias,
    Ppl,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Bias => "bias",
            Target::Ppl => "ppl",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bias" => Ok(Target::Bias),
            "ppl" | "perplexity" => Ok(Target::Ppl),
            _ => Err(Error::config(format!("unknown target {s:?}"))),
        }
    }
}

/// On-disk container for one trained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFile {
    pub format: String,
    pub version: u32,
    pub target: Target,
    pub scaling: ScalingSpec,
    pub model: SurrogateRegressor,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub report: Option<TrainReport>,
    /// Path of the run manifest that produced this file.
    #[serde(default)]
    pub manifest: Option<String>,
}

impl SurrogateFile {
    pub fn new(target: Target, scaling: ScalingSpec, model: SurrogateRegressor) -> Self {
        Self {
            format: SURROGATE_FORMAT.to_string(),
            version: SURROGATE_VERSION,
            target,
            scaling,
            model,
            training: None,
            report: None,
            manifest: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if file.format != SURROGATE_FORMAT || file.version != SURROGATE_VERSION {
            return Err(Error::data(format!(
                "{}: unsupported container {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        Ok(file)
    }
}
