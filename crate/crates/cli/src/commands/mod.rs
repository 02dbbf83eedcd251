//! Shared argument groups and helpers for the subcommands.

pub mod baselines;
pub mod oracle;
pub mod replay;
pub mod report;
pub mod search;
pub mod train;

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use headprune::anneal::Budget;
use headprune::surrogate::{SurrogateFile, Target};
use headprune::{Error, HeadMask, WeightBounds};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::{pick, FileConfig};
use crate::manifest::{default_path, Recorder};

pub const BIAS_SURROGATE: &str = "bias.surrogate.json";
pub const PPL_SURROGATE: &str = "ppl.surrogate.json";
pub const DEFAULT_ETA: f64 = 0.2;
pub const DEFAULT_ITERATIONS: u64 = 100_000;

pub struct Ctx {
    pub file: FileConfig,
    pub config_path: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub argv: Vec<String>,
}

impl Ctx {
    /// Starts a manifest for a command whose main artifact is `primary`.
    pub fn recorder(&self, command: &str, primary: &Path) -> Result<Recorder, Error> {
        let path = self
            .manifest
            .clone()
            .unwrap_or_else(|| default_path(primary));
        let mut rec = Recorder::new(command, &self.argv, path);
        if let Some(c) = &self.config_path {
            rec.input(c)?;
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct BoundsArgs {
    /// Minimum number of pruned heads [default: 0]
    #[arg(long)]
    pub lower: Option<usize>,
    /// Maximum number of pruned heads
    #[arg(long, conflicts_with = "eta")]
    pub upper: Option<usize>,
    /// Maximum pruned fraction; the upper bound becomes ceil(eta * N) [default: 0.2]
    #[arg(long)]
    pub eta: Option<f64>,
}

impl BoundsArgs {
    pub fn resolve(&self, n: usize, file: &FileConfig) -> Result<WeightBounds, Error> {
        let lower = pick(self.lower, file.lower, 0);
        let (upper, eta) = if self.upper.is_some() || self.eta.is_some() {
            (self.upper, self.eta)
        } else {
            (file.upper, file.eta)
        };
        let bounds = match (upper, eta) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either an upper bound or eta, not both".into(),
                ))
            }
            (Some(u), None) => WeightBounds::new(lower, u)?,
            (None, Some(eta)) => WeightBounds::from_ratio(lower, eta, n)?,
            (None, None) => WeightBounds::from_ratio(lower, DEFAULT_ETA, n)?,
        };
        bounds.validate_for(n)?;
        Ok(bounds)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct BudgetArgs {
    /// Iterations per chain [default: 100000]
    #[arg(long, conflicts_with = "time_limit")]
    pub iterations: Option<u64>,
    /// Wall-clock limit per chain, in seconds
    #[arg(long)]
    pub time_limit: Option<f64>,
}

impl BudgetArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<Budget, Error> {
        let (iterations, secs) = if self.iterations.is_some() || self.time_limit.is_some() {
            (self.iterations, self.time_limit)
        } else {
            (file.iterations, file.time_limit)
        };
        match (iterations, secs) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give either an iteration budget or a time limit, not both".into(),
            )),
            (Some(i), None) => Ok(Budget::Iterations(i)),
            (None, Some(s)) => Duration::try_from_secs_f64(s)
                .map(Budget::WallClock)
                .map_err(|_| Error::Config(format!("time limit {s} is not a valid duration"))),
            (None, None) => Ok(Budget::Iterations(DEFAULT_ITERATIONS)),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SurrogateArgs {
    /// Directory holding bias.surrogate.json and ppl.surrogate.json
    #[arg(long)]
    pub surrogates: Option<PathBuf>,
    /// Bias regressor file; overrides the one in --surrogates
    #[arg(long)]
    pub bias_surrogate: Option<PathBuf>,
    /// Perplexity regressor file; overrides the one in --surrogates
    #[arg(long)]
    pub ppl_surrogate: Option<PathBuf>,
}

pub struct Surrogates {
    pub bias: SurrogateFile,
    pub ppl: SurrogateFile,
    pub paths: [String; 2],
}

impl SurrogateArgs {
    pub fn given(&self) -> bool {
        self.surrogates.is_some() || self.bias_surrogate.is_some() || self.ppl_surrogate.is_some()
    }

    pub fn load(&self, rec: &mut Recorder) -> Result<Surrogates, Error> {
        let from_dir = |name: &str| self.surrogates.as_ref().map(|d| d.join(name));
        let bias = self
            .bias_surrogate
            .clone()
            .or_else(|| from_dir(BIAS_SURROGATE));
        let ppl = self
            .ppl_surrogate
            .clone()
            .or_else(|| from_dir(PPL_SURROGATE));
        let (Some(bias_path), Some(ppl_path)) = (bias, ppl) else {
            return Err(Error::Config(
                "both surrogates are required: pass --surrogates DIR or --bias-surrogate and --ppl-surrogate".into(),
            ));
        };
        let load = |path: &Path, target: Target| -> Result<SurrogateFile, Error> {
            let f = SurrogateFile::load(path)?;
            if f.target != target {
                return Err(Error::Config(format!(
                    "{} holds a {} regressor, expected {target}",
                    path.display(),
                    f.target
                )));
            }
            Ok(f)
        };
        let b = load(&bias_path, Target::Bias)?;
        let p = load(&ppl_path, Target::Ppl)?;
        if b.model.input_width() != p.model.input_width() {
            return Err(Error::Dimension {
                expected: b.model.input_width(),
                actual: p.model.input_width(),
            });
        }
        if b.scaling != p.scaling {
            warn!("surrogates were trained with different scaling; using each file's own");
        }
        rec.input(&bias_path)?;
        rec.input(&ppl_path)?;
        Ok(Surrogates {
            bias: b,
            ppl: p,
            paths: [
                bias_path.display().to_string(),
                ppl_path.display().to_string(),
            ],
        })
    }
}

impl Surrogates {
    pub fn width(&self) -> usize {
        self.bias.model.input_width()
    }

    /// Predicted bias and perplexity in the original units.
    pub fn predict(&self, mask: &HeadMask) -> Result<(f64, f64), Error> {
        Ok((
            self.bias
                .scaling
                .unscale_bias(self.bias.model.predict(mask)?),
            self.ppl.scaling.unscale_ppl(self.ppl.model.predict(mask)?),
        ))
    }
}

/// A chosen set of pruned heads. Anneal, FASP, select and exhaustive outputs
/// all carry at least `method` and `mask`, so any of them can be scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub method: String,
    pub mask: HeadMask,
    #[serde(default)]
    pub pruned: Vec<usize>,
    #[serde(default)]
    pub details: serde_json::Value,
    #[serde(default)]
    pub manifest: Option<String>,
}

impl Selection {
    pub fn new(method: &str, mask: HeadMask, details: serde_json::Value, manifest: String) -> Self {
        Self {
            method: method.to_string(),
            pruned: mask.ones_iter().collect(),
            mask,
            details,
            manifest: Some(manifest),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn join_indices(indices: &[usize]) -> String {
    if indices.is_empty() {
        return "none".to_string();
    }
    indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
