//! Runs the annealer across several cost weights and seeds.

use serde::{Deserialize, Serialize};

use crate::anneal::{run_chains, AnnealConfig, MaskScorer};
use crate::error::{Error, Result};
use crate::mask::HeadMask;

/// The weight grid `0.3, 0.4, .., 0.7`.
pub fn default_epsilons() -> Vec<f64> {
    (3..=7).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub seed: u64,
    pub best_state: HeadMask,
    pub best_cost: f64,
    /// Scorer outputs for the best state, in scaled units.
    pub predicted_bias: f64,
    pub predicted_ppl: f64,
}

/// One chain per `(epsilon, seed)`; points are ordered by epsilon, then seed.
pub fn sweep(
    base: &AnnealConfig,
    epsilons: &[f64],
    seeds: &[u64],
    threads: usize,
    bias: &dyn MaskScorer,
    ppl: &dyn MaskScorer,
) -> Result<Vec<SweepPoint>> {
    if epsilons.is_empty() {
        return Err(Error::config("epsilon list is empty"));
    }
    let mut out = Vec::new();
    for &epsilon in epsilons {
        let cfg = AnnealConfig {
            epsilon,
            ..base.clone()
        };
        let results = run_chains(&cfg, seeds, threads, bias, ppl)?;
        for run in results.runs {
            out.push(SweepPoint {
                epsilon,
                seed: run.config.seed,
                predicted_bias: bias.score(&run.best_state),
                predicted_ppl: ppl.score(&run.best_state),
                best_state: run.best_state,
                best_cost: run.best_cost,
            });
        }
    }
    Ok(out)
}

/// Number of adjacent pairs where the value goes up.
pub fn count_inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}
