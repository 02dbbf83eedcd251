//! Comparison pruning strategies: FASP, score ranking, and random pruning.
//!
//! FASP works from single-head ablation effects. `z_bias(h)` is the baseline
//! bias minus the bias with head `h` removed, and `z_ppl(h)` is the baseline
//! perplexity minus the perplexity with `h` removed. A large negative `z_ppl`
//! means removing the head hurts language modeling badly.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mask::{random_state, HeadMask, WeightBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadEffect {
    pub head_index: usize,
    pub z_bias: f64,
    pub z_ppl: f64,
}

/// One row per head, indexed densely from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEffectTable {
    rows: Vec<HeadEffect>,
}

impl HeadEffectTable {
    /// Accepts rows in any order; requires exactly one row per index in `[0, N)`.
    pub fn new(mut rows: Vec<HeadEffect>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("head effect table is empty"));
        }
        rows.sort_by_key(|r| r.head_index);
        for (i, r) in rows.iter().enumerate() {
            if r.head_index != i {
                return Err(Error::data(format!(
                    "head indices must cover 0..{} exactly once; found {} at position {i}",
                    rows.len(),
                    r.head_index
                )));
            }
            if !r.z_bias.is_finite() || !r.z_ppl.is_finite() {
                return Err(Error::validation(format!(
                    "head {i} has a non-finite effect"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(io::read_records(path)?)
    }

    pub fn to_delimited(&self) -> Result<Vec<u8>> {
        io::to_delimited(&self.rows, None)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[HeadEffect] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub head_index: usize,
    pub score: f64,
}

/// Reads a `head_index,score` file into a dense vector indexed by head.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut rows: Vec<HeadScore> = io::read_records(path)?;
    rows.sort_by_key(|r| r.head_index);
    for (i, r) in rows.iter().enumerate() {
        if r.head_index != i {
            return Err(Error::data(format!(
                "{}: score indices must cover 0..{} exactly once",
                path.display(),
                rows.len()
            )));
        }
        if !r.score.is_finite() {
            return Err(Error::validation(format!(
                "head {i} has a non-finite score"
            )));
        }
    }
    Ok(rows.into_iter().map(|r| r.score).collect())
}

/// `floor(ratio * n)`, robust to products like `0.7 * 10 = 6.999..`.
pub fn ratio_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor().max(0.0) as usize
}

/// The prune-ratio grid searched for the best FASP configuration.
pub fn alpha_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 0.02).collect()
}

pub const DEFAULT_GAMMA: f64 = 0.3;

/// Protected-head ratio used for a model family.
pub fn default_gamma(model: &str) -> f64 {
    if model.eq_ignore_ascii_case("gpt-neo-1.3b") {
        0.6
    } else {
        DEFAULT_GAMMA
    }
}

/// How the protected set is read off the `z_ppl` column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalOrder {
    /// Protect the heads whose removal raises perplexity the most
    /// (most negative `z_ppl` first).
    #[default]
    Degradation,
    /// Protect the heads with the largest raw `z_ppl`.
    RawDescending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaspConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub order: CriticalOrder,
}

impl FaspConfig {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            order: CriticalOrder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaspSelection {
    pub pruned: HeadMask,
    pub protected: HeadMask,
}

/// Sorts head indices by `key` descending, ties to the lower index.
fn ranked(indices: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v: Vec<usize> = indices.collect();
    v.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    v
}

pub fn fasp_select(effects: &HeadEffectTable, cfg: &FaspConfig) -> Result<FaspSelection> {
    for (name, v) in [("alpha", cfg.alpha), ("gamma", cfg.gamma)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(format!("{name} {v} not in [0, 1]")));
        }
    }
    let n = effects.len();
    let n_protected = ratio_count(cfg.gamma, n);
    let n_pruned = ratio_count(cfg.alpha, n);
    if n_pruned > n - n_protected {
        return Err(Error::config(format!(
            "cannot prune {n_pruned} heads when {n_protected} of {n} are protected"
        )));
    }
    let rows = effects.rows();
    let critical = match cfg.order {
        CriticalOrder::Degradation => ranked(0..n, |h| -rows[h].z_ppl),
        CriticalOrder::RawDescending => ranked(0..n, |h| rows[h].z_ppl),
    };
    let protected = HeadMask::from_indices(n, critical[..n_protected].iter().copied())?;
    let candidates = ranked((0..n).filter(|&h| !protected.get(h)), |h| rows[h].z_bias);
    let pruned = HeadMask::from_indices(n, candidates[..n_pruned].iter().copied())?;
    Ok(FaspSelection { pruned, protected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    PruneLowest,
    PruneHighest,
}

/// Prunes `floor(alpha * N)` heads by rank of `scores`; ties go to the lower index.
pub fn score_ranked_select(scores: &[f64], alpha: f64, direction: Direction) -> Result<HeadMask> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} not in [0, 1]")));
    }
    let n = scores.len();
    let k = ratio_count(alpha, n);
    let order = match direction {
        Direction::PruneLowest => ranked(0..n, |h| -scores[h]),
        Direction::PruneHighest => ranked(0..n, |h| scores[h]),
    };
    HeadMask::from_indices(n, order[..k].iter().copied())
}

/// Uniform weight in `[1, floor(alpha_max * N)]`, then uniform heads.
pub fn random_select<R: Rng + ?Sized>(n: usize, alpha_max: f64, rng: &mut R) -> Result<HeadMask> {
    if !(alpha_max > 0.0 && alpha_max <= 1.0) {
        return Err(Error::config(format!(
            "alpha_max {alpha_max} not in (0, 1]"
        )));
    }
    let upper = ratio_count(alpha_max, n);
    if upper == 0 {
        return Err(Error::config(format!(
            "alpha_max {alpha_max} allows no pruned head out of {n}"
        )));
    }
    random_state(n, WeightBounds::new(1, upper)?, rng)
}
