//! Synthetic ground-truth objectives and exhaustive search.
//!
//! An objective maps a mask to `(bias, ppl)` through a baseline, one linear
//! coefficient per head, and sparse pairwise terms that fire only when both
//! heads are pruned. Optional Gaussian noise is added per evaluation: absolute
//! on bias, relative to the baseline on perplexity.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anneal::MaskScorer;
use crate::baselines::{HeadEffect, HeadEffectTable};
use crate::error::{check_width, Error, Result};
use crate::io::write_atomic;
use crate::mask::{random_state, HeadMask, WeightBounds};
use crate::pareto::{Frontier, FrontierPoint};
use crate::surrogate::{SampleRecord, ScalingSpec, Target};

pub const BIAS_RANGE: (f64, f64) = (0.0, 1.2);
pub const PPL_FLOOR: f64 = 1.0;
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObjective {
    pub n: usize,
    pub baseline_bias: f64,
    pub baseline_ppl: f64,
    pub linear_bias: Vec<f64>,
    pub linear_ppl: Vec<f64>,
    #[serde(default)]
    pub pairwise_bias: Vec<Interaction>,
    #[serde(default)]
    pub pairwise_ppl: Vec<Interaction>,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bias: f64,
    pub ppl: f64,
}

impl SyntheticObjective {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("objective needs at least one head"));
        }
        if self.linear_bias.len() != self.n || self.linear_ppl.len() != self.n {
            return Err(Error::config(format!(
                "objective over {} heads has {} bias and {} perplexity coefficients",
                self.n,
                self.linear_bias.len(),
                self.linear_ppl.len()
            )));
        }
        for t in self.pairwise_bias.iter().chain(&self.pairwise_ppl) {
            if t.i >= self.n || t.j >= self.n || t.i == t.j {
                return Err(Error::config(format!(
                    "interaction ({}, {}) invalid for {} heads",
                    t.i, t.j, self.n
                )));
            }
        }
        let all = [self.baseline_bias, self.baseline_ppl, self.noise_sigma]
            .into_iter()
            .chain(self.linear_bias.iter().copied())
            .chain(self.linear_ppl.iter().copied())
            .chain(
                self.pairwise_bias
                    .iter()
                    .chain(&self.pairwise_ppl)
                    .map(|t| t.weight),
            );
        if all.into_iter().any(|v| !v.is_finite()) || self.noise_sigma < 0.0 {
            return Err(Error::config(
                "objective has a non-finite coefficient or negative noise",
            ));
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let obj: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        obj.validate()?;
        Ok(obj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    fn raw(&self, s: &HeadMask) -> (f64, f64) {
        let mut bias = self.baseline_bias;
        let mut ppl = self.baseline_ppl;
        for h in s.ones_iter() {
            bias += self.linear_bias[h];
            ppl += self.linear_ppl[h];
        }
        for t in &self.pairwise_bias {
            if s.get(t.i) && s.get(t.j) {
                bias += t.weight;
            }
        }
        for t in &self.pairwise_ppl {
            if s.get(t.i) && s.get(t.j) {
                ppl += t.weight;
            }
        }
        (bias, ppl)
    }

    fn clamp(bias: f64, ppl: f64) -> Evaluation {
        Evaluation {
            bias: bias.clamp(BIAS_RANGE.0, BIAS_RANGE.1),
            ppl: ppl.max(PPL_FLOOR),
        }
    }

    /// Noise-free evaluation.
    pub fn evaluate(&self, s: &HeadMask) -> Result<Evaluation> {
        check_width(self.n, s.len())?;
        let (b, p) = self.raw(s);
        Ok(Self::clamp(b, p))
    }

    /// Evaluation with the configured observation noise.
    pub fn evaluate_noisy<R: Rng + ?Sized>(&self, s: &HeadMask, rng: &mut R) -> Result<Evaluation> {
        check_width(self.n, s.len())?;
        let (mut b, mut p) = self.raw(s);
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            b += normal.sample(rng);
            p += self.baseline_ppl * normal.sample(rng);
        }
        Ok(Self::clamp(b, p))
    }

    pub fn cost(&self, s: &HeadMask, epsilon: f64, scaling: &ScalingSpec) -> Result<f64> {
        let e = self.evaluate(s)?;
        Ok(weighted(e, epsilon, scaling))
    }

    /// Noise-free scorer for one target in the units given by `scaling`.
    pub fn scorer(&self, target: Target, scaling: ScalingSpec) -> ObjectiveScorer<'_> {
        ObjectiveScorer {
            objective: self,
            target,
            scaling,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }
}

fn weighted(e: Evaluation, epsilon: f64, scaling: &ScalingSpec) -> f64 {
    epsilon * scaling.scale_bias(e.bias) + (1.0 - epsilon) * scaling.scale_ppl(e.ppl)
}

pub struct ObjectiveScorer<'a> {
    objective: &'a SyntheticObjective,
    target: Target,
    scaling: ScalingSpec,
}

impl MaskScorer for ObjectiveScorer<'_> {
    fn width(&self) -> usize {
        self.objective.n
    }

    fn score(&self, s: &HeadMask) -> f64 {
        let (b, p) = self.objective.raw(s);
        let e = SyntheticObjective::clamp(b, p);
        match self.target {
            Target::Bias => self.scaling.scale_bias(e.bias),
            Target::Ppl => self.scaling.scale_ppl(e.ppl),
        }
    }
}

/// Objective families used for verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Independent per-head effects.
    Separable,
    /// Pairs whose joint effect differs from the sum of their single effects.
    Interacting,
    /// Pruning always lowers bias and always raises perplexity.
    Tradeoff,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Preset::Separable),
            "interacting" => Ok(Preset::Interacting),
            "tradeoff" => Ok(Preset::Tradeoff),
            _ => Err(Error::config(format!(
                "unknown preset {s:?}; expected separable, interacting or tradeoff"
            ))),
        }
    }
}

impl Preset {
    pub fn build(self, n: usize, seed: u64) -> Result<SyntheticObjective> {
        if n < 8 && self == Preset::Interacting {
            return Err(Error::config(
                "the interacting preset needs at least 8 heads",
            ));
        }
        if n == 0 {
            return Err(Error::config("objective needs at least one head"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = match self {
            Preset::Separable => separable(n, &mut rng),
            Preset::Interacting => interacting(n, &mut rng),
            Preset::Tradeoff => tradeoff(n, &mut rng),
        };
        obj.validate()?;
        Ok(obj)
    }
}

fn separable(n: usize, rng: &mut ChaCha8Rng) -> SyntheticObjective {
    let linear_bias = (0..n).map(|_| rng.random_range(-0.05..0.03)).collect();
    let mut linear_ppl: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
    let mut heads: Vec<usize> = (0..n).collect();
    heads.shuffle(rng);
    for &h in heads.iter().take((n / 8).max(1)) {
        linear_ppl[h] = rng.random_range(8.0..20.0);
    }
    SyntheticObjective {
        n,
        baseline_bias: 0.45,
        baseline_ppl: 40.0,
        linear_bias,
        linear_ppl,
        pairwise_bias: Vec::new(),
        pairwise_ppl: Vec::new(),
        noise_sigma: 0.0,
    }
}

/// Decoy pairs look best one head at a time but cancel when pruned together;
/// synergy pairs look harmful alone but reduce bias sharply as a pair.
fn interacting(n: usize, rng: &mut ChaCha8Rng) -> SyntheticObjective {
    let mut obj = separable(n, rng);
    let mut heads: Vec<usize> = (0..n).collect();
    heads.shuffle(rng);
    let pairs = (n / 8).max(1);
    let mut it = heads.into_iter();
    for _ in 0..pairs {
        let (a, b) = (it.next().unwrap(), it.next().unwrap());
        for h in [a, b] {
            obj.linear_bias[h] = rng.random_range(-0.08..-0.06);
            obj.linear_ppl[h] = rng.random_range(0.2..1.0);
        }
        obj.pairwise_bias.push(Interaction {
            i: a.min(b),
            j: a.max(b),
            weight: rng.random_range(0.10..0.13),
        });
    }
    for _ in 0..pairs {
        let (a, b) = (it.next().unwrap(), it.next().unwrap());
        for h in [a, b] {
            obj.linear_bias[h] = rng.random_range(0.005..0.015);
            obj.linear_ppl[h] = rng.random_range(0.2..1.0);
        }
        obj.pairwise_bias.push(Interaction {
            i: a.min(b),
            j: a.max(b),
            weight: rng.random_range(-0.16..-0.13),
        });
    }
    obj
}

fn tradeoff(n: usize, rng: &mut ChaCha8Rng) -> SyntheticObjective {
    SyntheticObjective {
        n,
        baseline_bias: 0.45,
        baseline_ppl: 40.0,
        linear_bias: (0..n).map(|_| -rng.random_range(0.005..0.05)).collect(),
        linear_ppl: (0..n).map(|_| rng.random_range(0.5..6.0)).collect(),
        pairwise_bias: Vec::new(),
        pairwise_ppl: Vec::new(),
        noise_sigma: 0.0,
    }
}

/// Samples `count` masks with `random_state` and evaluates them with noise.
pub fn generate_corpus(
    obj: &SyntheticObjective,
    bounds: WeightBounds,
    count: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    obj.validate()?;
    bounds.validate_for(obj.n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mask = random_state(obj.n, bounds, &mut rng)?;
            let e = obj.evaluate_noisy(&mask, &mut rng)?;
            Ok(SampleRecord {
                mask,
                bias: e.bias,
                ppl: e.ppl,
            })
        })
        .collect()
}

/// Single-head ablation effects: baseline minus the value with one head pruned.
pub fn head_effects(obj: &SyntheticObjective) -> Result<HeadEffectTable> {
    let base = obj.evaluate(&HeadMask::zeros(obj.n))?;
    let rows = (0..obj.n)
        .map(|h| {
            let e = obj.evaluate(&HeadMask::from_indices(obj.n, [h])?)?;
            Ok(HeadEffect {
                head_index: h,
                z_bias: base.bias - e.bias,
                z_ppl: base.ppl - e.ppl,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HeadEffectTable::new(rows)
}

/// Number of masks with weight in `bounds`.
pub fn state_count(n: usize, bounds: WeightBounds) -> u128 {
    (bounds.lower()..=bounds.upper().min(n))
        .map(|k| binomial(n as u128, k as u128))
        .fold(0u128, |a, b| a.saturating_add(b))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub best_state: HeadMask,
    pub best_cost: f64,
    pub best: Evaluation,
    pub states: u128,
    pub frontier: Vec<FrontierPoint<HeadMask>>,
}

struct Partial {
    best: Option<(f64, HeadMask, Evaluation)>,
    states: u128,
    frontier: Frontier<HeadMask>,
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn search_weight(
    obj: &SyntheticObjective,
    k: usize,
    epsilon: f64,
    scaling: &ScalingSpec,
) -> Partial {
    let mut part = Partial {
        best: None,
        states: 0,
        frontier: Frontier::new(),
    };
    let mut mask = HeadMask::zeros(obj.n);
    let mut prev: Vec<usize> = Vec::with_capacity(k);
    for_each_combination(obj.n, k, |idx| {
        for &h in &prev {
            mask.set(h, false);
        }
        for &h in idx {
            mask.set(h, true);
        }
        prev.clear();
        prev.extend_from_slice(idx);
        let (b, p) = obj.raw(&mask);
        let e = SyntheticObjective::clamp(b, p);
        let c = weighted(e, epsilon, scaling);
        part.states += 1;
        if part.best.as_ref().is_none_or(|(bc, _, _)| c < *bc) {
            part.best = Some((c, mask.clone(), e));
        }
        part.frontier.insert(e.bias, e.ppl, mask.clone());
    });
    part
}

/// Enumerates every mask within `bounds`. Weights are searched on separate
/// threads and merged in weight order, so the result is deterministic: ties
/// in cost go to the first mask in (weight, lexicographic) order.
pub fn exhaustive_search(
    obj: &SyntheticObjective,
    bounds: WeightBounds,
    epsilon: f64,
    scaling: &ScalingSpec,
) -> Result<ExhaustiveResult> {
    obj.validate()?;
    bounds.validate_for(obj.n)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("epsilon {epsilon} not in [0, 1]")));
    }
    let count = state_count(obj.n, bounds);
    if count > ENUMERATION_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let partials: Vec<Partial> = std::thread::scope(|scope| {
        let handles: Vec<_> = (bounds.lower()..=bounds.upper())
            .map(|k| scope.spawn(move || search_weight(obj, k, epsilon, scaling)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("enumeration worker panicked"))
            .collect()
    });
    let mut best: Option<(f64, HeadMask, Evaluation)> = None;
    let mut states = 0;
    let mut frontier = Frontier::new();
    for part in partials {
        states += part.states;
        if let Some(pb) = part.best {
            if best.as_ref().is_none_or(|b| pb.0 < b.0) {
                best = Some(pb);
            }
        }
        frontier.extend(part.frontier);
    }
    let (best_cost, best_state, best_eval) = best.expect("bounds admit at least one state");
    Ok(ExhaustiveResult {
        best_state,
        best_cost,
        best: best_eval,
        states,
        frontier: frontier.into_points(),
    })
}
