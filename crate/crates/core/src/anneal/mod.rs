//! Simulated annealing over head masks.
//!
//! A chain starts from a random state inside the weight bounds, proposes one
//! neighbor per iteration, and cools as `T0 / ln(2 + i)`. The best state seen
//! is tracked separately from the chain's current state, starting from the
//! all-zero mask (the unpruned model) whenever the bounds allow it.

mod cost;
mod schedule;
mod trace;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cost::{cost, FnScorer, MaskScorer, WeightedCost};
pub use schedule::{
    accept, acceptance_ratio, estimate_t0, solve_t0, temperature, T0Estimate, T0Settings,
    T0_FALLBACK,
};
pub use trace::{trace_records, write_trace, TraceRecord};

use crate::error::{check_width, Error, Result};
use crate::mask::{generate_neighbor, random_state, HeadMask, WeightBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    WallClock(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T0Policy {
    Fixed(f64),
    Estimate(T0Settings),
}

impl Default for T0Policy {
    fn default() -> Self {
        T0Policy::Estimate(T0Settings::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub epsilon: f64,
    pub bounds: WeightBounds,
    pub budget: Budget,
    pub t0: T0Policy,
    pub seed: u64,
    /// Keep one record per iteration.
    pub record_trace: bool,
    /// Starting state; drawn with `random_state` when absent.
    pub initial: Option<HeadMask>,
}

impl AnnealConfig {
    pub fn new(epsilon: f64, bounds: WeightBounds, budget: Budget) -> Self {
        Self {
            epsilon,
            bounds,
            budget,
            t0: T0Policy::default(),
            seed: 0,
            record_trace: false,
            initial: None,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon {} not in [0, 1]",
                self.epsilon
            )));
        }
        self.bounds.validate_for(n)?;
        match self.budget {
            Budget::Iterations(0) => {
                return Err(Error::config("iteration budget must be positive"))
            }
            Budget::WallClock(d) if d.is_zero() => {
                return Err(Error::config("time limit must be positive"))
            }
            _ => {}
        }
        if let T0Policy::Fixed(t) = self.t0 {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!(
                    "initial temperature {t} must be positive"
                )));
            }
        }
        if let Some(s) = &self.initial {
            check_width(n, s.len())?;
            if !self.bounds.contains(s.weight()) {
                return Err(Error::config(format!(
                    "initial state weight {} outside bounds [{}, {}]",
                    s.weight(),
                    self.bounds.lower(),
                    self.bounds.upper()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: u64,
    pub temperature: f64,
    pub proposed: HeadMask,
    pub proposed_cost: f64,
    pub delta_e: f64,
    pub accepted: bool,
    /// Cost of the chain's state after the accept/reject decision.
    pub current_cost: f64,
}

/// A new best cost, found at `iteration` after `elapsed_secs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub iteration: u64,
    pub elapsed_secs: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealRun {
    pub config: AnnealConfig,
    pub best_state: HeadMask,
    pub best_cost: f64,
    pub initial_state: HeadMask,
    pub initial_cost: f64,
    pub t0: f64,
    pub t0_fallback: bool,
    pub iterations: u64,
    pub accepted: u64,
    pub elapsed_secs: f64,
    pub states_per_second: f64,
    pub improvements: Vec<Improvement>,
    pub trace: Vec<TraceStep>,
}

/// Runs one annealing chain on `epsilon * bias + (1 - epsilon) * ppl`.
pub fn run(
    config: &AnnealConfig,
    bias: &dyn MaskScorer,
    ppl: &dyn MaskScorer,
) -> Result<AnnealRun> {
    let cost = WeightedCost::new(bias, ppl, config.epsilon)?;
    let n = cost.width();
    config.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = Instant::now();

    let initial_state = match &config.initial {
        Some(s) => s.clone(),
        None => random_state(n, config.bounds, &mut rng)?,
    };
    let initial_cost = cost.eval(&initial_state);

    let (t0, t0_fallback) = match config.t0 {
        T0Policy::Fixed(t) => (t, false),
        T0Policy::Estimate(settings) => {
            let est = estimate_t0(&cost, &initial_state, config.bounds, settings, &mut rng)?;
            (est.t0, est.fallback)
        }
    };

    let mut best_state = initial_state.clone();
    let mut best_cost = initial_cost;
    if config.bounds.contains(0) {
        let zero = HeadMask::zeros(n);
        let zero_cost = cost.eval(&zero);
        if zero_cost < best_cost {
            best_state = zero;
            best_cost = zero_cost;
        }
    }
    let mut improvements = vec![Improvement {
        iteration: 0,
        elapsed_secs: start.elapsed().as_secs_f64(),
        cost: best_cost,
    }];

    let mut current = initial_state.clone();
    let mut current_cost = initial_cost;
    let mut trace = Vec::new();
    let mut accepted_count = 0;
    let mut i: u64 = 0;
    let loop_start = Instant::now();
    loop {
        match config.budget {
            Budget::Iterations(limit) if i >= limit => break,
            Budget::WallClock(limit) if start.elapsed() >= limit => break,
            _ => {}
        }
        let t = temperature(t0, i);
        let candidate = generate_neighbor(&current, config.bounds, &mut rng)?;
        let candidate_cost = cost.eval(&candidate);
        let delta_e = candidate_cost - current_cost;
        let accepted = delta_e <= 0.0 || accept(delta_e, t, rng.random());
        if candidate_cost <= best_cost {
            if candidate_cost < best_cost {
                improvements.push(Improvement {
                    iteration: i,
                    elapsed_secs: start.elapsed().as_secs_f64(),
                    cost: candidate_cost,
                });
            }
            best_cost = candidate_cost;
            best_state.clone_from(&candidate);
        }
        if config.record_trace {
            trace.push(TraceStep {
                iteration: i,
                temperature: t,
                proposed: candidate.clone(),
                proposed_cost: candidate_cost,
                delta_e,
                accepted,
                current_cost: if accepted {
                    candidate_cost
                } else {
                    current_cost
                },
            });
        }
        if accepted {
            accepted_count += 1;
            current = candidate;
            current_cost = candidate_cost;
        }
        i += 1;
    }
    let loop_secs = loop_start.elapsed().as_secs_f64();
    Ok(AnnealRun {
        config: config.clone(),
        best_state,
        best_cost,
        initial_state,
        initial_cost,
        t0,
        t0_fallback,
        iterations: i,
        accepted: accepted_count,
        elapsed_secs: start.elapsed().as_secs_f64(),
        states_per_second: if loop_secs > 0.0 {
            i as f64 / loop_secs
        } else {
            0.0
        },
        improvements,
        trace,
    })
}

/// Results of independent chains, sorted by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResults {
    pub runs: Vec<AnnealRun>,
    /// Index of the lowest-cost run; ties go to the smaller seed.
    pub best: usize,
}

impl ChainResults {
    pub fn best_run(&self) -> &AnnealRun {
        &self.runs[self.best]
    }
}

/// Runs one chain per seed on scoped threads, at most `threads` at a time.
pub fn run_chains(
    config: &AnnealConfig,
    seeds: &[u64],
    threads: usize,
    bias: &dyn MaskScorer,
    ppl: &dyn MaskScorer,
) -> Result<ChainResults> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let threads = threads.max(1);
    let mut runs = Vec::with_capacity(seeds.len());
    for batch in seeds.chunks(threads) {
        let results: Vec<Result<AnnealRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&seed| {
                    let cfg = AnnealConfig {
                        seed,
                        ..config.clone()
                    };
                    scope.spawn(move || run(&cfg, bias, ppl))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("annealing chain panicked"))
                .collect()
        });
        for r in results {
            runs.push(r?);
        }
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_cost.total_cmp(&b.1.best_cost))
        .map(|(i, _)| i)
        .unwrap();
    Ok(ChainResults { runs, best })
}
