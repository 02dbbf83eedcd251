//! `anneal` and `sweep-epsilon`.

use std::path::PathBuf;

use clap::Args;
use headprune::anneal::{run_chains, write_trace, AnnealConfig, AnnealRun, Budget, T0Policy};
use headprune::io::to_delimited;
use headprune::oracle::SyntheticObjective;
use headprune::pareto::dominates;
use headprune::surrogate::std_dev;
use headprune::sweep::{count_inversions, default_epsilons};
use headprune::{HeadMask, WeightBounds};
use serde::Serialize;

use super::{
    default_threads, join_indices, json_bytes, BoundsArgs, BudgetArgs, Ctx, Selection,
    SurrogateArgs, Surrogates,
};
use crate::config::{pick, pick_list};
use crate::manifest::Recorder;

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[command(flatten)]
    pub surrogates: SurrogateArgs,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Comma-separated seeds, one chain each [default: 0,1,2]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fixed initial temperature [default: estimated from a random walk]
    #[arg(long)]
    pub t0: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ChainSettings {
    bounds: WeightBounds,
    budget: Budget,
    t0: T0Policy,
    seeds: Vec<u64>,
    threads: usize,
    surrogates: [String; 2],
}

struct Prepared {
    surrogates: Surrogates,
    base: AnnealConfig,
    settings: ChainSettings,
}

impl ChainArgs {
    fn prepare(&self, ctx: &Ctx, rec: &mut Recorder, epsilon: f64) -> anyhow::Result<Prepared> {
        let file = &ctx.file;
        let surrogates = self.surrogates.load(rec)?;
        let n = surrogates.width();
        let bounds = self.bounds.resolve(n, file)?;
        let budget = self.budget.resolve(file)?;
        let t0 = match self.t0.or(file.t0) {
            Some(t) => T0Policy::Fixed(t),
            None => T0Policy::default(),
        };
        let base = AnnealConfig {
            t0,
            ..AnnealConfig::new(epsilon, bounds, budget)
        };
        let settings = ChainSettings {
            bounds,
            budget,
            t0,
            seeds: pick_list(
                self.seeds.clone(),
                file.seeds.clone(),
                DEFAULT_SEEDS.to_vec(),
            ),
            threads: pick(self.threads, file.threads, default_threads()).max(1),
            surrogates: surrogates.paths.clone(),
        };
        Ok(Prepared {
            surrogates,
            base,
            settings,
        })
    }
}

#[derive(Debug, Args)]
pub struct AnnealArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Weight of bias in the cost; perplexity gets 1 - epsilon [default: 0.5]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Write one JSON-lines trace per seed into this directory
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Summary JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    best_state: HeadMask,
    best_cost: f64,
    predicted_bias: f64,
    predicted_ppl: f64,
    initial_cost: f64,
    t0: f64,
    t0_fallback: bool,
    iterations: u64,
    accepted: u64,
}

#[derive(Debug, Serialize)]
struct AnnealDetails {
    epsilon: f64,
    bounds: WeightBounds,
    best_seed: u64,
    best_cost: f64,
    predicted_bias: f64,
    predicted_ppl: f64,
    /// Population mean and standard deviation over seeds.
    bias_mean: f64,
    bias_std: f64,
    ppl_mean: f64,
    ppl_std: f64,
    runs: Vec<RunSummary>,
}

fn summarize(run: &AnnealRun, s: &Surrogates) -> anyhow::Result<RunSummary> {
    let (predicted_bias, predicted_ppl) = s.predict(&run.best_state)?;
    Ok(RunSummary {
        seed: run.config.seed,
        best_state: run.best_state.clone(),
        best_cost: run.best_cost,
        predicted_bias,
        predicted_ppl,
        initial_cost: run.initial_cost,
        t0: run.t0,
        t0_fallback: run.t0_fallback,
        iterations: run.iterations,
        accepted: run.accepted,
    })
}

fn record_speed(rec: &mut Recorder, runs: &[AnnealRun], prefix: &str) {
    for r in runs {
        rec.stat(
            &format!("{prefix}seed_{}_states_per_second", r.config.seed),
            r.states_per_second,
        );
    }
}

pub fn anneal(args: &AnnealArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("anneal", &args.out)?;
    let epsilon = pick(args.epsilon, ctx.file.epsilon, DEFAULT_EPSILON);
    let mut p = args.chain.prepare(ctx, &mut rec, epsilon)?;
    p.base.record_trace = args.trace_dir.is_some();
    #[derive(Serialize)]
    struct Resolved<'a> {
        epsilon: f64,
        #[serde(flatten)]
        chain: &'a ChainSettings,
    }
    rec.config(&Resolved {
        epsilon,
        chain: &p.settings,
    })?;

    let s = &p.surrogates;
    let results = run_chains(
        &p.base,
        &p.settings.seeds,
        p.settings.threads,
        &s.bias.model,
        &s.ppl.model,
    )?;
    record_speed(&mut rec, &results.runs, "");
    if let Some(dir) = &args.trace_dir {
        for r in &results.runs {
            let path = dir.join(format!("seed-{}.jsonl", r.config.seed));
            write_trace(&path, r)?;
            rec.wrote(&path);
        }
    }

    let runs: Vec<RunSummary> = results
        .runs
        .iter()
        .map(|r| summarize(r, s))
        .collect::<anyhow::Result<_>>()?;
    let best = results.best_run();
    let (bias, ppl) = s.predict(&best.best_state)?;
    let biases: Vec<f64> = runs.iter().map(|r| r.predicted_bias).collect();
    let ppls: Vec<f64> = runs.iter().map(|r| r.predicted_ppl).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let details = AnnealDetails {
        epsilon,
        bounds: p.settings.bounds,
        best_seed: best.config.seed,
        best_cost: best.best_cost,
        predicted_bias: bias,
        predicted_ppl: ppl,
        bias_mean: mean(&biases),
        bias_std: std_dev(&biases),
        ppl_mean: mean(&ppls),
        ppl_std: std_dev(&ppls),
        runs,
    };
    println!(
        "best mask (seed {}, cost {:.3}): {}",
        details.best_seed, details.best_cost, best.best_state
    );
    let pruned: Vec<usize> = best.best_state.ones_iter().collect();
    println!("pruned heads ({}): {}", pruned.len(), join_indices(&pruned));
    println!("predicted bias {bias:.3}, perplexity {ppl:.3}");
    println!(
        "over {} seeds: bias {:.3} ± {:.3}, perplexity {:.3} ± {:.3}",
        biases.len(),
        details.bias_mean,
        details.bias_std,
        details.ppl_mean,
        details.ppl_std
    );
    let selection = Selection::new(
        "ap",
        best.best_state.clone(),
        serde_json::to_value(&details)?,
        rec.reference(),
    );
    rec.write(&args.out, &json_bytes(&selection)?)?;
    rec.finish()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Comma-separated cost weights [default: 0.3,0.4,0.5,0.6,0.7]
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<f64>,
    /// Also evaluate every best state on this synthetic objective
    #[arg(long)]
    pub objective: Option<PathBuf>,
    /// Delimited output, one row per (epsilon, seed)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    epsilon: f64,
    seed: u64,
    best_cost: f64,
    predicted_bias: f64,
    predicted_ppl: f64,
    true_bias: Option<f64>,
    true_ppl: Option<f64>,
    /// Lowest cost among the seeds at this epsilon.
    epsilon_best: bool,
    /// Not dominated by another epsilon's best row.
    nondominated: bool,
    mask: HeadMask,
}

impl SweepRow {
    /// True metrics when available, otherwise the surrogate predictions.
    fn point(&self) -> (f64, f64) {
        match (self.true_bias, self.true_ppl) {
            (Some(b), Some(p)) => (b, p),
            _ => (self.predicted_bias, self.predicted_ppl),
        }
    }
}

pub fn sweep(args: &SweepArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("sweep-epsilon", &args.out)?;
    let epsilons = pick_list(
        args.epsilons.clone(),
        ctx.file.epsilons.clone(),
        default_epsilons(),
    );
    let p = args.chain.prepare(ctx, &mut rec, epsilons[0])?;
    let objective = match &args.objective {
        Some(path) => {
            rec.input(path)?;
            let obj = SyntheticObjective::from_path(path)?;
            if obj.n != p.surrogates.width() {
                return Err(headprune::Error::Dimension {
                    expected: p.surrogates.width(),
                    actual: obj.n,
                }
                .into());
            }
            Some(obj)
        }
        None => None,
    };
    #[derive(Serialize)]
    struct Resolved<'a> {
        epsilons: &'a [f64],
        objective: Option<String>,
        #[serde(flatten)]
        chain: &'a ChainSettings,
    }
    rec.config(&Resolved {
        epsilons: &epsilons,
        objective: args.objective.as_ref().map(|p| p.display().to_string()),
        chain: &p.settings,
    })?;

    let s = &p.surrogates;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &epsilon in &epsilons {
        let cfg = AnnealConfig {
            epsilon,
            ..p.base.clone()
        };
        let results = run_chains(
            &cfg,
            &p.settings.seeds,
            p.settings.threads,
            &s.bias.model,
            &s.ppl.model,
        )?;
        record_speed(&mut rec, &results.runs, &format!("epsilon_{epsilon}_"));
        let best_seed = results.best_run().config.seed;
        for r in &results.runs {
            let (predicted_bias, predicted_ppl) = s.predict(&r.best_state)?;
            let truth = objective
                .as_ref()
                .map(|o| o.evaluate(&r.best_state))
                .transpose()?;
            rows.push(SweepRow {
                epsilon,
                seed: r.config.seed,
                best_cost: r.best_cost,
                predicted_bias,
                predicted_ppl,
                true_bias: truth.map(|e| e.bias),
                true_ppl: truth.map(|e| e.ppl),
                epsilon_best: r.config.seed == best_seed,
                nondominated: false,
                mask: r.best_state.clone(),
            });
        }
    }
    let best_points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.epsilon_best)
        .map(SweepRow::point)
        .collect();
    for r in rows.iter_mut().filter(|r| r.epsilon_best) {
        let pt = r.point();
        r.nondominated = !best_points.iter().any(|&q| dominates(q, pt));
    }

    let label = if objective.is_some() {
        "true"
    } else {
        "predicted"
    };
    println!(
        "{:>7}  {:>8}  {:>10}  {:>5}  pareto ({label})",
        "epsilon", "bias", "perplexity", "seed"
    );
    for r in rows.iter().filter(|r| r.epsilon_best) {
        let (b, p) = r.point();
        println!(
            "{:>7.3}  {:>8.3}  {:>10.3}  {:>5}  {}",
            r.epsilon,
            b,
            p,
            r.seed,
            if r.nondominated { "yes" } else { "no" }
        );
    }
    if objective.is_some() {
        let inversions: usize = p
            .settings
            .seeds
            .iter()
            .map(|&seed| {
                let seq: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.seed == seed)
                    .filter_map(|r| r.true_bias)
                    .collect();
                count_inversions(&seq)
            })
            .sum();
        println!("true-bias increases along epsilon, summed over seeds: {inversions}");
        rec.stat("true_bias_inversions", inversions);
    }
    let comment = format!("manifest: {}", rec.reference());
    rec.write(&args.out, &to_delimited(&rows, Some(&comment))?)?;
    rec.finish()?;
    Ok(())
}
