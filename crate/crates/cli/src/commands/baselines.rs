//! `fasp` and `select`.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use headprune::baselines::{
    alpha_grid, default_gamma, fasp_select, random_select, read_scores, score_ranked_select,
    CriticalOrder, Direction, FaspConfig, HeadEffectTable, DEFAULT_GAMMA,
};
use headprune::oracle::SyntheticObjective;
use headprune::surrogate::family;
use headprune::{Error, ErrorKind, HeadMask};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{join_indices, json_bytes, Ctx, Selection, SurrogateArgs, Surrogates};
use crate::config::pick;
use crate::manifest::Recorder;

pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum OrderArg {
    /// Protect the heads whose removal hurts perplexity most
    #[default]
    Degradation,
    /// Protect the heads with the largest raw z_ppl
    Raw,
}

impl From<OrderArg> for CriticalOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Degradation => CriticalOrder::Degradation,
            OrderArg::Raw => CriticalOrder::RawDescending,
        }
    }
}

#[derive(Debug, Args)]
pub struct FaspArgs {
    /// Head-effect table with columns head_index,z_bias,z_ppl
    #[arg(long)]
    pub effects: PathBuf,
    /// Pruned fraction; floor(alpha * N) heads are pruned [default: 0.2]
    #[arg(long, conflicts_with = "sweep_alpha")]
    pub alpha: Option<f64>,
    /// Protected fraction [default: 0.3, or the model family's value]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Model family name, used for its default gamma
    #[arg(long)]
    pub model: Option<String>,
    /// How protected heads are ranked
    #[arg(long, value_enum, default_value_t)]
    pub order: OrderArg,
    /// Try alpha = 0.02, 0.04, .., 0.20 and keep the lowest-bias selection
    #[arg(long)]
    pub sweep_alpha: bool,
    /// Synthetic objective used to score selections
    #[arg(long)]
    pub objective: Option<PathBuf>,
    #[command(flatten)]
    pub surrogates: SurrogateArgs,
    /// Selection JSON
    #[arg(long)]
    pub out: PathBuf,
}

enum Evaluator {
    Objective(SyntheticObjective),
    Surrogates(Box<Surrogates>),
}

impl Evaluator {
    fn load(
        objective: &Option<PathBuf>,
        surrogates: &SurrogateArgs,
        rec: &mut Recorder,
    ) -> Result<Option<Self>, Error> {
        if let Some(path) = objective {
            rec.input(path)?;
            return Ok(Some(Evaluator::Objective(SyntheticObjective::from_path(
                path,
            )?)));
        }
        if surrogates.given() {
            return Ok(Some(Evaluator::Surrogates(Box::new(surrogates.load(rec)?))));
        }
        Ok(None)
    }

    fn width(&self) -> usize {
        match self {
            Evaluator::Objective(o) => o.n,
            Evaluator::Surrogates(s) => s.width(),
        }
    }

    fn evaluate(&self, mask: &HeadMask) -> Result<(f64, f64), Error> {
        match self {
            Evaluator::Objective(o) => o.evaluate(mask).map(|e| (e.bias, e.ppl)),
            Evaluator::Surrogates(s) => s.predict(mask),
        }
    }
}

#[derive(Debug, Serialize)]
struct Candidate {
    alpha: f64,
    bias: f64,
    ppl: f64,
}

#[derive(Debug, Serialize)]
struct FaspDetails {
    alpha: f64,
    gamma: f64,
    order: CriticalOrder,
    protected: Vec<usize>,
    bias: Option<f64>,
    ppl: Option<f64>,
    evaluated_with: Option<&'static str>,
    sweep: Vec<Candidate>,
}

pub fn fasp(args: &FaspArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let file = &ctx.file;
    let mut rec = ctx.recorder("fasp", &args.out)?;
    rec.input(&args.effects)?;
    let effects = HeadEffectTable::from_path(&args.effects)?;
    let n = effects.len();
    let model = args.model.as_deref().or(file.model.as_deref());
    let model_gamma = model
        .map(|m| family(m).map(|f| default_gamma(f.name)))
        .transpose()?;
    let gamma = pick(args.gamma, file.gamma, model_gamma.unwrap_or(DEFAULT_GAMMA));
    let order = CriticalOrder::from(args.order);
    let evaluator = Evaluator::load(&args.objective, &args.surrogates, &mut rec)?;
    if let Some(e) = &evaluator {
        if e.width() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: e.width(),
            }
            .into());
        }
    }

    let config = |alpha: f64| FaspConfig {
        alpha,
        gamma,
        order,
    };
    let (alpha, selection, sweep) = if args.sweep_alpha {
        let Some(eval) = &evaluator else {
            return Err(Error::Config(
                "--sweep-alpha needs --objective or surrogates to score each alpha".into(),
            )
            .into());
        };
        let mut sweep = Vec::new();
        let mut best: Option<(f64, f64, _)> = None;
        for alpha in alpha_grid() {
            let sel = match fasp_select(&effects, &config(alpha)) {
                Ok(s) => s,
                Err(e) if e.kind() == ErrorKind::Config => {
                    warn!("alpha {alpha:.2} skipped: {e}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let (bias, ppl) = eval.evaluate(&sel.pruned)?;
            sweep.push(Candidate { alpha, bias, ppl });
            if best.as_ref().is_none_or(|b| bias < b.0) {
                best = Some((bias, alpha, sel));
            }
        }
        let Some((_, alpha, sel)) = best else {
            return Err(Error::Config(format!(
                "no alpha in the grid is feasible with gamma {gamma}"
            ))
            .into());
        };
        (alpha, sel, sweep)
    } else {
        let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
        (alpha, fasp_select(&effects, &config(alpha))?, Vec::new())
    };

    #[derive(Serialize)]
    struct Resolved {
        effects: String,
        alpha: Option<f64>,
        gamma: f64,
        order: CriticalOrder,
        sweep_alpha: bool,
    }
    rec.config(&Resolved {
        effects: args.effects.display().to_string(),
        alpha: (!args.sweep_alpha).then_some(alpha),
        gamma,
        order,
        sweep_alpha: args.sweep_alpha,
    })?;

    let metrics = evaluator
        .as_ref()
        .map(|e| e.evaluate(&selection.pruned))
        .transpose()?;
    let details = FaspDetails {
        alpha,
        gamma,
        order,
        protected: selection.protected.ones_iter().collect(),
        bias: metrics.map(|m| m.0),
        ppl: metrics.map(|m| m.1),
        evaluated_with: evaluator.as_ref().map(|e| match e {
            Evaluator::Objective(_) => "objective",
            Evaluator::Surrogates(_) => "surrogates",
        }),
        sweep,
    };
    if !details.sweep.is_empty() {
        println!("{:>6}  {:>8}  {:>10}", "alpha", "bias", "perplexity");
        for c in &details.sweep {
            println!("{:>6.2}  {:>8.3}  {:>10.3}", c.alpha, c.bias, c.ppl);
        }
    }
    let pruned: Vec<usize> = selection.pruned.ones_iter().collect();
    println!(
        "alpha {alpha:.2}, gamma {gamma:.2}: pruned heads ({}): {}",
        pruned.len(),
        join_indices(&pruned)
    );
    println!("protected heads: {}", join_indices(&details.protected));
    if let Some((b, p)) = metrics {
        println!("bias {b:.3}, perplexity {p:.3}");
    }
    let out = Selection::new(
        "fasp",
        selection.pruned,
        serde_json::to_value(&details)?,
        rec.reference(),
    );
    rec.write(&args.out, &json_bytes(&out)?)?;
    rec.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum DirectionArg {
    /// Prune the lowest-scoring heads
    #[default]
    Lowest,
    /// Prune the highest-scoring heads
    Highest,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Per-head scores with columns head_index,score
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    pub scores: Option<PathBuf>,
    /// Which end of the ranking to prune
    #[arg(long, value_enum, default_value_t)]
    pub direction: DirectionArg,
    /// Pruned fraction; for --random, the largest allowed fraction [default: 0.2]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Draw a uniform random mask with between 1 and floor(alpha * N) heads
    #[arg(long, requires = "heads")]
    pub random: bool,
    /// Head count for --random
    #[arg(long)]
    pub heads: Option<usize>,
    /// Seed for --random [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Selection JSON
    #[arg(long)]
    pub out: PathBuf,
}

pub fn select(args: &SelectArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let file = &ctx.file;
    let mut rec = ctx.recorder("select", &args.out)?;
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let (method, mask, details) = if args.random {
        let n = args.heads.unwrap_or(0);
        let seed = pick(args.seed, file.seed, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random_select(n, alpha, &mut rng)?;
        (
            "random",
            mask,
            serde_json::json!({ "alpha_max": alpha, "heads": n, "seed": seed }),
        )
    } else {
        let path = args
            .scores
            .as_ref()
            .expect("clap requires --scores without --random");
        rec.input(path)?;
        let scores = read_scores(path)?;
        let direction = match args.direction {
            DirectionArg::Lowest => Direction::PruneLowest,
            DirectionArg::Highest => Direction::PruneHighest,
        };
        let mask = score_ranked_select(&scores, alpha, direction)?;
        (
            "score-ranked",
            mask,
            serde_json::json!({ "alpha": alpha, "direction": direction }),
        )
    };
    rec.config(&details)?;
    let pruned: Vec<usize> = mask.ones_iter().collect();
    println!(
        "{method}: pruned heads ({}): {}",
        pruned.len(),
        join_indices(&pruned)
    );
    let out = Selection::new(method, mask, details, rec.reference());
    rec.write(&args.out, &json_bytes(&out)?)?;
    rec.finish()?;
    Ok(())
}
