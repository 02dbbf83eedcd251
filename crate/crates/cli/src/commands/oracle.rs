//! `oracle` subcommands: synthetic objectives with known answers.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use headprune::io::to_json_lines;
use headprune::oracle::{
    exhaustive_search, generate_corpus, head_effects, Preset, SyntheticObjective,
};
use headprune::surrogate::{preprocess, read_corpus};
use headprune::{Error, HeadMask};
use serde::Serialize;

use super::train::DEFAULT_SIGMA;
use super::{join_indices, json_bytes, BoundsArgs, Ctx, Selection, SurrogateArgs};
use crate::config::pick;

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Build an objective from a preset
    Objective(ObjectiveArgs),
    /// Sample a corpus of (mask, bias, ppl) records from an objective
    Generate(GenerateArgs),
    /// Single-head ablation table with columns head_index,z_bias,z_ppl
    Effects(EffectsArgs),
    /// Enumerate every mask within the bounds and report the optimum
    Exhaustive(ExhaustiveArgs),
    /// True bias and perplexity of a selection, as a result file for `compare`
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    /// separable, interacting or tradeoff
    #[arg(long)]
    pub preset: Preset,
    /// Number of heads
    #[arg(long)]
    pub heads: usize,
    /// Coefficient seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observation noise standard deviation [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Objective JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Objective JSON
    #[arg(long)]
    pub objective: PathBuf,
    /// Number of records [default: 1000]
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus in JSON lines
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    /// Objective JSON
    #[arg(long)]
    pub objective: PathBuf,
    /// Delimited head-effect table
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExhaustiveArgs {
    /// Objective JSON
    #[arg(long)]
    pub objective: PathBuf,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Weight of bias in the cost [default: 0.5]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Take the cost scaling from these surrogates
    #[command(flatten)]
    pub surrogates: SurrogateArgs,
    /// Or derive the cost scaling from this corpus
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Clamp ceiling used with --corpus [default: 10]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Result JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Objective JSON
    #[arg(long)]
    pub objective: PathBuf,
    /// Selection JSON written by anneal, fasp, select or oracle exhaustive
    #[arg(long, required_unless_present_any = ["mask", "unpruned"], conflicts_with_all = ["mask", "unpruned"])]
    pub selection: Option<PathBuf>,
    /// Mask as a bit string
    #[arg(long, conflicts_with = "unpruned")]
    pub mask: Option<HeadMask>,
    /// Score the unpruned model
    #[arg(long)]
    pub unpruned: bool,
    /// Method name [default: taken from the selection, "base" for --unpruned]
    #[arg(long)]
    pub method: Option<String>,
    /// Result JSON
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: &OracleCommand, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        OracleCommand::Objective(a) => objective(a, ctx),
        OracleCommand::Generate(a) => generate(a, ctx),
        OracleCommand::Effects(a) => effects(a, ctx),
        OracleCommand::Exhaustive(a) => exhaustive(a, ctx),
        OracleCommand::Score(a) => score(a, ctx),
    }
}

fn objective(args: &ObjectiveArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("oracle objective", &args.out)?;
    let seed = pick(args.seed, ctx.file.seed, 0);
    let noise = args.noise.unwrap_or(0.0);
    rec.config(&serde_json::json!({
        "preset": format!("{:?}", args.preset).to_lowercase(),
        "heads": args.heads,
        "seed": seed,
        "noise": noise,
    }))?;
    let obj = args.preset.build(args.heads, seed)?.with_noise(noise);
    obj.validate()?;
    rec.write(&args.out, &json_bytes(&obj)?)?;
    println!(
        "{} heads, {} bias and {} perplexity interactions",
        obj.n,
        obj.pairwise_bias.len(),
        obj.pairwise_ppl.len()
    );
    rec.finish()?;
    Ok(())
}

fn generate(args: &GenerateArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("oracle generate", &args.out)?;
    rec.input(&args.objective)?;
    let obj = SyntheticObjective::from_path(&args.objective)?;
    let bounds = args.bounds.resolve(obj.n, &ctx.file)?;
    let samples = pick(args.samples, ctx.file.samples, DEFAULT_SAMPLES);
    let seed = pick(args.seed, ctx.file.seed, 0);
    rec.config(&serde_json::json!({ "samples": samples, "bounds": bounds, "seed": seed }))?;
    let records = generate_corpus(&obj, bounds, samples, seed)?;
    rec.write(&args.out, &to_json_lines(&records)?)?;
    println!("{samples} records over {} heads", obj.n);
    rec.finish()?;
    Ok(())
}

fn effects(args: &EffectsArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("oracle effects", &args.out)?;
    rec.input(&args.objective)?;
    rec.config(&serde_json::Value::Null)?;
    let obj = SyntheticObjective::from_path(&args.objective)?;
    let table = head_effects(&obj)?;
    rec.write(&args.out, &table.to_delimited()?)?;
    println!("{} head effects", table.len());
    rec.finish()?;
    Ok(())
}

fn exhaustive(args: &ExhaustiveArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("oracle exhaustive", &args.out)?;
    rec.input(&args.objective)?;
    let obj = SyntheticObjective::from_path(&args.objective)?;
    let bounds = args.bounds.resolve(obj.n, &ctx.file)?;
    let epsilon = pick(args.epsilon, ctx.file.epsilon, 0.5);
    let scaling = if args.surrogates.given() {
        args.surrogates.load(&mut rec)?.bias.scaling
    } else if let Some(path) = &args.corpus {
        rec.input(path)?;
        let sigma = pick(args.sigma, ctx.file.sigma, DEFAULT_SIGMA);
        preprocess(&read_corpus(path)?, sigma)?.scaling()
    } else {
        return Err(Error::Config("cost scaling needs surrogates or --corpus".into()).into());
    };
    rec.config(&serde_json::json!({ "bounds": bounds, "epsilon": epsilon, "scaling": scaling }))?;
    let result = exhaustive_search(&obj, bounds, epsilon, &scaling)?;
    let pruned: Vec<usize> = result.best_state.ones_iter().collect();
    println!(
        "{} states; optimum cost {:.3}: {}",
        result.states, result.best_cost, result.best_state
    );
    println!("pruned heads ({}): {}", pruned.len(), join_indices(&pruned));
    println!(
        "bias {:.3}, perplexity {:.3}; {} points on the frontier",
        result.best.bias,
        result.best.ppl,
        result.frontier.len()
    );
    let out = Selection::new(
        "exhaustive",
        result.best_state.clone(),
        serde_json::to_value(&result)?,
        rec.reference(),
    );
    rec.write(&args.out, &json_bytes(&out)?)?;
    rec.finish()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Scored {
    method: String,
    bias: f64,
    ppl: f64,
    mask: HeadMask,
    manifest: String,
}

fn score(args: &ScoreArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("oracle score", &args.out)?;
    rec.input(&args.objective)?;
    let obj = SyntheticObjective::from_path(&args.objective)?;
    let (method, mask) = if let Some(path) = &args.selection {
        rec.input(path)?;
        let s = Selection::load(path)?;
        (s.method, s.mask)
    } else if let Some(m) = &args.mask {
        ("mask".to_string(), m.clone())
    } else {
        ("base".to_string(), HeadMask::zeros(obj.n))
    };
    let method = args.method.clone().unwrap_or(method);
    rec.config(&serde_json::json!({ "method": method, "mask": mask }))?;
    let e = obj.evaluate(&mask)?;
    println!("{method}: bias {:.3}, perplexity {:.3}", e.bias, e.ppl);
    let out = Scored {
        method,
        bias: e.bias,
        ppl: e.ppl,
        mask,
        manifest: rec.reference(),
    };
    rec.write(&args.out, &json_bytes(&out)?)?;
    rec.finish()?;
    Ok(())
}
