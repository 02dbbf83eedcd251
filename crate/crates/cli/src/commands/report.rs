//! `compare` and `evaluate`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use headprune::metrics::{
    compute_bias, compute_perplexity, PromptToxicityTable, SequenceLossTable,
};
use headprune::report::{self, Comparison, MethodResult};
use serde::Serialize;

use super::{json_bytes, Ctx};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Result files with method, bias and ppl fields; the first is the reference
    #[arg(required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Also write the comparison as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compare(args: &CompareArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let results: Vec<MethodResult> = args
        .results
        .iter()
        .map(|p| MethodResult::from_path(p))
        .collect::<Result<_, _>>()?;
    let cmp = report::compare(&results)?;
    print!("{}", report::render(&cmp));
    if let Some(out) = &args.out {
        let mut rec = ctx.recorder("compare", out)?;
        for p in &args.results {
            rec.input(p)?;
        }
        rec.config(&serde_json::json!({ "results": args.results }))?;
        #[derive(Serialize)]
        struct Output<'a> {
            #[serde(flatten)]
            comparison: &'a Comparison,
            manifest: String,
        }
        let bytes = json_bytes(&Output {
            comparison: &cmp,
            manifest: rec.reference(),
        })?;
        rec.write(out, &bytes)?;
        rec.finish()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scored prompts with columns prompt_id,subgroup,toxicity
    #[arg(long)]
    pub toxicity: PathBuf,
    /// Name of the bias group the prompts belong to
    #[arg(long, default_value = "gender")]
    pub group: String,
    /// Subgroups that must be present, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub subgroups: Vec<String>,
    /// Per-sequence losses with columns sequence_id,mean_nll,token_count
    #[arg(long)]
    pub losses: PathBuf,
    /// Method name written into the result
    #[arg(long)]
    pub method: String,
    /// Result JSON, readable by `compare`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    method: String,
    bias: f64,
    ppl: f64,
    group: String,
    per_subgroup: BTreeMap<String, f64>,
    group_mean: f64,
    mean_toxicity: f64,
    manifest: String,
}

pub fn evaluate(args: &EvaluateArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let mut rec = ctx.recorder("evaluate", &args.out)?;
    rec.input(&args.toxicity)?;
    rec.input(&args.losses)?;
    rec.config(&serde_json::json!({
        "group": args.group,
        "subgroups": args.subgroups,
        "method": args.method,
    }))?;
    let table = PromptToxicityTable::from_path(args.group.clone(), &args.toxicity)?
        .with_subgroups(args.subgroups.iter().cloned());
    let bias = compute_bias(&table)?;
    let ppl = compute_perplexity(&SequenceLossTable::from_path(&args.losses)?)?;
    for (g, t) in &bias.per_subgroup {
        println!("{:<16}  {:>8.3}", g, t);
    }
    println!(
        "{} bias {:.3}, perplexity {:.3}",
        args.group, bias.bias, ppl
    );
    let out = EvaluateOutput {
        method: args.method.clone(),
        bias: bias.bias,
        ppl,
        group: bias.group,
        per_subgroup: bias.per_subgroup,
        group_mean: bias.group_mean,
        mean_toxicity: bias.mean_toxicity,
        manifest: rec.reference(),
    };
    rec.write(&args.out, &json_bytes(&out)?)?;
    rec.finish()?;
    Ok(())
}
