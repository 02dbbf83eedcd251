use std::path::PathBuf;

use clap::Args;
use headprune::io::to_delimited;
use headprune::surrogate::{
    default_layer_sizes, family, parse_layer_sizes, preprocess, read_corpus, train, SurrogateFile,
    Target, TrainConfig,
};
use headprune::Error;
use log::info;
use serde::Serialize;

use super::{Ctx, BIAS_SURROGATE, PPL_SURROGATE};
use crate::config::pick;

pub const DEFAULT_SIGMA: f64 = 10.0;
pub const DEFAULT_SPLIT: f64 = 0.95;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sample corpus: JSON lines, or delimited text with mask,bias,ppl columns
    #[arg(long)]
    pub corpus: PathBuf,
    /// Layer sizes such as 72,64,32,1 [default: the model family's, else N,64,32,1]
    #[arg(long)]
    pub arch: Option<String>,
    /// Model family name or alias; selects its reference architecture
    #[arg(long)]
    pub model: Option<String>,
    /// Largest allowed perplexity standard deviation after clamping [default: 10]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Training fraction; the rest is held out for validation [default: 0.95]
    #[arg(long)]
    pub split: Option<f64>,
    /// Seed for the split, initialization and batch order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Mini-batch size [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Epoch cap [default: 500]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Output directory for the two regressors and the error report
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Resolved<'a> {
    corpus: String,
    sigma: f64,
    split: f64,
    model: Option<&'a str>,
    layer_sizes: &'a [usize],
    training: &'a TrainConfig,
}

#[derive(Serialize)]
struct MseRow {
    target: Target,
    train_mse: f64,
    validation_mse: f64,
    epochs_run: usize,
    best_epoch: usize,
    train_samples: usize,
    validation_samples: usize,
}

pub fn run(args: &TrainArgs, ctx: &Ctx) -> anyhow::Result<()> {
    let file = &ctx.file;
    let report_path = args.out_dir.join("mse_report.csv");
    let mut rec = ctx.recorder("train-surrogate", &report_path)?;
    rec.input(&args.corpus)?;

    let records = read_corpus(&args.corpus)?;
    let sigma = pick(args.sigma, file.sigma, DEFAULT_SIGMA);
    let corpus = preprocess(&records, sigma)?;
    let n = corpus.head_count();

    let model = args.model.as_deref().or(file.model.as_deref());
    let fam = model.map(family).transpose()?;
    if let Some(f) = fam {
        if f.head_count != n {
            return Err(Error::Dimension {
                expected: f.head_count,
                actual: n,
            }
            .into());
        }
    }
    let layer_sizes = if let Some(a) = &args.arch {
        parse_layer_sizes(a)?
    } else if let (Some(_), Some(f)) = (&args.model, fam) {
        f.layer_sizes.to_vec()
    } else if let Some(a) = &file.arch {
        parse_layer_sizes(a)?
    } else if let Some(f) = fam {
        f.layer_sizes.to_vec()
    } else {
        default_layer_sizes(n)
    };
    if layer_sizes.first() != Some(&n) {
        return Err(Error::Dimension {
            expected: n,
            actual: layer_sizes.first().copied().unwrap_or(0),
        }
        .into());
    }

    let split = pick(args.split, file.split, DEFAULT_SPLIT);
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::Config(format!("training fraction {split} not in (0, 1]")).into());
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: pick(
            args.learning_rate,
            file.learning_rate,
            defaults.learning_rate,
        ),
        batch_size: pick(args.batch_size, file.batch_size, defaults.batch_size),
        patience: pick(args.patience, file.patience, defaults.patience),
        max_epochs: pick(args.max_epochs, file.max_epochs, defaults.max_epochs),
        validation_fraction: 1.0 - split,
        seed: pick(args.seed, file.seed, defaults.seed),
    };
    config.validate()?;
    rec.config(&Resolved {
        corpus: args.corpus.display().to_string(),
        sigma,
        split,
        model,
        layer_sizes: &layer_sizes,
        training: &config,
    })?;
    let scaling = corpus.scaling();
    info!(
        "{} samples over {n} heads; perplexity clamped at {:.3}, bias scaled by {:.3}",
        corpus.len(),
        scaling.ppl_max,
        scaling.bias_max
    );

    let mut rows = Vec::new();
    for (target, targets, name) in [
        (Target::Bias, corpus.bias_targets(), BIAS_SURROGATE),
        (Target::Ppl, corpus.ppl_targets(), PPL_SURROGATE),
    ] {
        let (model, report) = train(corpus.masks(), targets, &layer_sizes, &config)?;
        info!(
            "{target}: {} epochs, validation MSE {:.3e}",
            report.epochs_run, report.validation_mse
        );
        rec.stat(&format!("{target}_epochs"), report.epochs_run);
        rows.push(MseRow {
            target,
            train_mse: report.train_mse,
            validation_mse: report.validation_mse,
            epochs_run: report.epochs_run,
            best_epoch: report.best_epoch,
            train_samples: report.train_samples,
            validation_samples: report.validation_samples,
        });
        let mut out = SurrogateFile::new(target, scaling, model);
        out.training = Some(config.clone());
        out.report = Some(report);
        out.manifest = Some(rec.reference());
        rec.write(&args.out_dir.join(name), &serde_json::to_vec_pretty(&out)?)?;
    }
    let comment = format!("manifest: {}", rec.reference());
    rec.write(&report_path, &to_delimited(&rows, Some(&comment))?)?;

    println!(
        "{:<6}  {:>10}  {:>14}  {:>6}",
        "target", "train MSE", "validation MSE", "epochs"
    );
    for r in &rows {
        println!(
            "{:<6}  {:>10.3e}  {:>14.3e}  {:>6}",
            r.target.to_string(),
            r.train_mse,
            r.validation_mse,
            r.epochs_run
        );
    }
    rec.finish()?;
    Ok(())
}
