use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser};
use headprune::Error;

use crate::manifest::{sha256_file, RunManifest};
use crate::{execute, Cli, Command};

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Run even if an input file changed since the recorded run
    #[arg(long)]
    pub skip_input_check: bool,
}

/// Re-runs the recorded command line from the current directory and checks
/// that every output has the recorded digest.
pub fn run(args: &ReplayArgs) -> anyhow::Result<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if !args.skip_input_check {
        for input in &recorded.inputs {
            if sha256_file(Path::new(&input.path))? != input.sha256 {
                return Err(Error::Validation(format!(
                    "input {} changed since the recorded run",
                    input.path
                ))
                .into());
            }
        }
    }
    let cli = Cli::try_parse_from(
        std::iter::once("headprune".to_string()).chain(recorded.argv.iter().cloned()),
    )
    .map_err(|e| Error::Config(format!("recorded command line no longer parses: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("a replay manifest cannot be replayed".into()).into());
    }
    execute(cli, recorded.argv.clone())?;

    let mut changed = Vec::new();
    for out in &recorded.outputs {
        if sha256_file(Path::new(&out.path))? != out.sha256 {
            changed.push(out.path.as_str());
        }
    }
    if !changed.is_empty() {
        bail!(
            "replayed {} but outputs differ: {}",
            recorded.command,
            changed.join(", ")
        );
    }
    println!(
        "replayed {}: {} outputs identical",
        recorded.command,
        recorded.outputs.len()
    );
    Ok(())
}
