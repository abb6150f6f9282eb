use std::path::PathBuf;
use std::process::ExitCode;

use amifuse::preprocess::FitScope;
use amifuse_cli::{cmd_ablate, cmd_evaluate, cmd_prepare, cmd_synth, EvaluateArgs, ModelKind, PrepareArgs, SynthArgs};
use clap::{Args, Parser, Subcommand};

/// Mortality prediction from structured admission data fused with
/// discharge-summary embeddings.
#[derive(Parser)]
#[command(name = "amifuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text `key = value` configuration file; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalFlags {
    /// Directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = ["mlp", "logistic"])]
    model: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Where preprocessing statistics are fit.
    #[arg(long, value_parser = ["replicate", "leakage-safe"])]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort fixture.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of cohort admissions.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Ingest, clean, embed and normalize a cohort into a dataset.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Fixture directory; supplies any input not given explicitly.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Repeated k-fold cross-validation of one model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        /// Comma-separated feature groups, or `all`.
        #[arg(long)]
        groups: Option<String>,
    },
    /// Cross-validation over the seven feature-group combinations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
    },
}

fn eval_args(common: Common, eval: EvalFlags, groups: Option<String>) -> anyhow::Result<EvaluateArgs> {
    Ok(EvaluateArgs {
        config: common.config,
        seed: common.seed,
        out: common.out,
        data: eval.data,
        model: eval.model.as_deref().map(str::parse::<ModelKind>).transpose()?,
        runs: eval.runs,
        folds: eval.folds,
        mode: eval.mode.as_deref().map(str::parse::<FitScope>).transpose()?,
        groups,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common, n } => cmd_synth(&SynthArgs {
            config: common.config,
            seed: common.seed,
            out: common.out,
            n,
        }),
        Command::Prepare {
            common,
            fixture,
            cohort,
            summaries,
            embeddings,
            schema,
        } => cmd_prepare(&PrepareArgs {
            config: common.config,
            seed: common.seed,
            out: common.out,
            fixture,
            cohort,
            summaries,
            embeddings,
            schema,
        }),
        Command::Evaluate { common, eval, groups } => cmd_evaluate(&eval_args(common, eval, groups)?).map(drop),
        Command::Ablate { common, eval } => cmd_ablate(&eval_args(common, eval, None)?).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
