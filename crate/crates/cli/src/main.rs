//! `triage`: bug-report triage pipeline driver.
//!
//! Subcommands cover the full pipeline — ingest, preprocess, train-embed,
//! train-feature, train-classifier, evaluate, transfer, predict, inspect —
//! sharing one flat key=value configuration. Precedence, lowest first:
//! built-in defaults, the config file (`--config` or `$TRIAGE_CONFIG`),
//! `--set key=value` overrides, explicit command flags.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error (malformed or
//! missing inputs, missing artifacts), 3 runtime numeric error.

mod config;
mod evaluate;
mod ingest;
mod output;
mod pipeline;
mod predict;

use std::fmt;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use triage_core::nncore::NnError;

use crate::config::{ConfigProblem, RunConfig};
use crate::evaluate::{EvaluateArgs, TransferArgs};
use crate::ingest::IngestArgs;
use crate::output::Output;
use crate::predict::{InspectArgs, PredictArgs};

/// A data-level failure: malformed input, a missing pipeline artifact,
/// text that cleans to nothing. Maps to exit code 2.
#[derive(Debug)]
pub struct DataProblem(pub String);

impl fmt::Display for DataProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataProblem {}

#[derive(Parser)]
#[command(
    name = "triage",
    version,
    about = "Bug-report triage: learned features, developer ranking, chronological evaluation"
)]
struct Cli {
    /// Config file of `key = value` lines; defaults to $TRIAGE_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set hidden_units=64. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Emit NDJSON events on stdout instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a tracker export (JSONL or CSV) into the canonical corpus.
    Ingest(IngestArgs),
    /// Partition the corpus, sort it chronologically, build the vocabulary.
    Preprocess {
        /// Corpus path, overriding the `corpus` config key.
        corpus: Option<PathBuf>,
    },
    /// Train skip-gram word vectors on the untriaged split.
    TrainEmbed,
    /// Train the recurrent feature extractor on the untriaged split.
    TrainFeature,
    /// Train the deployable classifier on the triaged split.
    TrainClassifier,
    /// Run chronological cross-validation once per threshold value.
    Evaluate(EvaluateArgs),
    /// Evaluate this run's frozen feature extractor on another corpus.
    Transfer(TransferArgs),
    /// Rank developers for a single bug report.
    Predict(PredictArgs),
    /// Examine pipeline artifacts.
    Inspect {
        #[command(subcommand)]
        what: InspectArgs,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests print to stdout and succeed; real
            // parse failures are configuration errors.
            let code = i32::from(err.use_stderr());
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let json = cli.json;
    if let Err(err) = run(cli) {
        let code = exit_code_for(&err);
        if json {
            println!(
                "{}",
                serde_json::json!({
                    "event": "error",
                    "message": format!("{err:#}"),
                    "exit_code": code,
                })
            );
        }
        eprintln!("error: {err:#}");
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = Output::new(cli.json);
    let mut config = RunConfig::resolve(cli.config.as_deref(), &cli.set)?;

    // Command flags that shadow config keys land on the config itself, so
    // the echo below shows exactly what the run will use.
    match &cli.command {
        Command::Preprocess { corpus: Some(path) } => config.corpus = path.clone(),
        Command::Evaluate(args) => {
            if args.title_only {
                config.title_only = true;
            }
            if let Some(list) = &args.thresholds {
                config.set("thresholds", list)?;
            }
        }
        _ => {}
    }
    config.validate()?;

    match &cli.command {
        Command::Ingest(args) => {
            let mut extra = vec![("input", args.input.display().to_string())];
            if let Some(format) = args.format {
                extra.push(("format", format!("{format:?}").to_lowercase()));
            }
            if !args.map.is_empty() {
                extra.push(("map", args.map.join(";")));
            }
            extra.push(("fill_missing_owner", args.fill_missing_owner.to_string()));
            if let Some(output) = &args.output {
                extra.push(("output", output.display().to_string()));
            }
            out.config("ingest", &config, &extra);
            ingest::run(&config, &out, args)
        }
        Command::Preprocess { .. } => {
            out.config("preprocess", &config, &[]);
            pipeline::preprocess(&config, &out)
        }
        Command::TrainEmbed => {
            out.config("train-embed", &config, &[]);
            pipeline::train_embed(&config, &out)
        }
        Command::TrainFeature => {
            out.config("train-feature", &config, &[]);
            pipeline::train_feature(&config, &out)
        }
        Command::TrainClassifier => {
            out.config("train-classifier", &config, &[]);
            pipeline::train_classifier(&config, &out)
        }
        Command::Evaluate(args) => {
            out.config(
                "evaluate",
                &config,
                &[
                    ("train_missing", args.train_missing.to_string()),
                    ("strict", args.strict.to_string()),
                ],
            );
            evaluate::run(&config, &out, args)
        }
        Command::Transfer(args) => {
            out.config(
                "transfer",
                &config,
                &[
                    ("target", args.target.display().to_string()),
                    (
                        "target_rules",
                        args.target_rules.clone().unwrap_or_else(|| config.rules.clone()),
                    ),
                ],
            );
            evaluate::run_transfer(&config, &out, args)
        }
        Command::Predict(args) => {
            out.config(
                "predict",
                &config,
                &[("k", args.k.unwrap_or(config.top_k).to_string())],
            );
            predict::run(&config, &out, args)
        }
        Command::Inspect { what } => {
            out.config("inspect", &config, &[]);
            predict::run_inspect(&config, &out, what)
        }
    }
}

/// Maps an error chain to the documented exit codes. Configuration
/// mistakes are tagged with [`ConfigProblem`]; a non-finite value anywhere
/// in the numeric stack is a runtime numeric error; everything else is a
/// data problem.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigProblem>().is_some() {
            return 1;
        }
        if let Some(nn) = cause.downcast_ref::<NnError>() {
            if matches!(nn, NnError::NonFiniteValue { .. }) {
                return 3;
            }
        }
    }
    2
}
