//! Single-report prediction and artifact inspection.
//!
//! `predict` featurizes one report with the trained extractor, ranks
//! developers with the trained classifier, and prints the top k as JSON.
//! The prediction on stdout is a pure function of the inputs and the
//! checkpoints; wall-clock timing goes to stderr so repeated runs stay
//! byte-identical.

use std::time::Instant;

use anyhow::Result;
use serde_json::json;
use triage_core::classifiers::Classifier;
use triage_core::corpus::BugReport;
use triage_core::embed::nearest_neighbors;
use triage_core::evalharness::FeatureKind;
use triage_core::textprep::Vocabulary;

use crate::config::RunConfig;
use crate::output::Output;
use crate::pipeline::{
    featurize, load_classifier, load_embedding, load_feature_model, load_vocab, report_tokens,
    Artifacts,
};
use crate::DataProblem;

#[derive(clap::Args)]
pub struct PredictArgs {
    /// Report title.
    #[arg(long, default_value = "")]
    pub title: String,
    /// Report description.
    #[arg(long, default_value = "")]
    pub description: String,
    /// Developers to return; defaults to the `top_k` config key.
    #[arg(short, long)]
    pub k: Option<usize>,
}

pub fn run(config: &RunConfig, out: &Output, args: &PredictArgs) -> Result<()> {
    let artifacts = Artifacts::new(config);
    let vocab = load_vocab(&artifacts)?;
    let (classifier, classes) = load_classifier(&artifacts)?;
    let model = match config.feature {
        FeatureKind::Dbrnna => Some(load_feature_model(&artifacts)?),
        FeatureKind::Bow => None,
    };

    // The report never touches disk; featurization only needs the text
    // fields, so the rest carry placeholders.
    let report = BugReport {
        id: 0,
        title: args.title.clone(),
        description: args.description.clone(),
        owner: None,
        status: String::new(),
        report_type: None,
        reported_time: 0,
    };
    if report_tokens(&report, config.title_only).is_empty() {
        return Err(anyhow::Error::new(DataProblem(
            "the report text contains no usable tokens after cleaning".to_string(),
        )));
    }

    let started = Instant::now();
    let feature = featurize(&report, &vocab, model.as_ref(), config)?;
    let prediction = classifier.predict(&feature)?;
    let elapsed = started.elapsed();

    let k = args.k.unwrap_or(config.top_k).min(classes.len());
    let developers: Vec<serde_json::Value> = prediction
        .ranking
        .iter()
        .take(k)
        .map(|&class| {
            json!({
                "name": classes[class],
                "score": prediction.scores[class],
            })
        })
        .collect();
    let payload = json!({ "developers": developers });
    // Timing is measured and reported out of band: it varies run to run,
    // the ranking must not.
    eprintln!(
        "[timing] feature extraction + ranking: {:.2} ms",
        elapsed.as_secs_f64() * 1e3
    );
    out.deliver(
        "prediction",
        &serde_json::to_string(&payload).expect("prediction serializes"),
        payload,
    );
    Ok(())
}

#[derive(clap::Subcommand)]
pub enum InspectArgs {
    /// Vocabulary size and leading entries.
    Vocab {
        /// Entries to list.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Nearest embedding neighbors of a vocabulary word.
    Neighbors {
        /// Query word.
        word: String,
        /// Neighbors to return.
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
}

pub fn run_inspect(config: &RunConfig, out: &Output, args: &InspectArgs) -> Result<()> {
    let artifacts = Artifacts::new(config);
    let vocab = load_vocab(&artifacts)?;
    match args {
        InspectArgs::Vocab { limit } => {
            let shown = (*limit).min(vocab.size());
            let entries: Vec<serde_json::Value> = (0..shown)
                .map(|i| {
                    json!({
                        "index": i,
                        "token": vocab.token(i),
                        "frequency": vocab.frequency(i),
                        "special": Vocabulary::is_special(i),
                    })
                })
                .collect();
            let mut plain = format!(
                "{} entries (min frequency {}), first {shown}:",
                vocab.size(),
                vocab.min_frequency()
            );
            for entry in &entries {
                plain.push_str(&format!(
                    "\n{:>6}  {}  x{}",
                    entry["index"], entry["token"].as_str().unwrap(), entry["frequency"]
                ));
            }
            out.deliver(
                "vocab",
                &plain,
                json!({
                    "size": vocab.size(),
                    "min_frequency": vocab.min_frequency(),
                    "entries": entries,
                }),
            );
        }
        InspectArgs::Neighbors { word, k } => {
            let embedding = load_embedding(&artifacts)?;
            let query = vocab.index_of(word).ok_or_else(|| {
                anyhow::Error::new(DataProblem(format!(
                    "`{word}` is not in the vocabulary"
                )))
            })?;
            let neighbors = nearest_neighbors(&embedding, query, *k)?;
            let entries: Vec<serde_json::Value> = neighbors
                .iter()
                .map(|&(index, similarity)| {
                    json!({
                        "token": vocab.token(index),
                        "similarity": similarity,
                    })
                })
                .collect();
            let mut plain = format!("nearest to `{word}`:");
            for entry in &entries {
                plain.push_str(&format!(
                    "\n{:>8.4}  {}",
                    entry["similarity"].as_f64().unwrap(),
                    entry["token"].as_str().unwrap()
                ));
            }
            out.deliver(
                "neighbors",
                &plain,
                json!({ "word": word, "neighbors": entries }),
            );
        }
    }
    Ok(())
}
