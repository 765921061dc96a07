//! Chronological cross-validation sweeps and cross-project transfer.
//!
//! `evaluate` runs the ten-fold protocol on the triaged split once per
//! value in the threshold list, writes one JSON and one CSV report per
//! value, and prints a single accuracy table with the runs side by side:
//! rows CV#1..CV#10 plus mean and standard deviation.
//! `transfer` does the same on a different corpus using this run's frozen
//! feature extractor and vocabulary.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;
use triage_core::corpus::{load_corpus, partition, BugReport};
use triage_core::dbrnna::FeatureModel;
use triage_core::evalharness::{run_cv, transfer_eval, EvalReport, FeatureKind, NUM_FOLDS};
use triage_core::textprep::Vocabulary;

use crate::config::{partition_rules_named, RunConfig};
use crate::output::Output;
use crate::pipeline::{
    load_feature_model, load_split, load_vocab, preprocess, train_embed, train_feature, Artifacts,
};
use crate::DataProblem;

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Train whatever pipeline artifacts are missing before evaluating.
    #[arg(long)]
    pub train_missing: bool,
    /// Exit nonzero if any fold fails to produce an accuracy.
    #[arg(long)]
    pub strict: bool,
    /// Classify on title text only, ignoring descriptions.
    #[arg(long)]
    pub title_only: bool,
    /// Comma-separated minimum-reports-per-developer values, overriding
    /// the `thresholds` config key.
    #[arg(long, value_name = "LIST")]
    pub thresholds: Option<String>,
}

#[derive(clap::Args)]
pub struct TransferArgs {
    /// Target corpus in canonical JSONL form.
    #[arg(long)]
    pub target: PathBuf,
    /// Partition rules for the target corpus; defaults to the `rules`
    /// config key.
    #[arg(long, value_name = "NAME")]
    pub target_rules: Option<String>,
}

/// Runs whichever pipeline stages have not produced their artifact yet.
/// Stages whose outputs exist are reused as-is.
fn train_missing(config: &RunConfig, out: &Output) -> Result<()> {
    let artifacts = Artifacts::new(config);
    let stage = |name: &str, done: bool, run: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        if done {
            out.note("reuse", &format!("{name}: artifact already present"), &[]);
            Ok(())
        } else {
            out.note("train", &format!("{name}: artifact missing, training"), &[]);
            run()
        }
    };
    stage(
        "preprocess",
        artifacts.vocab().exists() && artifacts.d1().exists() && artifacts.d2().exists(),
        &mut || preprocess(config, out),
    )?;
    if config.feature == FeatureKind::Dbrnna {
        stage("train-embed", artifacts.embedding().exists(), &mut || {
            train_embed(config, out)
        })?;
        stage("train-feature", artifacts.feature().exists(), &mut || {
            train_feature(config, out)
        })?;
    }
    Ok(())
}

pub fn run(config: &RunConfig, out: &Output, args: &EvaluateArgs) -> Result<()> {
    if args.train_missing {
        train_missing(config, out)?;
    }
    let artifacts = Artifacts::new(config);
    let vocab = load_vocab(&artifacts)?;
    let d2 = load_split(&artifacts, "d2")?;
    let model = match config.feature {
        FeatureKind::Dbrnna => Some(load_feature_model(&artifacts)?),
        FeatureKind::Bow => None,
    };

    let reports = sweep(config, out, &artifacts, "report", &d2, &vocab, model.as_ref(), false)?;
    finish(config, out, &reports, args.strict)
}

pub fn run_transfer(config: &RunConfig, out: &Output, args: &TransferArgs) -> Result<()> {
    let artifacts = Artifacts::new(config);
    let vocab = load_vocab(&artifacts)?;
    let model = load_feature_model(&artifacts)?;

    let rules_name = args.target_rules.as_deref().unwrap_or(&config.rules);
    let rules = partition_rules_named(rules_name)?;
    let loaded = load_corpus(&args.target, false)
        .with_context(|| format!("cannot load target corpus {}", args.target.display()))?;
    if !loaded.skipped.is_empty() {
        out.note(
            "skipped",
            &format!("{} malformed target records ignored", loaded.skipped.len()),
            &[("count", json!(loaded.skipped.len()))],
        );
    }
    let target_d2 = partition(loaded.reports, &rules).d2;
    out.note(
        "target",
        &format!(
            "{} triaged reports in {} under `{rules_name}` rules",
            target_d2.len(),
            args.target.display()
        ),
        &[("triaged", json!(target_d2.len()))],
    );

    let reports = sweep(
        config,
        out,
        &artifacts,
        "transfer",
        &target_d2,
        &vocab,
        Some(&model),
        true,
    )?;
    finish(config, out, &reports, false)
}

/// One cross-validation run per threshold value; writes the report files
/// and returns the reports for table rendering.
#[allow(clippy::too_many_arguments)]
fn sweep(
    config: &RunConfig,
    out: &Output,
    artifacts: &Artifacts,
    prefix: &str,
    reports: &[BugReport],
    vocab: &Vocabulary,
    model: Option<&FeatureModel<f64>>,
    transfer: bool,
) -> Result<Vec<EvalReport>> {
    artifacts.ensure_dir()?;
    let mut results = Vec::with_capacity(config.thresholds.len());
    for &n in &config.thresholds {
        let eval_config = config.eval_config(n);
        let report = if transfer {
            let model = model.expect("transfer always has a feature model");
            transfer_eval(model, vocab, reports, &eval_config)?
        } else {
            run_cv(reports, vocab, model, &eval_config)?
        };
        let json_path = artifacts.report(prefix, n, "json");
        let csv_path = artifacts.report(prefix, n, "csv");
        std::fs::write(&json_path, report.to_json())
            .with_context(|| format!("cannot write {}", json_path.display()))?;
        std::fs::write(&csv_path, report.to_csv())
            .with_context(|| format!("cannot write {}", csv_path.display()))?;
        out.note(
            "written",
            &format!(
                "min {n} reports/developer: mean rank-{} accuracy {} -> {}",
                report.top_k,
                report
                    .mean_accuracy
                    .map_or("-".to_string(), |a| format!("{a:.4}")),
                json_path.display()
            ),
            &[
                ("min_train_per_class", json!(n)),
                ("json_path", json!(json_path.display().to_string())),
                ("csv_path", json!(csv_path.display().to_string())),
            ],
        );
        results.push(report);
    }
    Ok(results)
}

fn finish(config: &RunConfig, out: &Output, reports: &[EvalReport], strict: bool) -> Result<()> {
    let table = render_table(reports);
    let payload = json!({
        "reports": reports
            .iter()
            .map(|r| serde_json::to_value(r).expect("report serializes"))
            .collect::<Vec<_>>(),
    });
    out.deliver("reports", &table, payload);

    let failed_folds: usize = reports
        .iter()
        .map(|r| r.folds.iter().filter(|f| f.error.is_some()).count())
        .sum();
    if failed_folds > 0 {
        let detail = format!(
            "{failed_folds} of {} folds produced no accuracy (see the report files under {})",
            reports.len() * NUM_FOLDS,
            config.out_dir.display()
        );
        if strict {
            return Err(anyhow::Error::new(DataProblem(detail)));
        }
        out.note("warning", &detail, &[("failed_folds", json!(failed_folds))]);
    }
    Ok(())
}

/// The accuracy table: one row per cross-validation run, one column per
/// threshold value, mean and standard deviation at the bottom. Errored
/// folds show `-`.
fn render_table(reports: &[EvalReport]) -> String {
    let top_k = reports.first().map_or(10, |r| r.top_k);
    let feature = reports.first().map(|r| r.feature.as_str()).unwrap_or("?");
    let classifier = reports.first().map(|r| r.classifier.as_str()).unwrap_or("?");
    let mut table = format!("rank-{top_k} accuracy, {feature} features, {classifier} classifier\n");

    let cell = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.4}"));
    let _ = write!(table, "{:<6}", "run");
    for report in reports {
        let _ = write!(table, "  {:>8}", format!("N={}", report.min_train_per_class));
    }
    table.push('\n');
    for fold in 0..NUM_FOLDS {
        let _ = write!(table, "CV#{:<3}", fold + 1);
        for report in reports {
            let _ = write!(table, "  {:>8}", cell(report.folds[fold].accuracy));
        }
        table.push('\n');
    }
    let _ = write!(table, "{:<6}", "mean");
    for report in reports {
        let _ = write!(table, "  {:>8}", cell(report.mean_accuracy));
    }
    table.push('\n');
    let _ = write!(table, "{:<6}", "std");
    for report in reports {
        let _ = write!(table, "  {:>8}", cell(report.std_accuracy));
    }
    table
}
