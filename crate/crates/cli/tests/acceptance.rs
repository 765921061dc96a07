//! End-to-end acceptance checks for the command-line driver: the full
//! pipeline on the bundled 500-report tracker export, reproducibility of
//! the emitted reports, and single-prediction latency at production size.
//! Each test prints one `PASS` line with its measured margin.

mod common;

use std::time::Instant;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triage_core::classifiers::{train_softmax, AnyClassifier, SoftmaxConfig};
use triage_core::dbrnna::{DbrnnaConfig, FeatureModel};
use triage_core::embed::EmbeddingMatrix;
use triage_core::evalharness::EvalReport;
use triage_core::nncore::Tensor;
use triage_core::textprep::build_vocabulary;

/// The whole pipeline — ingest, preprocess, train-embed, train-feature,
/// evaluate — on the bundled 500-report export at 32 hidden units, sweeping
/// every threshold in {0, 5, 10, 20}. Must finish well inside ten minutes
/// and emit a well-formed ten-fold report per threshold.
#[test]
fn pipeline_smoke_covers_ingest_through_evaluation() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let out_dir = dir.path().join("out");

    let sets = build_pipeline(&corpus, &out_dir);
    let evaluate = ok(with_sets(triage().arg("evaluate"), &sets));
    assert!(
        evaluate.stdout.contains("CV#10"),
        "per-fold table missing:\n{}",
        evaluate.stdout
    );

    for n in [0usize, 5, 10, 20] {
        let path = out_dir.join(format!("report-n{n}.json"));
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{} not written: {e}", path.display()));
        let report = EvalReport::from_json(&text)
            .unwrap_or_else(|e| panic!("{} is not schema-valid: {e}", path.display()));
        assert_eq!(report.min_train_per_class, n);
        assert_eq!(report.folds.len(), 10, "report-n{n} must carry ten folds");
        for (i, fold) in report.folds.iter().enumerate() {
            assert_eq!(fold.fold, i + 1);
            assert!(
                fold.accuracy.is_some() != fold.error.is_some(),
                "fold {} must carry exactly one of accuracy/error",
                fold.fold
            );
        }
        assert!(out_dir.join(format!("report-n{n}.csv")).exists());
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "pipeline took {elapsed:?}, budget is 10 minutes"
    );
    println!(
        "PASS pipeline smoke: ingest -> evaluate on 500 reports, four thresholds, \
         in {:.1}s (< 600s)",
        elapsed.as_secs_f64()
    );
}

/// Re-running evaluation over the same artifacts and configuration
/// reproduces every report file byte for byte, and cross-project transfer
/// pointed back at the source corpus writes the same report evaluation did.
#[test]
fn reports_are_reproducible_and_transfer_degenerates_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let out_dir = dir.path().join("out");

    let mut sets = build_pipeline(&corpus, &out_dir);
    sets.push("thresholds=0,5".to_string());
    ok(with_sets(triage().arg("evaluate"), &sets));
    let first: Vec<Vec<u8>> = [0, 5]
        .iter()
        .map(|n| std::fs::read(out_dir.join(format!("report-n{n}.json"))).unwrap())
        .collect();

    ok(with_sets(triage().arg("evaluate"), &sets));
    for (i, n) in [0, 5].iter().enumerate() {
        let second = std::fs::read(out_dir.join(format!("report-n{n}.json"))).unwrap();
        assert_eq!(first[i], second, "report-n{n}.json changed between runs");
    }

    ok(with_sets(
        triage()
            .arg("transfer")
            .args(["--target", corpus.to_str().unwrap()]),
        &sets,
    ));
    for (i, n) in [0, 5].iter().enumerate() {
        let transfer = std::fs::read(out_dir.join(format!("transfer-n{n}.json"))).unwrap();
        assert_eq!(
            first[i], transfer,
            "transfer back onto the source corpus must reproduce report-n{n}.json"
        );
    }
    println!(
        "PASS reproducibility: evaluate re-run and source-target transfer both \
         byte-identical across 2 thresholds"
    );
}

/// Ranking developers for one report with a full-size 300-unit extractor
/// stays under the 50 ms latency budget, and the prediction itself is a
/// pure function of the inputs.
#[test]
fn prediction_latency_stays_under_budget_at_full_size() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir_all(&out_dir).unwrap();

    // Full-size artifacts, no training needed: a fresh 300-unit extractor
    // over a 300-word vocabulary and a softmax head over its features.
    let words: Vec<String> = (0..300).map(|i| format!("w{i:03}")).collect();
    let vocab = build_vocabulary(&words, 1);
    vocab.save(&out_dir.join("vocab.txt")).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let embedding = EmbeddingMatrix::<f64>::from_tensor(Tensor::uniform(
        vocab.size(),
        300,
        -0.1,
        0.1,
        &mut rng,
    ));
    let config = DbrnnaConfig {
        hidden_units: 300,
        ..DbrnnaConfig::default()
    };
    let model = FeatureModel::init(config, embedding);
    let feature_dim = model.feature_dim();
    model.save(&out_dir.join("feature.ckpt")).unwrap();

    let features: Vec<Vec<f64>> = (0..6)
        .map(|_| Tensor::<f64>::uniform(1, feature_dim, -1.0, 1.0, &mut rng).data().to_vec())
        .collect();
    let labels = vec![0, 1, 2, 0, 1, 2];
    let softmax = train_softmax(
        &features,
        &labels,
        3,
        &SoftmaxConfig {
            epochs: 20,
            ..SoftmaxConfig::default()
        },
    )
    .unwrap();
    let classes: Vec<String> = ["ana@x", "bo@x", "cy@x"].iter().map(|s| s.to_string()).collect();
    AnyClassifier::Softmax(softmax)
        .save(&out_dir.join("classifier.ckpt"), &classes)
        .unwrap();

    let description = words[..50].join(" ");
    let predict = |k: &str| {
        run(triage().args([
            "predict",
            "--set",
            &format!("out_dir={}", out_dir.display()),
            "--title",
            "w000 w007 w013",
            "--description",
            &description,
            "-k",
            k,
        ]))
    };

    // Latency: best of three, so a transiently loaded machine cannot fail
    // an otherwise fast build.
    let mut best_ms = f64::INFINITY;
    let mut last = None;
    for _ in 0..3 {
        let result = predict("10");
        assert_eq!(result.code, 0, "stderr:\n{}", result.stderr);
        let timing_line = result
            .stderr
            .lines()
            .find(|l| l.starts_with("[timing]"))
            .expect("predict reports wall-clock on stderr");
        let ms: f64 = timing_line
            .split_whitespace()
            .rev()
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        best_ms = best_ms.min(ms);
        if let Some(previous) = last.replace(result.stdout.clone()) {
            assert_eq!(previous, result.stdout, "prediction must be deterministic");
        }
    }
    assert!(
        best_ms < 50.0,
        "prediction took {best_ms:.2} ms at 300 hidden units, budget is 50 ms"
    );

    let single = predict("1");
    let parsed: serde_json::Value = serde_json::from_str(single.stdout.trim()).unwrap();
    assert_eq!(parsed["developers"].as_array().unwrap().len(), 1);
    assert!(classes.contains(
        &parsed["developers"][0]["name"].as_str().unwrap().to_string()
    ));
    println!(
        "PASS prediction latency: {best_ms:.2} ms at 300 hidden units (< 50 ms), \
         deterministic across repeats"
    );
}
