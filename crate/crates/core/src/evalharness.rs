//! Chronological cross-validation of triage classifiers.
//!
//! The protocol: sort the triaged reports by (reported_time, id), split
//! them into 11 contiguous sets, and run ten evaluations where CV#j trains
//! on sets 1..=j and tests on set j+1. Within each fold, developers with
//! fewer than N training bugs are pruned, test bugs whose owner is not a
//! surviving training class are dropped (closed training), and accuracy is
//! the fraction of test bugs whose owner appears in the classifier's top-k
//! ranking. The report aggregates the folds with their arithmetic mean and
//! population standard deviation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

use crate::classifiers::{
    train_cosine_index, train_mnb, train_softmax, train_svm, AnyClassifier, Classifier,
    ClassifierError, ClassifierKind, CosineAggregation, LabelIndex, RankedPrediction,
    SoftmaxConfig, SvmConfig,
};
use crate::corpus::BugReport;
use crate::dbrnna::{DbrnnaError, FeatureModel};
use crate::textprep::{clean_text, report_text, tokenize, Vocabulary};
use crate::util::{derive_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} reports for an 11-set chronological split, got {got}")]
    TooFewReports { got: usize, need: usize },
    #[error("no usable data after threshold filtering")]
    EmptyAfterFiltering,
    #[error("rankings and truths differ in length: {rankings} vs {truths}")]
    LengthMismatch { rankings: usize, truths: usize },
    #[error("accuracy of an empty prediction set is undefined")]
    Empty,
    #[error("feature kind requires a trained feature model")]
    MissingModel,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Feature(#[from] DbrnnaError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Frozen bidirectional-LSTM features.
    Dbrnna,
    /// Raw term-count bag of words over the same vocabulary.
    Bow,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Dbrnna => "dbrnna",
            FeatureKind::Bow => "bow",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dbrnna" => Ok(FeatureKind::Dbrnna),
            "bow" => Ok(FeatureKind::Bow),
            other => Err(format!("unknown feature kind `{other}` (use dbrnna|bow)")),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub feature: FeatureKind,
    pub classifier: ClassifierKind,
    /// Minimum training bugs per developer (N); developers below it are
    /// pruned from the training fold.
    pub min_train_per_class: usize,
    pub top_k: usize,
    /// Represent reports by their title alone instead of title plus
    /// description.
    pub title_only: bool,
    /// Cap on encoded sequence length for feature extraction.
    pub max_sequence_length: Option<usize>,
    pub seed: u64,
    pub softmax: SoftmaxConfig,
    pub svm: SvmConfig,
    pub mnb_alpha: f64,
    pub cosine_aggregation: CosineAggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            feature: FeatureKind::Dbrnna,
            classifier: ClassifierKind::Softmax,
            min_train_per_class: 0,
            top_k: 10,
            title_only: false,
            max_sequence_length: None,
            seed: 0,
            softmax: SoftmaxConfig::default(),
            svm: SvmConfig::default(),
            mnb_alpha: 1.0,
            cosine_aggregation: CosineAggregation::Max,
        }
    }
}

impl EvalConfig {
    /// Canonical one-line rendering of every field, hashed into run
    /// metadata so reports carrying the same hash are comparable.
    pub fn canonical_string(&self) -> String {
        let agg = match self.cosine_aggregation {
            CosineAggregation::Max => "max",
            CosineAggregation::Mean => "mean",
        };
        format!(
            "feature={} classifier={} n={} top_k={} title_only={} max_len={} seed={} \
             softmax_lr={} softmax_epochs={} softmax_l2={} svm_c={} svm_epochs={} \
             mnb_alpha={} cosine_agg={agg}",
            self.feature,
            self.classifier,
            self.min_train_per_class,
            self.top_k,
            self.title_only,
            self.max_sequence_length
                .map_or("none".to_string(), |v| v.to_string()),
            self.seed,
            self.softmax.lr,
            self.softmax.epochs,
            self.softmax.l2,
            self.svm.c,
            self.svm.epochs,
            self.mnb_alpha,
        )
    }
}

/// Eleven chronologically contiguous index sets over one report slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    sets: Vec<Vec<usize>>,
}

pub const NUM_SETS: usize = 11;
pub const NUM_FOLDS: usize = NUM_SETS - 1;

/// Splits reports into 11 chronologically ordered sets of indices into
/// `reports`. Ordering is (reported_time, id); when the count is not
/// divisible by 11 the earliest sets take the extra report each.
pub fn chronological_folds(reports: &[BugReport]) -> Result<FoldPlan, EvalError> {
    if reports.len() < NUM_SETS {
        return Err(EvalError::TooFewReports {
            got: reports.len(),
            need: NUM_SETS,
        });
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| (reports[i].reported_time, reports[i].id));
    let base = reports.len() / NUM_SETS;
    let remainder = reports.len() % NUM_SETS;
    let mut sets = Vec::with_capacity(NUM_SETS);
    let mut cursor = 0;
    for s in 0..NUM_SETS {
        let size = base + usize::from(s < remainder);
        sets.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(FoldPlan { sets })
}

impl FoldPlan {
    pub fn set_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Train/test index lists for CV#j, 1-based: train = sets 1..=j,
    /// test = set j+1.
    pub fn fold(&self, j: usize) -> (Vec<usize>, Vec<usize>) {
        assert!((1..=NUM_FOLDS).contains(&j), "fold index out of range");
        let train = self.sets[..j].iter().flatten().copied().collect();
        (train, self.sets[j].clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ThresholdOutcome {
    /// Surviving positions within the fold's training list.
    pub train_kept: Vec<usize>,
    /// Surviving positions within the fold's test list.
    pub test_kept: Vec<usize>,
    pub dropped_train: usize,
    pub dropped_test: usize,
}

/// Prunes training developers with fewer than `n` bugs, then drops test
/// bugs whose owner is not among the surviving training classes. The
/// closed-training rule applies at every `n`, including 0.
pub fn apply_threshold(
    train_owners: &[&str],
    test_owners: &[&str],
    n: usize,
) -> Result<ThresholdOutcome, EvalError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &o in train_owners {
        *counts.entry(o).or_insert(0) += 1;
    }
    let surviving: std::collections::BTreeSet<&str> = counts
        .iter()
        .filter(|(_, &c)| c >= n)
        .map(|(&o, _)| o)
        .collect();
    let train_kept: Vec<usize> = train_owners
        .iter()
        .enumerate()
        .filter(|(_, o)| surviving.contains(*o))
        .map(|(i, _)| i)
        .collect();
    let test_kept: Vec<usize> = test_owners
        .iter()
        .enumerate()
        .filter(|(_, o)| surviving.contains(*o))
        .map(|(i, _)| i)
        .collect();
    if train_kept.is_empty() || test_kept.is_empty() {
        return Err(EvalError::EmptyAfterFiltering);
    }
    Ok(ThresholdOutcome {
        dropped_train: train_owners.len() - train_kept.len(),
        dropped_test: test_owners.len() - test_kept.len(),
        train_kept,
        test_kept,
    })
}

/// Fraction of instances whose true class appears in the first k ranking
/// slots.
pub fn topk_accuracy(
    rankings: &[RankedPrediction],
    truths: &[usize],
    k: usize,
) -> Result<f64, EvalError> {
    if rankings.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            rankings: rankings.len(),
            truths: truths.len(),
        });
    }
    if rankings.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, &t)| r.hits_top_k(t, k))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FoldResult {
    /// 1-based CV index.
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    pub dropped_train_reports: usize,
    pub dropped_test_reports: usize,
    pub accuracy: Option<f64>,
    /// Why the fold produced no accuracy, when it did not.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RunMetadata {
    /// SHA-256 of the canonical config string.
    pub config_hash: String,
    /// SHA-256 over the evaluated reports' (id, reported_time, owner)
    /// lines in chronological order.
    pub corpus_checksum: String,
    pub seed: u64,
    /// Per-fold seeds derived from (seed, fold index); recorded so fold
    /// work can be reproduced in isolation.
    pub fold_seeds: Vec<u64>,
    /// Dispersion convention for `std_accuracy`.
    pub std_kind: String,
}

/// Per-fold report id usage, for leakage auditing. Not serialized.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub fold_train_ids: Vec<Vec<i64>>,
    pub fold_test_ids: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature: String,
    pub classifier: String,
    pub min_train_per_class: usize,
    pub top_k: usize,
    pub title_only: bool,
    pub folds: Vec<FoldResult>,
    /// Mean over folds that produced an accuracy.
    pub mean_accuracy: Option<f64>,
    /// Population standard deviation over the same folds.
    pub std_accuracy: Option<f64>,
    /// Reports whose text cleaned to nothing; they keep a zero feature
    /// vector and stay in their folds.
    pub empty_feature_reports: usize,
    pub metadata: RunMetadata,
    #[serde(skip)]
    pub provenance: Provenance,
}

fn corpus_checksum(reports: &[BugReport], order: &FoldPlan) -> String {
    let mut lines = String::new();
    for set in order.sets() {
        for &i in set {
            let r = &reports[i];
            let _ = writeln!(
                lines,
                "{}\t{}\t{}",
                r.id,
                r.reported_time,
                r.owner.as_deref().unwrap_or("")
            );
        }
    }
    sha256_hex(lines.as_bytes())
}

fn extract_all_features(
    reports: &[BugReport],
    vocab: &Vocabulary,
    model: Option<&FeatureModel<f64>>,
    config: &EvalConfig,
) -> Result<(Vec<Vec<f64>>, usize), EvalError> {
    let mut features = Vec::with_capacity(reports.len());
    let mut empty = 0usize;
    for report in reports {
        let text = report_text(&report.title, &report.description, config.title_only);
        let tokens = tokenize(&clean_text(&text));
        match config.feature {
            FeatureKind::Bow => {
                if tokens.is_empty() {
                    empty += 1;
                }
                let counts = vocab.bow_vector(&tokens);
                features.push(counts.into_iter().map(f64::from).collect());
            }
            FeatureKind::Dbrnna => {
                let model = model.ok_or(EvalError::MissingModel)?;
                let encoded = vocab.encode(&tokens, config.max_sequence_length);
                if encoded.is_empty() {
                    // Cleaned to nothing: substitute the zero vector and
                    // keep the report so accuracy is not inflated.
                    empty += 1;
                    features.push(vec![0.0; model.feature_dim()]);
                } else {
                    let r = model.extract_feature(&encoded)?;
                    features.push(r);
                }
            }
        }
    }
    Ok((features, empty))
}

fn train_fold_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &EvalConfig,
) -> Result<AnyClassifier, ClassifierError> {
    match config.classifier {
        ClassifierKind::Softmax => Ok(AnyClassifier::Softmax(train_softmax(
            features,
            labels,
            num_classes,
            &config.softmax,
        )?)),
        ClassifierKind::Svm => Ok(AnyClassifier::Svm(train_svm(
            features,
            labels,
            num_classes,
            &config.svm,
        )?)),
        ClassifierKind::Mnb => Ok(AnyClassifier::Mnb(train_mnb(
            features,
            labels,
            num_classes,
            config.mnb_alpha,
        )?)),
        ClassifierKind::Cosine => Ok(AnyClassifier::Cosine(train_cosine_index(
            features,
            labels,
            num_classes,
            config.cosine_aggregation,
        )?)),
    }
}

/// Runs the full ten-fold chronological protocol over the triaged
/// partition. Features are extracted once with the frozen inputs (model
/// and vocabulary are never retrained here), so no test-fold text can
/// reach feature learning; per-fold failures are recorded in the report
/// while the remaining folds still run.
pub fn run_cv(
    reports: &[BugReport],
    vocab: &Vocabulary,
    model: Option<&FeatureModel<f64>>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    assert!(config.top_k >= 1, "top_k must be at least 1");
    let plan = chronological_folds(reports)?;
    if config.feature == FeatureKind::Dbrnna && model.is_none() {
        return Err(EvalError::MissingModel);
    }
    let (features, empty_feature_reports) = extract_all_features(reports, vocab, model, config)?;

    let mut report = EvalReport {
        feature: config.feature.to_string(),
        classifier: config.classifier.to_string(),
        min_train_per_class: config.min_train_per_class,
        top_k: config.top_k,
        title_only: config.title_only,
        empty_feature_reports,
        metadata: RunMetadata {
            config_hash: sha256_hex(config.canonical_string().as_bytes()),
            corpus_checksum: corpus_checksum(reports, &plan),
            seed: config.seed,
            fold_seeds: (1..=NUM_FOLDS as u64)
                .map(|j| derive_seed(config.seed, j))
                .collect(),
            std_kind: "population".to_string(),
        },
        ..EvalReport::default()
    };

    let owner_of = |i: usize| -> &str { reports[i].owner.as_deref().unwrap_or("") };
    for j in 1..=NUM_FOLDS {
        let (train_idx, test_idx) = plan.fold(j);
        let train_owners: Vec<&str> = train_idx.iter().map(|&i| owner_of(i)).collect();
        let test_owners: Vec<&str> = test_idx.iter().map(|&i| owner_of(i)).collect();
        let mut fold = FoldResult {
            fold: j,
            ..FoldResult::default()
        };
        match evaluate_fold(
            &train_idx,
            &test_idx,
            &train_owners,
            &test_owners,
            &features,
            config,
        ) {
            Ok(outcome) => {
                fold.train_size = outcome.train_size;
                fold.test_size = outcome.test_size;
                fold.num_classes = outcome.num_classes;
                fold.dropped_train_reports = outcome.dropped_train;
                fold.dropped_test_reports = outcome.dropped_test;
                fold.accuracy = Some(outcome.accuracy);
                report
                    .provenance
                    .fold_train_ids
                    .push(outcome.train_ids.iter().map(|&i| reports[i].id).collect());
                report
                    .provenance
                    .fold_test_ids
                    .push(outcome.test_ids.iter().map(|&i| reports[i].id).collect());
            }
            Err(e) => {
                fold.train_size = train_idx.len();
                fold.test_size = test_idx.len();
                fold.error = Some(e.to_string());
                report.provenance.fold_train_ids.push(Vec::new());
                report.provenance.fold_test_ids.push(Vec::new());
            }
        }
        report.folds.push(fold);
    }

    let accuracies: Vec<f64> = report.folds.iter().filter_map(|f| f.accuracy).collect();
    if !accuracies.is_empty() {
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / accuracies.len() as f64;
        report.mean_accuracy = Some(mean);
        report.std_accuracy = Some(var.sqrt());
    }
    Ok(report)
}

struct FoldOutcome {
    train_size: usize,
    test_size: usize,
    num_classes: usize,
    dropped_train: usize,
    dropped_test: usize,
    accuracy: f64,
    /// Report indices (into the full slice) actually consumed.
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
}

fn evaluate_fold(
    train_idx: &[usize],
    test_idx: &[usize],
    train_owners: &[&str],
    test_owners: &[&str],
    features: &[Vec<f64>],
    config: &EvalConfig,
) -> Result<FoldOutcome, EvalError> {
    let outcome = apply_threshold(train_owners, test_owners, config.min_train_per_class)?;
    let kept_train: Vec<usize> = outcome.train_kept.iter().map(|&p| train_idx[p]).collect();
    let kept_test: Vec<usize> = outcome.test_kept.iter().map(|&p| test_idx[p]).collect();

    let index = LabelIndex::from_owners(outcome.train_kept.iter().map(|&p| train_owners[p]));
    let train_labels: Vec<usize> = outcome
        .train_kept
        .iter()
        .map(|&p| index.index_of(train_owners[p]).expect("owner was indexed"))
        .collect();
    let truths: Vec<usize> = outcome
        .test_kept
        .iter()
        .map(|&p| {
            index
                .index_of(test_owners[p])
                .expect("closed training keeps only known owners")
        })
        .collect();

    let train_features: Vec<Vec<f64>> =
        kept_train.iter().map(|&i| features[i].clone()).collect();
    let classifier = train_fold_classifier(&train_features, &train_labels, index.len(), config)?;
    let rankings: Vec<RankedPrediction> = kept_test
        .iter()
        .map(|&i| classifier.predict(&features[i]))
        .collect::<Result<_, _>>()?;
    let accuracy = topk_accuracy(&rankings, &truths, config.top_k)?;
    Ok(FoldOutcome {
        train_size: kept_train.len(),
        test_size: kept_test.len(),
        num_classes: index.len(),
        dropped_train: outcome.dropped_train,
        dropped_test: outcome.dropped_test,
        accuracy,
        train_ids: kept_train,
        test_ids: kept_test,
    })
}

/// Evaluates a frozen source-corpus feature model on a different (target)
/// corpus: target reports are encoded with the SOURCE vocabulary (unknown
/// words collapse to `<unk>`), features come from the frozen source model,
/// and only the classifier is retrained on the target's cumulative folds —
/// developer label spaces do not transfer across projects. With target =
/// source this reduces exactly to `run_cv`.
pub fn transfer_eval(
    source_model: &FeatureModel<f64>,
    source_vocab: &Vocabulary,
    target_reports: &[BugReport],
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let cfg = EvalConfig {
        feature: FeatureKind::Dbrnna,
        ..*config
    };
    run_cv(target_reports, source_vocab, Some(source_model), &cfg)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<EvalReport, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// One row per fold plus a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "fold,train_size,test_size,num_classes,dropped_train,dropped_test,accuracy,error\n",
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f.fold,
                f.train_size,
                f.test_size,
                f.num_classes,
                f.dropped_train_reports,
                f.dropped_test_reports,
                f.accuracy.map_or(String::new(), |a| format!("{a:.6}")),
                f.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        let _ = writeln!(
            out,
            "summary,,,,,,{},{}",
            self.mean_accuracy
                .map_or(String::new(), |a| format!("{a:.6}")),
            self.std_accuracy
                .map_or(String::new(), |a| format!("{a:.6}")),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: i64, time: i64, owner: &str) -> BugReport {
        BugReport {
            id,
            title: format!("issue {id}"),
            description: format!("details for issue {id}"),
            owner: if owner.is_empty() {
                None
            } else {
                Some(owner.to_string())
            },
            status: "fixed".to_string(),
            report_type: Some("bug".to_string()),
            reported_time: time,
        }
    }

    #[test]
    fn twenty_two_reports_split_into_eleven_pairs() {
        let reports: Vec<BugReport> = (0..22).map(|i| report(i, 100 + i, "dev")).collect();
        let plan = chronological_folds(&reports).unwrap();
        assert_eq!(plan.set_sizes(), vec![2; 11]);
        let (train, test) = plan.fold(1);
        assert_eq!(train, vec![0, 1]);
        assert_eq!(test, vec![2, 3]);
        let (train, test) = plan.fold(10);
        assert_eq!(train.len(), 20);
        assert_eq!(test, vec![20, 21]);
    }

    #[test]
    fn remainder_goes_to_the_earliest_sets() {
        let reports: Vec<BugReport> = (0..25).map(|i| report(i, 100 + i, "dev")).collect();
        let plan = chronological_folds(&reports).unwrap();
        assert_eq!(plan.set_sizes(), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn folds_respect_chronology_even_for_shuffled_input() {
        // Deliberately scrambled times; ties broken by id.
        let times = [50, 10, 30, 10, 90, 70, 20, 60, 40, 80, 15, 35];
        let reports: Vec<BugReport> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| report(i as i64, t, "dev"))
            .collect();
        let plan = chronological_folds(&reports).unwrap();
        for j in 1..=NUM_FOLDS {
            let (train, test) = plan.fold(j);
            let max_train = train
                .iter()
                .map(|&i| (reports[i].reported_time, reports[i].id))
                .max()
                .unwrap();
            let min_test = test
                .iter()
                .map(|&i| (reports[i].reported_time, reports[i].id))
                .min()
                .unwrap();
            assert!(max_train <= min_test);
        }
    }

    #[test]
    fn too_few_reports_is_an_error() {
        let reports: Vec<BugReport> = (0..10).map(|i| report(i, i, "dev")).collect();
        assert!(matches!(
            chronological_folds(&reports),
            Err(EvalError::TooFewReports { got: 10, need: 11 })
        ));
    }

    #[test]
    fn threshold_zero_keeps_known_owners_only() {
        let train = ["a", "b", "a"];
        let test = ["a", "c", "b"];
        let out = apply_threshold(&train, &test, 0).unwrap();
        assert_eq!(out.train_kept, vec![0, 1, 2]);
        assert_eq!(out.test_kept, vec![0, 2]); // "c" never trained
        assert_eq!(out.dropped_train, 0);
        assert_eq!(out.dropped_test, 1);
    }

    #[test]
    fn threshold_prunes_sparse_developers_and_their_test_bugs() {
        let train = ["a", "a", "a", "b"];
        let test = ["a", "b", "b"];
        let out = apply_threshold(&train, &test, 2).unwrap();
        assert_eq!(out.train_kept, vec![0, 1, 2]);
        assert_eq!(out.test_kept, vec![0]);
        assert_eq!(out.dropped_train, 1);
        assert_eq!(out.dropped_test, 2);
    }

    #[test]
    fn threshold_above_every_count_empties_the_fold() {
        let train = ["a", "b"];
        let test = ["a"];
        assert!(matches!(
            apply_threshold(&train, &test, 5),
            Err(EvalError::EmptyAfterFiltering)
        ));
    }

    #[test]
    fn topk_accuracy_counts_hits_directly() {
        let rank = |order: Vec<usize>| {
            let mut scores = vec![0.0; order.len()];
            for (pos, &class) in order.iter().enumerate() {
                scores[class] = (order.len() - pos) as f64;
            }
            RankedPrediction::from_scores(scores)
        };
        // Truths sit at ranks 1, 4, and 11 of a 12-class ranking.
        let order: Vec<usize> = (0..12).collect();
        let rankings = vec![rank(order.clone()), rank(order.clone()), rank(order)];
        let truths = [0usize, 3, 10];
        assert!((topk_accuracy(&rankings, &truths, 10).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((topk_accuracy(&rankings, &truths, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(topk_accuracy(&rankings, &truths, 12).unwrap(), 1.0);
        for k in 1..=12 {
            let a = topk_accuracy(&rankings, &truths, k).unwrap();
            let b = topk_accuracy(&rankings, &truths, k + 1).unwrap();
            assert!(b >= a, "accuracy must not decrease in k");
        }
    }

    #[test]
    fn topk_rejects_mismatched_or_empty_inputs() {
        let rankings = vec![RankedPrediction::from_scores(vec![1.0, 0.0])];
        assert!(matches!(
            topk_accuracy(&rankings, &[0, 1], 1),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            topk_accuracy(&[], &[], 1),
            Err(EvalError::Empty)
        ));
    }

    fn owner_corpus() -> Vec<BugReport> {
        // 33 reports, three developers with distinctive vocabulary.
        let vocab_of = ["render pipeline crashes", "network socket stalls", "parser syntax error"];
        let owners = ["ann", "bob", "cat"];
        (0..33)
            .map(|i| {
                let who = (i % 3) as usize;
                let mut r = report(i, 1_000 + i, owners[who]);
                r.title = format!("{} case {i}", vocab_of[who]);
                r.description = format!("{} seen again in build {i}", vocab_of[who]);
                r
            })
            .collect()
    }

    fn bow_vocab(reports: &[BugReport]) -> Vocabulary {
        let tokens: Vec<String> = reports
            .iter()
            .flat_map(|r| tokenize(&clean_text(&report_text(&r.title, &r.description, false))))
            .collect();
        crate::textprep::build_vocabulary(&tokens, 1)
    }

    #[test]
    fn bow_cv_learns_distinctive_vocabulary() {
        let reports = owner_corpus();
        let vocab = bow_vocab(&reports);
        let config = EvalConfig {
            feature: FeatureKind::Bow,
            classifier: ClassifierKind::Mnb,
            top_k: 1,
            ..EvalConfig::default()
        };
        let report = run_cv(&reports, &vocab, None, &config).unwrap();
        assert_eq!(report.folds.len(), 10);
        let mean = report.mean_accuracy.unwrap();
        assert!(mean > 0.9, "distinctive vocabulary should be easy: {mean}");
        // Identical per-fold accuracies give zero dispersion.
        let accs: Vec<f64> = report.folds.iter().filter_map(|f| f.accuracy).collect();
        if accs.iter().all(|&a| a == accs[0]) {
            assert_eq!(report.std_accuracy.unwrap(), 0.0);
        }
        // Mean/std recompute exactly from the stored fold values.
        let recomputed = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((recomputed - mean).abs() < 1e-15);
    }

    #[test]
    fn double_run_is_bit_identical() {
        let reports = owner_corpus();
        let vocab = bow_vocab(&reports);
        let config = EvalConfig {
            feature: FeatureKind::Bow,
            classifier: ClassifierKind::Softmax,
            ..EvalConfig::default()
        };
        let a = run_cv(&reports, &vocab, None, &config).unwrap();
        let b = run_cv(&reports, &vocab, None, &config).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn fold_errors_are_recorded_without_killing_the_run() {
        // Every developer owns exactly one report, so N=2 empties every
        // fold's training set.
        let reports: Vec<BugReport> = (0..22)
            .map(|i| report(i, 100 + i, &format!("dev{i}")))
            .collect();
        let vocab = bow_vocab(&reports);
        let config = EvalConfig {
            feature: FeatureKind::Bow,
            classifier: ClassifierKind::Mnb,
            min_train_per_class: 2,
            ..EvalConfig::default()
        };
        let report = run_cv(&reports, &vocab, None, &config).unwrap();
        assert_eq!(report.folds.len(), 10);
        assert!(report.folds.iter().all(|f| f.accuracy.is_none()));
        assert!(report.folds.iter().all(|f| f.error.is_some()));
        assert!(report.mean_accuracy.is_none());
    }

    #[test]
    fn provenance_never_mixes_train_and_test_ids() {
        let reports = owner_corpus();
        let vocab = bow_vocab(&reports);
        let config = EvalConfig {
            feature: FeatureKind::Bow,
            classifier: ClassifierKind::Cosine,
            ..EvalConfig::default()
        };
        let report = run_cv(&reports, &vocab, None, &config).unwrap();
        for (train, test) in report
            .provenance
            .fold_train_ids
            .iter()
            .zip(&report.provenance.fold_test_ids)
        {
            for id in test {
                assert!(!train.contains(id), "report {id} used for both roles");
            }
        }
    }

    #[test]
    fn report_serialization_round_trips() {
        let reports = owner_corpus();
        let vocab = bow_vocab(&reports);
        let config = EvalConfig {
            feature: FeatureKind::Bow,
            classifier: ClassifierKind::Svm,
            ..EvalConfig::default()
        };
        let report = run_cv(&reports, &vocab, None, &config).unwrap();
        let parsed = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed.folds, report.folds);
        assert_eq!(parsed.mean_accuracy, report.mean_accuracy);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 12); // header + 10 folds + summary
        assert!(csv.starts_with("fold,"));
        assert!(csv.lines().last().unwrap().starts_with("summary,"));
    }
}
