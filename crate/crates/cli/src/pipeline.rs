//! The artifact pipeline: preprocess → train-embed → train-feature →
//! train-classifier, plus the shared loaders and featurization used by
//! evaluate and predict.
//!
//! Everything a command produces lands under `out_dir` with a fixed name,
//! so later stages can find earlier outputs without extra flags:
//!
//! | artifact          | produced by      | contents                         |
//! |-------------------|------------------|----------------------------------|
//! | `d1.jsonl`        | preprocess       | untriaged reports, chronological |
//! | `d2.jsonl`        | preprocess       | triaged reports, chronological   |
//! | `vocab.txt`       | preprocess       | token index over all D1 text     |
//! | `embedding.ckpt`  | train-embed      | skip-gram word vectors           |
//! | `feature.ckpt`    | train-feature    | recurrent feature extractor      |
//! | `classifier.ckpt` | train-classifier | deployable classifier + classes  |

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use triage_core::classifiers::{
    train_cosine_index, train_mnb, train_softmax, train_svm, AnyClassifier, ClassifierKind,
    LabelIndex,
};
use triage_core::corpus::{corpus_stats, load_corpus, partition, sort_chronologically, BugReport};
use triage_core::dbrnna::{train_lm, FeatureModel};
use triage_core::embed::{train_skipgram, EmbeddingMatrix};
use triage_core::evalharness::FeatureKind;
use triage_core::textprep::{build_vocabulary, clean_text, report_text, tokenize, Vocabulary};

use crate::config::RunConfig;
use crate::output::Output;
use crate::DataProblem;

pub struct Artifacts {
    out_dir: PathBuf,
}

impl Artifacts {
    pub fn new(config: &RunConfig) -> Artifacts {
        Artifacts {
            out_dir: config.out_dir.clone(),
        }
    }

    pub fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))
    }

    pub fn d1(&self) -> PathBuf {
        self.out_dir.join("d1.jsonl")
    }

    pub fn d2(&self) -> PathBuf {
        self.out_dir.join("d2.jsonl")
    }

    pub fn vocab(&self) -> PathBuf {
        self.out_dir.join("vocab.txt")
    }

    pub fn embedding(&self) -> PathBuf {
        self.out_dir.join("embedding.ckpt")
    }

    pub fn feature(&self) -> PathBuf {
        self.out_dir.join("feature.ckpt")
    }

    pub fn classifier(&self) -> PathBuf {
        self.out_dir.join("classifier.ckpt")
    }

    pub fn report(&self, prefix: &str, min_train_per_class: usize, ext: &str) -> PathBuf {
        self.out_dir
            .join(format!("{prefix}-n{min_train_per_class}.{ext}"))
    }
}

/// A missing pipeline artifact, with the command that produces it. Maps to
/// exit code 2: the data simply is not there yet.
fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(anyhow::Error::new(DataProblem(format!(
            "missing artifact {}: run `triage {produced_by}` first",
            path.display()
        ))))
    }
}

pub fn load_vocab(artifacts: &Artifacts) -> Result<Vocabulary> {
    let path = artifacts.vocab();
    require(&path, "preprocess")?;
    Ok(Vocabulary::load(&path)?)
}

/// Loads a preprocessed split. These are our own artifacts, so parsing is
/// strict: a malformed line means the directory was tampered with.
pub fn load_split(artifacts: &Artifacts, which: &str) -> Result<Vec<BugReport>> {
    let path = match which {
        "d1" => artifacts.d1(),
        "d2" => artifacts.d2(),
        other => unreachable!("unknown split {other}"),
    };
    require(&path, "preprocess")?;
    let loaded = load_corpus(&path, true)
        .with_context(|| format!("artifact {} is corrupted", path.display()))?;
    Ok(loaded.reports)
}

pub fn load_embedding(artifacts: &Artifacts) -> Result<EmbeddingMatrix<f64>> {
    let path = artifacts.embedding();
    require(&path, "train-embed")?;
    let (matrix, _) = EmbeddingMatrix::load(&path)?;
    Ok(matrix)
}

pub fn load_feature_model(artifacts: &Artifacts) -> Result<FeatureModel<f64>> {
    let path = artifacts.feature();
    require(&path, "train-feature")?;
    Ok(FeatureModel::load(&path)?)
}

pub fn load_classifier(artifacts: &Artifacts) -> Result<(AnyClassifier, Vec<String>)> {
    let path = artifacts.classifier();
    require(&path, "train-classifier")?;
    Ok(AnyClassifier::load(&path)?)
}

/// Cleaned, tokenized classification text for one report.
pub fn report_tokens(report: &BugReport, title_only: bool) -> Vec<String> {
    let text = report_text(&report.title, &report.description, title_only);
    tokenize(&clean_text(&text))
}

/// Token-index sequences for D1 language-model training, capped at
/// `max_sequence_length`. Empty sequences are kept: the trainers skip what
/// they cannot use and report it.
pub fn encode_sequences(
    reports: &[BugReport],
    vocab: &Vocabulary,
    config: &RunConfig,
) -> Vec<Vec<usize>> {
    reports
        .iter()
        .map(|r| {
            let tokens = report_tokens(r, config.title_only);
            vocab.encode(&tokens, config.max_sequence_length)
        })
        .collect()
}

fn write_jsonl(path: &Path, reports: &[BugReport]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    for report in reports {
        serde_json::to_writer(&mut file, report)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits the corpus into D1/D2, sorts both chronologically, and builds the
/// vocabulary. The vocabulary always covers full D1 text (title and
/// description) regardless of `title_only`, so the flag can be flipped at
/// evaluation time without rebuilding artifacts; unused entries are inert.
pub fn preprocess(config: &RunConfig, out: &Output) -> Result<()> {
    let artifacts = Artifacts::new(config);
    artifacts.ensure_dir()?;

    let loaded = load_corpus(&config.corpus, false)
        .with_context(|| format!("cannot load corpus {}", config.corpus.display()))?;
    if !loaded.skipped.is_empty() {
        out.note(
            "skipped",
            &format!("{} malformed records ignored", loaded.skipped.len()),
            &[("count", json!(loaded.skipped.len()))],
        );
    }
    if loaded.reports.is_empty() {
        return Err(anyhow::Error::new(DataProblem(format!(
            "corpus {} contains no valid reports",
            config.corpus.display()
        ))));
    }

    let mut split = partition(loaded.reports, &config.partition_rules());
    sort_chronologically(&mut split.d1);
    sort_chronologically(&mut split.d2);
    let stats = corpus_stats(&split);
    out.note(
        "stats",
        &format!(
            "{} reports: {} untriaged (d1), {} triaged (d2), {} developers",
            stats.total, stats.d1_size, stats.d2_size, stats.d2_owners
        ),
        &[("stats", serde_json::to_value(&stats)?)],
    );

    if split.d1.is_empty() {
        return Err(anyhow::Error::new(DataProblem(
            "no untriaged reports: the feature learner needs a non-empty d1 split".to_string(),
        )));
    }

    let tokens: Vec<String> = split
        .d1
        .iter()
        .flat_map(|r| report_tokens(r, false))
        .collect();
    let vocab = build_vocabulary(&tokens, config.min_frequency);
    if vocab.size() <= Vocabulary::NUM_SPECIALS {
        return Err(anyhow::Error::new(DataProblem(format!(
            "no token appears at least {} times in d1; lower min_frequency",
            config.min_frequency
        ))));
    }

    write_jsonl(&artifacts.d1(), &split.d1)?;
    write_jsonl(&artifacts.d2(), &split.d2)?;
    vocab.save(&artifacts.vocab())?;
    out.note(
        "written",
        &format!(
            "d1.jsonl ({}), d2.jsonl ({}), vocab.txt ({} entries) under {}",
            split.d1.len(),
            split.d2.len(),
            vocab.size(),
            artifacts.out_dir.display()
        ),
        &[
            ("vocab_size", json!(vocab.size())),
            ("out_dir", json!(artifacts.out_dir.display().to_string())),
        ],
    );
    Ok(())
}

/// Trains skip-gram word vectors on the untriaged split.
pub fn train_embed(config: &RunConfig, out: &Output) -> Result<()> {
    let artifacts = Artifacts::new(config);
    artifacts.ensure_dir()?;
    let vocab = load_vocab(&artifacts)?;
    let d1 = load_split(&artifacts, "d1")?;
    let sequences = encode_sequences(&d1, &vocab, config);

    let (matrix, stats) = train_skipgram::<f64>(&sequences, vocab.size(), &config.embedding_config())?;
    matrix.save(&artifacts.embedding(), config.seed)?;
    out.note(
        "trained",
        &format!(
            "embeddings: {} x {}, {} pairs/epoch, loss {:.4} -> {:.4}",
            matrix.vocab_size(),
            matrix.dim(),
            stats.pairs_per_epoch,
            stats.initial_loss,
            stats.epoch_losses.last().copied().unwrap_or(f64::NAN)
        ),
        &[
            ("pairs_per_epoch", json!(stats.pairs_per_epoch)),
            ("initial_loss", json!(stats.initial_loss)),
            ("epoch_losses", json!(stats.epoch_losses)),
            (
                "path",
                json!(artifacts.embedding().display().to_string()),
            ),
        ],
    );
    Ok(())
}

/// Trains the bidirectional recurrent feature extractor as a language
/// model over the untriaged split, on top of the trained embeddings.
pub fn train_feature(config: &RunConfig, out: &Output) -> Result<()> {
    let artifacts = Artifacts::new(config);
    artifacts.ensure_dir()?;
    let vocab = load_vocab(&artifacts)?;
    let d1 = load_split(&artifacts, "d1")?;
    let embedding = load_embedding(&artifacts)?;
    if embedding.vocab_size() != vocab.size() {
        return Err(anyhow::Error::new(DataProblem(format!(
            "embedding checkpoint covers {} tokens but the vocabulary has {}; \
             re-run `triage train-embed`",
            embedding.vocab_size(),
            vocab.size()
        ))));
    }

    let sequences = encode_sequences(&d1, &vocab, config);
    let (model, stats) = train_lm(&sequences, embedding, config.dbrnna_config())?;
    model.save(&artifacts.feature())?;
    out.note(
        "trained",
        &format!(
            "feature model: {} hidden units, best epoch {}/{}{}, {} sequences \
             ({} too short), val loss {:.4}",
            config.hidden_units,
            stats.best_epoch,
            stats.epoch_train_losses.len(),
            if stats.stopped_early { " (early stop)" } else { "" },
            stats.trained_sequences,
            stats.skipped_short,
            stats.epoch_val_losses.get(stats.best_epoch - 1).copied().unwrap_or(f64::NAN)
        ),
        &[
            ("best_epoch", json!(stats.best_epoch)),
            ("stopped_early", json!(stats.stopped_early)),
            ("epoch_train_losses", json!(stats.epoch_train_losses)),
            ("epoch_val_losses", json!(stats.epoch_val_losses)),
            ("trained_sequences", json!(stats.trained_sequences)),
            ("skipped_short", json!(stats.skipped_short)),
            ("path", json!(artifacts.feature().display().to_string())),
        ],
    );
    Ok(())
}

/// One report's classifier input under the configured feature kind.
/// Text that cleans to nothing yields the zero vector, mirroring the
/// evaluation harness.
pub fn featurize(
    report: &BugReport,
    vocab: &Vocabulary,
    model: Option<&FeatureModel<f64>>,
    config: &RunConfig,
) -> Result<Vec<f64>> {
    let tokens = report_tokens(report, config.title_only);
    match config.feature {
        FeatureKind::Bow => Ok(vocab
            .bow_vector(&tokens)
            .into_iter()
            .map(f64::from)
            .collect()),
        FeatureKind::Dbrnna => {
            let model = model.expect("feature model loaded for dbrnna runs");
            let encoded = vocab.encode(&tokens, config.max_sequence_length);
            if encoded.is_empty() {
                Ok(vec![0.0; model.feature_dim()])
            } else {
                Ok(model.extract_feature(&encoded)?)
            }
        }
    }
}

/// Trains the deployable classifier on the full triaged split, after
/// pruning developers with fewer than `classifier_threshold` reports.
pub fn train_classifier(config: &RunConfig, out: &Output) -> Result<()> {
    let artifacts = Artifacts::new(config);
    artifacts.ensure_dir()?;
    let vocab = load_vocab(&artifacts)?;
    let d2 = load_split(&artifacts, "d2")?;
    let model = match config.feature {
        FeatureKind::Dbrnna => Some(load_feature_model(&artifacts)?),
        FeatureKind::Bow => None,
    };

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for report in &d2 {
        if let Some(owner) = &report.owner {
            *counts.entry(owner.as_str()).or_default() += 1;
        }
    }
    let kept: Vec<&BugReport> = d2
        .iter()
        .filter(|r| {
            r.owner
                .as_deref()
                .is_some_and(|o| counts[o] >= config.classifier_threshold.max(1))
        })
        .collect();
    if kept.is_empty() {
        return Err(anyhow::Error::new(DataProblem(format!(
            "no developer has at least {} triaged reports",
            config.classifier_threshold.max(1)
        ))));
    }

    let labels_index =
        LabelIndex::from_owners(kept.iter().map(|r| r.owner.as_deref().expect("kept")));
    let labels: Vec<usize> = kept
        .iter()
        .map(|r| {
            labels_index
                .index_of(r.owner.as_deref().expect("kept"))
                .expect("owner indexed")
        })
        .collect();
    let mut empty_features = 0usize;
    let mut features = Vec::with_capacity(kept.len());
    for report in &kept {
        if report_tokens(report, config.title_only).is_empty() {
            empty_features += 1;
        }
        features.push(featurize(report, &vocab, model.as_ref(), config)?);
    }

    let classifier = match config.classifier {
        ClassifierKind::Softmax => AnyClassifier::Softmax(train_softmax(
            &features,
            &labels,
            labels_index.len(),
            &config.eval_config(0).softmax,
        )?),
        ClassifierKind::Svm => AnyClassifier::Svm(train_svm(
            &features,
            &labels,
            labels_index.len(),
            &config.eval_config(0).svm,
        )?),
        ClassifierKind::Mnb => AnyClassifier::Mnb(train_mnb(
            &features,
            &labels,
            labels_index.len(),
            config.mnb_alpha,
        )?),
        ClassifierKind::Cosine => AnyClassifier::Cosine(train_cosine_index(
            &features,
            &labels,
            labels_index.len(),
            config.cosine_aggregation,
        )?),
    };
    classifier.save(&artifacts.classifier(), labels_index.names())?;
    out.note(
        "trained",
        &format!(
            "{} classifier: {} developers, {} training reports ({} dropped by \
             threshold {}, {} with empty text)",
            config.classifier,
            labels_index.len(),
            kept.len(),
            d2.len() - kept.len(),
            config.classifier_threshold,
            empty_features
        ),
        &[
            ("classifier", json!(config.classifier.to_string())),
            ("num_classes", json!(labels_index.len())),
            ("train_size", json!(kept.len())),
            ("dropped", json!(d2.len() - kept.len())),
            ("empty_feature_reports", json!(empty_features)),
            ("path", json!(artifacts.classifier().display().to_string())),
        ],
    );
    Ok(())
}
