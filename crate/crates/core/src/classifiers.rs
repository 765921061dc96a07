//! Developer-assignment classifiers over report features.
//!
//! All four model families expose the same contract: training consumes
//! f64 feature vectors plus dense class labels, prediction returns a full
//! score vector and a ranking over every class (descending score, ties
//! broken by ascending class index). Softmax and multinomial naive Bayes
//! produce probabilities; the SVM ranks by raw margins and the cosine
//! matcher by similarity.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container, ContainerHeader};
use crate::nncore::{adam_step, AdamConfig, AdamState, NnError, ParameterStore, Tape, Tensor};

pub type Tensor64 = Tensor<f64>;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("one-vs-rest training needs at least two classes")]
    SingleClass,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("count features must be non-negative integers; found {value}")]
    InvalidCount { value: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

type Result<T> = std::result::Result<T, ClassifierError>;

/// Bijection between developer identifiers and dense class indices for one
/// training fold. Indices follow lexicographic owner order, so a fold's
/// index assignment is independent of report order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelIndex {
    names: Vec<String>,
    lookup: BTreeMap<String, usize>,
}

impl LabelIndex {
    pub fn from_owners<I, T>(owners: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut names: Vec<String> = owners
            .into_iter()
            .map(|o| o.as_ref().to_string())
            .collect();
        names.sort();
        names.dedup();
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        LabelIndex { names, lookup }
    }

    pub fn index_of(&self, owner: &str) -> Option<usize> {
        self.lookup.get(owner).copied()
    }

    pub fn name_of(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Scores for every class plus the induced ranking (descending score,
/// ascending class index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
}

impl RankedPrediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        RankedPrediction { scores, ranking }
    }

    pub fn top(&self) -> usize {
        self.ranking[0]
    }

    /// True if `class` appears among the first k ranked classes.
    pub fn hits_top_k(&self, class: usize, k: usize) -> bool {
        self.ranking.iter().take(k).any(|&c| c == class)
    }
}

pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction>;
}

fn validate_training_set(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<usize> {
    if features.is_empty() || num_classes == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if features.len() != labels.len() {
        return Err(ClassifierError::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
    }
    for &l in labels {
        if l >= num_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
    }
    Ok(dim)
}

fn validate_query(dim: usize, feature: &[f64]) -> Result<()> {
    if feature.len() != dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: dim,
            got: feature.len(),
        });
    }
    Ok(())
}

fn flatten(features: &[Vec<f64>]) -> Vec<f64> {
    features.iter().flatten().copied().collect()
}


fn check_class_names(names: &[String], num_classes: usize) -> Result<()> {
    if names.len() != num_classes {
        return Err(ClassifierError::DimensionMismatch {
            expected: num_classes,
            got: names.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Softmax (multinomial logistic regression)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig {
            lr: 0.05,
            epochs: 300,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    w: Tensor64,
    b: Tensor64,
}

/// Full-batch Adam on cross-entropy plus an L2 penalty 0.5*l2*|W|^2 on the
/// weights (not the intercepts). Zero initialization makes training
/// deterministic without a seed: the objective is convex.
pub fn train_softmax(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &SoftmaxConfig,
) -> Result<SoftmaxModel> {
    let dim = validate_training_set(features, labels, num_classes)?;
    let n = features.len();
    let x = Tensor::from_vec(n, dim, flatten(features));

    let mut params: ParameterStore<f64> = ParameterStore::new();
    params.insert("w", Tensor::zeros(dim, num_classes));
    params.insert("b", Tensor::zeros(1, num_classes));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));

    for _ in 0..config.epochs {
        let mut tape: Tape<f64> = Tape::new(true);
        let xn = tape.leaf(x.clone());
        let w = tape.leaf_shared(params.shared("w"), true);
        let b = tape.leaf_shared(params.shared("b"), true);
        let xw = tape.matmul(xn, w)?;
        let logits = tape.add(xw, b)?;
        let ce = tape.cross_entropy(logits, labels)?;
        let ww = tape.mul(w, w)?;
        let sq = tape.sum_all(ww)?;
        let penalty = tape.scale(sq, 0.5 * config.l2)?;
        let loss = tape.add(ce, penalty)?;
        let mut grads = tape.backward(loss)?;
        let mut grad_map = BTreeMap::new();
        grad_map.insert(
            "w".to_string(),
            grads.take(w).expect("weight gradient exists"),
        );
        grad_map.insert(
            "b".to_string(),
            grads.take(b).expect("bias gradient exists"),
        );
        adam_step(&mut params, &grad_map, &mut adam)?;
    }
    Ok(SoftmaxModel {
        w: params.get("w").clone(),
        b: params.get("b").clone(),
    })
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl Classifier for SoftmaxModel {
    fn num_classes(&self) -> usize {
        self.w.cols()
    }

    fn feature_dim(&self) -> usize {
        self.w.rows()
    }

    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction> {
        validate_query(self.feature_dim(), feature)?;
        let k = self.num_classes();
        let mut logits = vec![0.0; k];
        for (j, logit) in logits.iter_mut().enumerate() {
            *logit = self.b.get(0, j)
                + feature
                    .iter()
                    .enumerate()
                    .map(|(r, &v)| v * self.w.get(r, j))
                    .sum::<f64>();
        }
        Ok(RankedPrediction::from_scores(stable_softmax(&logits)))
    }
}

impl SoftmaxModel {
    /// `classes` are the developer names in class-index order; they travel
    /// with the checkpoint so predictions can be reported by name.
    pub fn save(&self, path: &Path, classes: &[String]) -> Result<()> {
        check_class_names(classes, self.num_classes())?;
        let mut c = Container::new(ContainerHeader {
            kind: "classifier/softmax".to_string(),
            classes: Some(classes.to_vec()),
            ..ContainerHeader::default()
        });
        c.push_tensor("w", vec![self.w.rows(), self.w.cols()], self.w.to_f32_vec());
        c.push_tensor("b", vec![1, self.b.cols()], self.b.to_f32_vec());
        c.save(path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Linear one-vs-rest SVM
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    /// Inverse regularization strength; the internal L2 weight is
    /// 1 / (c * n_examples).
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, epochs: 100 }
    }
}

/// Bias-free linear scorers, one per class; ranking by raw margin w_k . x.
/// Omitting the intercept keeps rankings invariant under positive
/// rescaling of the query and matches the common no-bias default for
/// high-dimensional bag-of-words text.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    w: Tensor64,
}

/// One-vs-rest hinge loss minimized by deterministic full-batch
/// subgradient descent with the 1/(lambda*t) step schedule.
pub fn train_svm(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &SvmConfig,
) -> Result<SvmModel> {
    let dim = validate_training_set(features, labels, num_classes)?;
    if num_classes < 2 {
        return Err(ClassifierError::SingleClass);
    }
    let n = features.len();
    let lambda = 1.0 / (config.c * n as f64);
    let mut w = Tensor::<f64>::zeros(dim, num_classes);
    for t in 1..=config.epochs {
        let eta = 1.0 / (lambda * t as f64);
        // Mean hinge subgradient over the full batch for every class.
        let mut grad = vec![0.0; dim * num_classes];
        for (x, &label) in features.iter().zip(labels) {
            for k in 0..num_classes {
                let y = if label == k { 1.0 } else { -1.0 };
                let margin: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(r, &v)| v * w.get(r, k))
                    .sum::<f64>()
                    * y;
                if margin < 1.0 {
                    for (r, &v) in x.iter().enumerate() {
                        grad[r * num_classes + k] -= y * v;
                    }
                }
            }
        }
        let scale = eta / n as f64;
        let shrink = 1.0 - eta * lambda;
        for r in 0..dim {
            for k in 0..num_classes {
                let v = shrink * w.get(r, k) - scale * grad[r * num_classes + k];
                w.set(r, k, v);
            }
        }
    }
    if !w.all_finite() {
        return Err(NnError::NonFiniteValue { op: "svm_step" }.into());
    }
    Ok(SvmModel { w })
}

impl Classifier for SvmModel {
    fn num_classes(&self) -> usize {
        self.w.cols()
    }

    fn feature_dim(&self) -> usize {
        self.w.rows()
    }

    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction> {
        validate_query(self.feature_dim(), feature)?;
        let k = self.num_classes();
        let mut scores = vec![0.0; k];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = feature
                .iter()
                .enumerate()
                .map(|(r, &v)| v * self.w.get(r, j))
                .sum();
        }
        Ok(RankedPrediction::from_scores(scores))
    }
}

impl SvmModel {
    pub fn save(&self, path: &Path, classes: &[String]) -> Result<()> {
        check_class_names(classes, self.num_classes())?;
        let mut c = Container::new(ContainerHeader {
            kind: "classifier/svm".to_string(),
            classes: Some(classes.to_vec()),
            ..ContainerHeader::default()
        });
        c.push_tensor("w", vec![self.w.rows(), self.w.cols()], self.w.to_f32_vec());
        c.save(path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Multinomial naive Bayes
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MnbModel {
    log_priors: Vec<f64>,
    /// [num_classes, dim] log word likelihoods with Laplace smoothing.
    log_likelihoods: Tensor64,
    alpha: f64,
}

fn check_counts(feature: &[f64]) -> Result<()> {
    for &v in feature {
        if !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()) {
            return Err(ClassifierError::InvalidCount { value: v });
        }
    }
    Ok(())
}

/// Class priors are empirical label frequencies; word likelihoods are
/// Laplace-smoothed term frequencies: (count + alpha) / (total + alpha*dim).
pub fn train_mnb(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    alpha: f64,
) -> Result<MnbModel> {
    let dim = validate_training_set(features, labels, num_classes)?;
    assert!(alpha > 0.0, "smoothing must be positive");
    for f in features {
        check_counts(f)?;
    }
    let n = features.len() as f64;
    let mut class_counts = vec![0.0f64; num_classes];
    let mut word_counts = vec![0.0f64; num_classes * dim];
    for (x, &label) in features.iter().zip(labels) {
        class_counts[label] += 1.0;
        for (j, &v) in x.iter().enumerate() {
            word_counts[label * dim + j] += v;
        }
    }
    let log_priors = class_counts.iter().map(|&c| (c / n).ln()).collect();
    let mut log_likelihoods = Tensor::zeros(num_classes, dim);
    for k in 0..num_classes {
        let total: f64 = word_counts[k * dim..(k + 1) * dim].iter().sum();
        let denom = total + alpha * dim as f64;
        for j in 0..dim {
            let p = (word_counts[k * dim + j] + alpha) / denom;
            log_likelihoods.set(k, j, p.ln());
        }
    }
    Ok(MnbModel {
        log_priors,
        log_likelihoods,
        alpha,
    })
}

impl Classifier for MnbModel {
    fn num_classes(&self) -> usize {
        self.log_priors.len()
    }

    fn feature_dim(&self) -> usize {
        self.log_likelihoods.cols()
    }

    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction> {
        validate_query(self.feature_dim(), feature)?;
        check_counts(feature)?;
        let k = self.num_classes();
        let mut log_post = vec![0.0; k];
        for (c, lp) in log_post.iter_mut().enumerate() {
            *lp = self.log_priors[c]
                + feature
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(j, &v)| v * self.log_likelihoods.get(c, j))
                    .sum::<f64>();
        }
        // Normalize through log-sum-exp so the scores are posteriors.
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_post.iter().map(|&z| (z - max).exp()).sum();
        let log_total = max + total.ln();
        let scores = log_post.iter().map(|&z| (z - log_total).exp()).collect();
        Ok(RankedPrediction::from_scores(scores))
    }
}

impl MnbModel {
    pub fn save(&self, path: &Path, classes: &[String]) -> Result<()> {
        check_class_names(classes, self.num_classes())?;
        let mut header = ContainerHeader {
            kind: "classifier/mnb".to_string(),
            classes: Some(classes.to_vec()),
            ..ContainerHeader::default()
        };
        header.extra.insert("alpha".to_string(), self.alpha.to_string());
        let mut c = Container::new(header);
        c.push_tensor(
            "log_priors",
            vec![1, self.log_priors.len()],
            self.log_priors.iter().map(|&v| v as f32).collect(),
        );
        c.push_tensor(
            "log_likelihoods",
            vec![self.log_likelihoods.rows(), self.log_likelihoods.cols()],
            self.log_likelihoods.to_f32_vec(),
        );
        c.save(path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cosine similarity matcher
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CosineAggregation {
    /// Score a developer by their single most similar training bug.
    #[default]
    Max,
    /// Score a developer by the mean similarity over their training bugs.
    Mean,
}

impl FromStr for CosineAggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(CosineAggregation::Max),
            "mean" => Ok(CosineAggregation::Mean),
            other => Err(format!("unknown aggregation `{other}` (use max|mean)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosineIndex {
    /// (class, vector, norm) per training bug; zero-norm vectors keep
    /// norm 0 and score 0 against every query.
    entries: Vec<(usize, Vec<f64>, f64)>,
    num_classes: usize,
    dim: usize,
    aggregation: CosineAggregation,
}

pub fn train_cosine_index(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    aggregation: CosineAggregation,
) -> Result<CosineIndex> {
    let dim = validate_training_set(features, labels, num_classes)?;
    let entries = features
        .iter()
        .zip(labels)
        .map(|(x, &label)| {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (label, x.clone(), norm)
        })
        .collect();
    Ok(CosineIndex {
        entries,
        num_classes,
        dim,
        aggregation,
    })
}

impl Classifier for CosineIndex {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction> {
        validate_query(self.dim, feature)?;
        let qnorm = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = vec![f64::NEG_INFINITY; self.num_classes];
        let mut sums = vec![0.0f64; self.num_classes];
        let mut counts = vec![0usize; self.num_classes];
        for (class, vector, norm) in &self.entries {
            let sim = if qnorm == 0.0 || *norm == 0.0 {
                0.0
            } else {
                let dot: f64 = vector.iter().zip(feature).map(|(a, b)| a * b).sum();
                dot / (norm * qnorm)
            };
            best[*class] = best[*class].max(sim);
            sums[*class] += sim;
            counts[*class] += 1;
        }
        // Classes without examples score a neutral 0 under both rules.
        let scores = match self.aggregation {
            CosineAggregation::Max => best
                .iter()
                .zip(&counts)
                .map(|(&b, &c)| if c == 0 { 0.0 } else { b })
                .collect(),
            CosineAggregation::Mean => sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
        };
        Ok(RankedPrediction::from_scores(scores))
    }
}

impl CosineIndex {
    pub fn save(&self, path: &Path, classes: &[String]) -> Result<()> {
        check_class_names(classes, self.num_classes)?;
        let mut header = ContainerHeader {
            kind: "classifier/cosine".to_string(),
            classes: Some(classes.to_vec()),
            ..ContainerHeader::default()
        };
        let agg = match self.aggregation {
            CosineAggregation::Max => "max",
            CosineAggregation::Mean => "mean",
        };
        header.extra.insert("aggregation".to_string(), agg.to_string());
        let mut c = Container::new(header);
        let n = self.entries.len();
        let mut matrix = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for (class, vector, _) in &self.entries {
            labels.push(*class as f32);
            matrix.extend(vector.iter().map(|&v| v as f32));
        }
        c.push_tensor("vectors", vec![n, self.dim], matrix);
        c.push_tensor("labels", vec![1, n], labels);
        c.save(path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Kind tags and checkpoint loading
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Softmax,
    Svm,
    Mnb,
    Cosine,
}

impl ClassifierKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierKind::Softmax => "softmax",
            ClassifierKind::Svm => "svm",
            ClassifierKind::Mnb => "mnb",
            ClassifierKind::Cosine => "cosine",
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "softmax" => Ok(ClassifierKind::Softmax),
            "svm" => Ok(ClassifierKind::Svm),
            "mnb" => Ok(ClassifierKind::Mnb),
            "cosine" => Ok(ClassifierKind::Cosine),
            other => Err(format!(
                "unknown classifier `{other}` (use softmax|svm|mnb|cosine)"
            )),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained model of any kind, as loaded from a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyClassifier {
    Softmax(SoftmaxModel),
    Svm(SvmModel),
    Mnb(MnbModel),
    Cosine(CosineIndex),
}

impl Classifier for AnyClassifier {
    fn num_classes(&self) -> usize {
        match self {
            AnyClassifier::Softmax(m) => m.num_classes(),
            AnyClassifier::Svm(m) => m.num_classes(),
            AnyClassifier::Mnb(m) => m.num_classes(),
            AnyClassifier::Cosine(m) => m.num_classes(),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            AnyClassifier::Softmax(m) => m.feature_dim(),
            AnyClassifier::Svm(m) => m.feature_dim(),
            AnyClassifier::Mnb(m) => m.feature_dim(),
            AnyClassifier::Cosine(m) => m.feature_dim(),
        }
    }

    fn predict(&self, feature: &[f64]) -> Result<RankedPrediction> {
        match self {
            AnyClassifier::Softmax(m) => m.predict(feature),
            AnyClassifier::Svm(m) => m.predict(feature),
            AnyClassifier::Mnb(m) => m.predict(feature),
            AnyClassifier::Cosine(m) => m.predict(feature),
        }
    }
}

impl AnyClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            AnyClassifier::Softmax(_) => ClassifierKind::Softmax,
            AnyClassifier::Svm(_) => ClassifierKind::Svm,
            AnyClassifier::Mnb(_) => ClassifierKind::Mnb,
            AnyClassifier::Cosine(_) => ClassifierKind::Cosine,
        }
    }

    pub fn save(&self, path: &Path, classes: &[String]) -> Result<()> {
        match self {
            AnyClassifier::Softmax(m) => m.save(path, classes),
            AnyClassifier::Svm(m) => m.save(path, classes),
            AnyClassifier::Mnb(m) => m.save(path, classes),
            AnyClassifier::Cosine(m) => m.save(path, classes),
        }
    }

    /// Loads any classifier checkpoint, returning the model and the class
    /// names in index order.
    pub fn load(path: &Path) -> Result<(AnyClassifier, Vec<String>)> {
        let container = Container::load(path)?;
        let kind = container.header.kind.clone();
        let bad = |msg: String| ClassifierError::from(CheckpointError::VersionMismatch(msg));
        let tensor = |name: &str| -> Result<Tensor64> {
            let record = container
                .tensor(name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if record.shape.len() != 2 {
                return Err(bad(format!("tensor `{name}` is not 2-dimensional")));
            }
            Ok(Tensor::from_f32_vec(
                record.shape[0],
                record.shape[1],
                &record.data,
            ))
        };
        let classes = container
            .header
            .classes
            .clone()
            .ok_or_else(|| bad("header missing `classes`".to_string()))?;
        let model = match kind.as_str() {
            "classifier/softmax" => AnyClassifier::Softmax(SoftmaxModel {
                w: tensor("w")?,
                b: tensor("b")?,
            }),
            "classifier/svm" => AnyClassifier::Svm(SvmModel { w: tensor("w")? }),
            "classifier/mnb" => {
                let alpha = container
                    .header
                    .extra
                    .get("alpha")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| bad("header missing numeric `alpha`".to_string()))?;
                let priors = tensor("log_priors")?;
                AnyClassifier::Mnb(MnbModel {
                    log_priors: priors.data().to_vec(),
                    log_likelihoods: tensor("log_likelihoods")?,
                    alpha,
                })
            }
            "classifier/cosine" => {
                let aggregation: CosineAggregation = container
                    .header
                    .extra
                    .get("aggregation")
                    .ok_or_else(|| bad("header missing `aggregation`".to_string()))?
                    .parse()
                    .map_err(bad)?;
                let vectors = tensor("vectors")?;
                let labels = tensor("labels")?;
                let dim = vectors.cols();
                let entries = (0..vectors.rows())
                    .map(|r| {
                        let v: Vec<f64> = vectors.row(r).to_vec();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        (labels.get(0, r) as usize, v, norm)
                    })
                    .collect();
                AnyClassifier::Cosine(CosineIndex {
                    entries,
                    num_classes: classes.len(),
                    dim,
                    aggregation,
                })
            }
            other => return Err(bad(format!("not a classifier checkpoint: kind `{other}`"))),
        };
        if model.num_classes() != classes.len() {
            return Err(bad(format!(
                "checkpoint lists {} classes but the model scores {}",
                classes.len(),
                model.num_classes()
            )));
        }
        Ok((model, classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonal_fixture() -> (Vec<Vec<f64>>, Vec<usize>) {
        let features = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        (features, vec![0, 1, 2])
    }

    fn separable_fixture() -> (Vec<Vec<f64>>, Vec<usize>) {
        // Two clusters far apart along the first axis.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let jitter = (i as f64) * 0.05;
            features.push(vec![2.0 + jitter, 1.0 - jitter]);
            labels.push(0);
            features.push(vec![-2.0 - jitter, -1.0 + jitter]);
            labels.push(1);
        }
        (features, labels)
    }

    fn train_accuracy<C: Classifier>(model: &C, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| model.predict(x).unwrap().top() == y)
            .count();
        hits as f64 / features.len() as f64
    }

    #[test]
    fn label_index_is_a_sorted_bijection() {
        let idx = LabelIndex::from_owners(["carol", "alice", "bob", "alice"]);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.index_of("alice"), Some(0));
        assert_eq!(idx.index_of("bob"), Some(1));
        assert_eq!(idx.index_of("carol"), Some(2));
        assert_eq!(idx.index_of("dave"), None);
        assert_eq!(idx.name_of(2), "carol");
    }

    #[test]
    fn ranking_breaks_ties_by_ascending_index() {
        let p = RankedPrediction::from_scores(vec![0.25, 0.25, 0.5, 0.25]);
        assert_eq!(p.ranking, vec![2, 0, 1, 3]);
        assert!(p.hits_top_k(0, 2));
        assert!(!p.hits_top_k(3, 3));
    }

    #[test]
    fn zero_weight_softmax_is_uniform_in_index_order() {
        let model = SoftmaxModel {
            w: Tensor::zeros(4, 3),
            b: Tensor::zeros(1, 3),
        };
        let p = model.predict(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        for &s in &p.scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.ranking, vec![0, 1, 2]);
    }

    #[test]
    fn softmax_separates_two_clusters() {
        let (features, labels) = separable_fixture();
        let model = train_softmax(&features, &labels, 2, &SoftmaxConfig::default()).unwrap();
        assert_eq!(train_accuracy(&model, &features, &labels), 1.0);
        let p = model.predict(&features[0]).unwrap();
        let sum: f64 = p.scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.scores.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn softmax_handles_a_single_class() {
        let features = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let model = train_softmax(&features, &[0, 0], 1, &SoftmaxConfig::default()).unwrap();
        let p = model.predict(&[5.0, -1.0]).unwrap();
        assert_eq!(p.ranking, vec![0]);
        assert!((p.scores[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duplicating_every_example_leaves_softmax_unchanged() {
        let (features, labels) = separable_fixture();
        let mut doubled = features.clone();
        doubled.extend(features.iter().cloned());
        let mut doubled_labels = labels.clone();
        doubled_labels.extend(labels.iter().copied());
        let cfg = SoftmaxConfig {
            epochs: 80,
            ..SoftmaxConfig::default()
        };
        let a = train_softmax(&features, &labels, 2, &cfg).unwrap();
        let b = train_softmax(&doubled, &doubled_labels, 2, &cfg).unwrap();
        // Full-batch means are unchanged by duplication, so the trained
        // model agrees up to summation-order rounding.
        for probe in &features {
            let pa = a.predict(probe).unwrap();
            let pb = b.predict(probe).unwrap();
            assert_eq!(pa.ranking, pb.ranking);
            for (x, y) in pa.scores.iter().zip(&pb.scores) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn svm_separates_two_clusters() {
        let (features, labels) = separable_fixture();
        let model = train_svm(&features, &labels, 2, &SvmConfig::default()).unwrap();
        assert_eq!(train_accuracy(&model, &features, &labels), 1.0);
    }

    #[test]
    fn svm_requires_two_classes() {
        let features = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_svm(&features, &[0, 0], 1, &SvmConfig::default()),
            Err(ClassifierError::SingleClass)
        ));
    }

    #[test]
    fn svm_ranking_survives_positive_query_rescaling() {
        let (features, labels) = separable_fixture();
        let model = train_svm(&features, &labels, 2, &SvmConfig::default()).unwrap();
        let query = vec![0.7, -0.3];
        let base = model.predict(&query).unwrap();
        for c in [0.1, 2.0, 50.0] {
            let scaled: Vec<f64> = query.iter().map(|v| v * c).collect();
            let p = model.predict(&scaled).unwrap();
            assert_eq!(p.ranking, base.ranking);
            for (s, b) in p.scores.iter().zip(&base.scores) {
                assert!((s - b * c).abs() < 1e-9, "margins are linear in the query");
            }
        }
    }

    #[test]
    fn svm_zero_query_falls_back_to_index_order() {
        let (features, labels) = separable_fixture();
        let model = train_svm(&features, &labels, 2, &SvmConfig::default()).unwrap();
        let p = model.predict(&[0.0, 0.0]).unwrap();
        assert_eq!(p.scores, vec![0.0, 0.0]);
        assert_eq!(p.ranking, vec![0, 1]);
    }

    #[test]
    fn mnb_matches_hand_computed_posterior() {
        // Two classes, three words, alpha = 1. Class totals are 3, so the
        // smoothed likelihoods are (count+1)/6:
        //   class 0: [1/2, 1/3, 1/6], class 1: [1/6, 1/3, 1/2].
        // Query [2,0,0]: p0 ~ 0.5*(1/2)^2 = 1/8, p1 ~ 0.5*(1/6)^2 = 1/72,
        // so the posterior is [0.9, 0.1].
        let features = vec![vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 2.0]];
        let model = train_mnb(&features, &[0, 1], 2, 1.0).unwrap();
        let p = model.predict(&[2.0, 0.0, 0.0]).unwrap();
        assert!((p.scores[0] - 0.9).abs() < 1e-12);
        assert!((p.scores[1] - 0.1).abs() < 1e-12);
        assert_eq!(p.ranking, vec![0, 1]);
    }

    #[test]
    fn mnb_uniform_corpus_gives_uniform_posterior() {
        let features = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let model = train_mnb(&features, &[0, 1], 2, 1.0).unwrap();
        for query in [vec![0.0, 3.0], vec![5.0, 1.0]] {
            let p = model.predict(&query).unwrap();
            assert!((p.scores[0] - 0.5).abs() < 1e-12);
            assert!((p.scores[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mnb_empty_query_returns_the_priors() {
        let features = vec![vec![3.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]];
        let model = train_mnb(&features, &[0, 0, 1], 2, 1.0).unwrap();
        let p = model.predict(&[0.0, 0.0]).unwrap();
        assert!((p.scores[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.scores[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mnb_rejects_non_count_features() {
        let features = vec![vec![1.5, 0.0]];
        assert!(matches!(
            train_mnb(&features, &[0], 1, 1.0),
            Err(ClassifierError::InvalidCount { .. })
        ));
        let negative = vec![vec![-1.0, 0.0]];
        assert!(matches!(
            train_mnb(&negative, &[0], 1, 1.0),
            Err(ClassifierError::InvalidCount { .. })
        ));
    }

    #[test]
    fn mnb_is_invariant_to_vocabulary_permutation() {
        let features = vec![
            vec![3.0, 1.0, 0.0, 2.0],
            vec![0.0, 2.0, 1.0, 0.0],
            vec![1.0, 0.0, 4.0, 1.0],
        ];
        let labels = vec![0, 1, 1];
        let query = vec![1.0, 2.0, 0.0, 3.0];
        let perm = [2usize, 0, 3, 1];
        let apply = |v: &[f64]| -> Vec<f64> { perm.iter().map(|&j| v[j]).collect() };
        let permuted: Vec<Vec<f64>> = features.iter().map(|f| apply(f)).collect();

        let a = train_mnb(&features, &labels, 2, 1.0).unwrap();
        let b = train_mnb(&permuted, &labels, 2, 1.0).unwrap();
        let pa = a.predict(&query).unwrap();
        let pb = b.predict(&apply(&query)).unwrap();
        for (x, y) in pa.scores.iter().zip(&pb.scores) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_ranks_three_developers_by_hand_computed_similarity() {
        let features = vec![
            vec![1.0, 0.0, 0.0], // dev 0
            vec![1.0, 1.0, 0.0], // dev 1
            vec![0.0, 0.0, 1.0], // dev 2
        ];
        let labels = vec![0, 1, 2];
        let index = train_cosine_index(&features, &labels, 3, CosineAggregation::Max).unwrap();
        let p = index.predict(&[1.0, 1.0, 0.0]).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.scores[0] - inv_sqrt2).abs() < 1e-12);
        assert!((p.scores[1] - 1.0).abs() < 1e-12);
        assert!(p.scores[2].abs() < 1e-12);
        assert_eq!(p.ranking, vec![1, 0, 2]);
    }

    #[test]
    fn cosine_orthogonal_query_scores_zero_everywhere() {
        let (features, labels) = orthogonal_fixture();
        let index = train_cosine_index(&features, &labels, 3, CosineAggregation::Max).unwrap();
        // Extend dimension by querying an all-zero vector of the same dim.
        let p = index.predict(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.scores, vec![0.0, 0.0, 0.0]);
        assert_eq!(p.ranking, vec![0, 1, 2]);
    }

    #[test]
    fn cosine_mean_aggregation_averages_over_a_developers_bugs() {
        // Developer 0 owns an exact match and an orthogonal bug.
        let features = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let labels = vec![0, 0, 1];
        let query = vec![1.0, 0.0];
        let max_index =
            train_cosine_index(&features, &labels, 2, CosineAggregation::Max).unwrap();
        let mean_index =
            train_cosine_index(&features, &labels, 2, CosineAggregation::Mean).unwrap();
        let pm = max_index.predict(&query).unwrap();
        let pa = mean_index.predict(&query).unwrap();
        assert!((pm.scores[0] - 1.0).abs() < 1e-12);
        assert!((pa.scores[0] - 0.5).abs() < 1e-12);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pm.scores[1] - inv_sqrt2).abs() < 1e-12);
        assert!((pa.scores[1] - inv_sqrt2).abs() < 1e-12);
        assert_eq!(pm.ranking, vec![0, 1]);
        assert_eq!(pa.ranking, vec![1, 0]);
    }

    #[test]
    fn zero_norm_training_vectors_never_match() {
        let features = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let index = train_cosine_index(&features, &[0, 1], 2, CosineAggregation::Max).unwrap();
        let p = index.predict(&[1.0, 0.0]).unwrap();
        assert_eq!(p.scores[0], 0.0);
        assert!((p.scores[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_model_memorizes_the_orthogonal_fixture() {
        let (features, labels) = orthogonal_fixture();
        let softmax = train_softmax(&features, &labels, 3, &SoftmaxConfig::default()).unwrap();
        let svm = train_svm(&features, &labels, 3, &SvmConfig::default()).unwrap();
        let mnb = train_mnb(&features, &labels, 3, 1.0).unwrap();
        let cosine =
            train_cosine_index(&features, &labels, 3, CosineAggregation::Max).unwrap();
        for (x, &y) in features.iter().zip(&labels) {
            assert_eq!(softmax.predict(x).unwrap().top(), y, "softmax");
            assert_eq!(svm.predict(x).unwrap().top(), y, "svm");
            assert_eq!(mnb.predict(x).unwrap().top(), y, "mnb");
            assert_eq!(cosine.predict(x).unwrap().top(), y, "cosine");
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let (features, labels) = orthogonal_fixture();
        let ragged = vec![vec![1.0, 0.0], vec![1.0]];
        assert!(matches!(
            train_softmax(&ragged, &[0, 1], 2, &SoftmaxConfig::default()),
            Err(ClassifierError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            train_softmax(&[], &[], 2, &SoftmaxConfig::default()),
            Err(ClassifierError::EmptyTrainingSet)
        ));
        let model = train_softmax(&features, &labels, 3, &SoftmaxConfig::default()).unwrap();
        assert!(matches!(
            model.predict(&[1.0]),
            Err(ClassifierError::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn checkpoints_round_trip_every_model_kind() {
        let (features, labels) = separable_fixture();
        let counts: Vec<Vec<f64>> = vec![
            vec![2.0, 1.0, 0.0],
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
        ];
        let count_labels = vec![0, 1, 1];
        let models: Vec<AnyClassifier> = vec![
            AnyClassifier::Softmax(
                train_softmax(&features, &labels, 2, &SoftmaxConfig::default()).unwrap(),
            ),
            AnyClassifier::Svm(train_svm(&features, &labels, 2, &SvmConfig::default()).unwrap()),
            AnyClassifier::Mnb(train_mnb(&counts, &count_labels, 2, 1.0).unwrap()),
            AnyClassifier::Cosine(
                train_cosine_index(&counts, &count_labels, 2, CosineAggregation::Mean).unwrap(),
            ),
        ];
        let names = vec!["alice".to_string(), "bob".to_string()];
        let dir = tempfile::tempdir().unwrap();
        for model in &models {
            let path = dir.path().join(format!("{}.dbra", model.kind()));
            model.save(&path, &names).unwrap();
            let (loaded, loaded_names) = AnyClassifier::load(&path).unwrap();
            assert_eq!(loaded_names, names);
            assert_eq!(loaded.kind(), model.kind());
            let probe: Vec<f64> = match model.kind() {
                ClassifierKind::Mnb | ClassifierKind::Cosine => vec![1.0, 2.0, 0.0],
                _ => vec![0.5, -1.5],
            };
            let a = model.predict(&probe).unwrap();
            let b = loaded.predict(&probe).unwrap();
            assert_eq!(a.ranking, b.ranking, "{} ranking changed", model.kind());
            for (x, y) in a.scores.iter().zip(&b.scores) {
                // Storage quantizes to f32; predictions must agree to that
                // precision.
                assert!((x - y).abs() < 1e-5, "{} score drifted", model.kind());
            }
        }
        assert!(matches!(
            AnyClassifier::load(&dir.path().join("softmax.dbra")),
            Ok((AnyClassifier::Softmax(_), _))
        ));
    }

    #[test]
    fn loading_a_non_classifier_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embed.dbra");
        let mut c = Container::new(ContainerHeader {
            kind: "embedding".to_string(),
            ..ContainerHeader::default()
        });
        c.push_tensor("embed/input", vec![2, 2], vec![0.0; 4]);
        c.save(&path).unwrap();
        assert!(matches!(
            AnyClassifier::load(&path),
            Err(ClassifierError::Checkpoint(
                CheckpointError::VersionMismatch(_)
            ))
        ));
    }
}
