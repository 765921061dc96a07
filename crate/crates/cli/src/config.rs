//! Resolved run configuration.
//!
//! Sources, lowest precedence first: built-in defaults, the config file
//! (`--config`, falling back to the `TRIAGE_CONFIG` environment variable),
//! repeated `--set key=value` overrides, then explicit command flags. The
//! file format is flat `key = value` lines; `#` starts a comment. Every
//! command echoes the fully resolved configuration before doing anything,
//! and re-running with exactly those values reproduces the outputs.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use triage_core::classifiers::{ClassifierKind, CosineAggregation, SoftmaxConfig, SvmConfig};
use triage_core::corpus::PartitionRules;
use triage_core::dbrnna::DbrnnaConfig;
use triage_core::embed::EmbeddingConfig;
use triage_core::evalharness::{EvalConfig, FeatureKind};

/// A configuration mistake (bad key, bad value, missing path). Maps to
/// exit code 1.
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

macro_rules! config_err {
    ($($arg:tt)*) => {
        anyhow::Error::new(ConfigProblem(format!($($arg)*)))
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub rules: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub min_frequency: u32,
    pub max_sequence_length: Option<usize>,
    pub title_only: bool,
    pub feature: FeatureKind,
    pub embed_dim: usize,
    pub embed_window: usize,
    pub embed_negatives: usize,
    pub embed_epochs: usize,
    pub embed_lr: f64,
    pub hidden_units: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub lm_lr: f64,
    pub lm_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub classifier: ClassifierKind,
    pub softmax_lr: f64,
    pub softmax_epochs: usize,
    pub softmax_l2: f64,
    pub svm_c: f64,
    pub svm_epochs: usize,
    pub mnb_alpha: f64,
    pub cosine_aggregation: CosineAggregation,
    /// Training-set pruning for the standalone deployable classifier.
    pub classifier_threshold: usize,
    /// Per-developer minimums swept by `evaluate` (one report each).
    pub thresholds: Vec<usize>,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            rules: "chromium".to_string(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            min_frequency: 5,
            max_sequence_length: None,
            title_only: false,
            feature: FeatureKind::Dbrnna,
            embed_dim: 300,
            embed_window: 5,
            embed_negatives: 5,
            embed_epochs: 5,
            embed_lr: 0.025,
            hidden_units: 300,
            num_layers: 1,
            dropout: 0.3,
            lm_lr: 0.001,
            lm_epochs: 100,
            batch_size: 32,
            patience: 5,
            val_fraction: 0.1,
            classifier: ClassifierKind::Softmax,
            softmax_lr: 0.05,
            softmax_epochs: 300,
            softmax_l2: 1e-4,
            svm_c: 1.0,
            svm_epochs: 100,
            mnb_alpha: 1.0,
            cosine_aggregation: CosineAggregation::Max,
            classifier_threshold: 0,
            thresholds: vec![0, 5, 10, 20],
            top_k: 10,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| config_err!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    /// Resolves the configuration for one invocation.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let env_path = std::env::var_os("TRIAGE_CONFIG").map(PathBuf::from);
        let path = file.map(Path::to_path_buf).or(env_path);
        if let Some(path) = path {
            // An explicitly requested file must exist; the environment
            // fallback is also explicit in spirit, so same rule.
            let text = std::fs::read_to_string(&path)
                .map_err(|e| config_err!("cannot read config file {}: {e}", path.display()))?;
            config
                .apply_file(&text)
                .with_context(|| format!("in config file {}", path.display()))?;
        }
        for entry in sets {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| config_err!("--set takes key=value, got `{entry}`"))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    fn apply_file(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected `key = value`", idx + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", idx + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = PathBuf::from(value),
            "rules" => {
                partition_rules_named(value)?;
                self.rules = value.to_string();
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "min_frequency" => self.min_frequency = parse(key, value)?,
            "max_sequence_length" => {
                self.max_sequence_length = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "title_only" => self.title_only = parse(key, value)?,
            "feature" => {
                self.feature = value.parse().map_err(|e| config_err!("{e}"))?;
            }
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "embed_window" => self.embed_window = parse(key, value)?,
            "embed_negatives" => self.embed_negatives = parse(key, value)?,
            "embed_epochs" => self.embed_epochs = parse(key, value)?,
            "embed_lr" => self.embed_lr = parse(key, value)?,
            "hidden_units" => self.hidden_units = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lm_lr" => self.lm_lr = parse(key, value)?,
            "lm_epochs" => self.lm_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "classifier" => {
                self.classifier = value.parse().map_err(|e| config_err!("{e}"))?;
            }
            "softmax_lr" => self.softmax_lr = parse(key, value)?,
            "softmax_epochs" => self.softmax_epochs = parse(key, value)?,
            "softmax_l2" => self.softmax_l2 = parse(key, value)?,
            "svm_c" => self.svm_c = parse(key, value)?,
            "svm_epochs" => self.svm_epochs = parse(key, value)?,
            "mnb_alpha" => self.mnb_alpha = parse(key, value)?,
            "cosine_aggregation" => {
                self.cosine_aggregation = value.parse().map_err(|e| config_err!("{e}"))?;
            }
            "classifier_threshold" => self.classifier_threshold = parse(key, value)?,
            "thresholds" => self.thresholds = parse_thresholds(value)?,
            "top_k" => self.top_k = parse(key, value)?,
            other => return Err(config_err!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Checks value ranges; path existence is checked by each command for
    /// the inputs it actually reads.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(config_err!("{msg}"));
        if self.thresholds.is_empty() {
            return bad("thresholds must list at least one value".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if self.min_frequency == 0 {
            return bad("min_frequency must be at least 1".into());
        }
        if self.max_sequence_length == Some(0) {
            return bad("max_sequence_length must be positive or `none`".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            ));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("embed_window", self.embed_window),
            ("embed_negatives", self.embed_negatives),
            ("embed_epochs", self.embed_epochs),
            ("hidden_units", self.hidden_units),
            ("num_layers", self.num_layers),
            ("lm_epochs", self.lm_epochs),
            ("batch_size", self.batch_size),
            ("softmax_epochs", self.softmax_epochs),
            ("svm_epochs", self.svm_epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("embed_lr", self.embed_lr),
            ("lm_lr", self.lm_lr),
            ("softmax_lr", self.softmax_lr),
            ("svm_c", self.svm_c),
            ("mnb_alpha", self.mnb_alpha),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        if !self.softmax_l2.is_finite() || self.softmax_l2 < 0.0 {
            return bad(format!(
                "softmax_l2 must be a non-negative finite number, got {}",
                self.softmax_l2
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, in documented order. This is the
    /// echo format; feeding the pairs back through `set` reproduces the
    /// configuration exactly.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let agg = match self.cosine_aggregation {
            CosineAggregation::Max => "max",
            CosineAggregation::Mean => "mean",
        };
        vec![
            ("corpus", self.corpus.display().to_string()),
            ("rules", self.rules.clone()),
            ("out_dir", self.out_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("min_frequency", self.min_frequency.to_string()),
            (
                "max_sequence_length",
                self.max_sequence_length
                    .map_or("none".to_string(), |v| v.to_string()),
            ),
            ("title_only", self.title_only.to_string()),
            ("feature", self.feature.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("embed_window", self.embed_window.to_string()),
            ("embed_negatives", self.embed_negatives.to_string()),
            ("embed_epochs", self.embed_epochs.to_string()),
            ("embed_lr", self.embed_lr.to_string()),
            ("hidden_units", self.hidden_units.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("lm_lr", self.lm_lr.to_string()),
            ("lm_epochs", self.lm_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("classifier", self.classifier.to_string()),
            ("softmax_lr", self.softmax_lr.to_string()),
            ("softmax_epochs", self.softmax_epochs.to_string()),
            ("softmax_l2", self.softmax_l2.to_string()),
            ("svm_c", self.svm_c.to_string()),
            ("svm_epochs", self.svm_epochs.to_string()),
            ("mnb_alpha", self.mnb_alpha.to_string()),
            ("cosine_aggregation", agg.to_string()),
            ("classifier_threshold", self.classifier_threshold.to_string()),
            (
                "thresholds",
                self.thresholds
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("top_k", self.top_k.to_string()),
        ]
    }

    pub fn partition_rules(&self) -> PartitionRules {
        partition_rules_named(&self.rules).expect("validated at set time")
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            dim: self.embed_dim,
            window: self.embed_window,
            negatives: self.embed_negatives,
            epochs: self.embed_epochs,
            lr: self.embed_lr,
            seed: self.seed,
        }
    }

    pub fn dbrnna_config(&self) -> DbrnnaConfig {
        DbrnnaConfig {
            hidden_units: self.hidden_units,
            num_layers: self.num_layers,
            dropout: self.dropout,
            lr: self.lm_lr,
            epochs: self.lm_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self, min_train_per_class: usize) -> EvalConfig {
        EvalConfig {
            feature: self.feature,
            classifier: self.classifier,
            min_train_per_class,
            top_k: self.top_k,
            title_only: self.title_only,
            max_sequence_length: self.max_sequence_length,
            seed: self.seed,
            softmax: SoftmaxConfig {
                lr: self.softmax_lr,
                epochs: self.softmax_epochs,
                l2: self.softmax_l2,
            },
            svm: SvmConfig {
                c: self.svm_c,
                epochs: self.svm_epochs,
            },
            mnb_alpha: self.mnb_alpha,
            cosine_aggregation: self.cosine_aggregation,
        }
    }
}

pub fn partition_rules_named(name: &str) -> Result<PartitionRules> {
    match name {
        "chromium" => Ok(PartitionRules::chromium()),
        "mozilla" => Ok(PartitionRules::mozilla()),
        other => Err(config_err!(
            "unknown partition rules `{other}` (use chromium|mozilla)"
        )),
    }
}

fn parse_thresholds(value: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = value
        .split(',')
        .map(|v| parse("thresholds", v.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(config_err!("thresholds must list at least one value"));
    }
    Ok(list)
}
