//! Bidirectional LSTM feature model with soft attention.
//!
//! Two independent recurrent language models read each report forward and
//! backward over frozen skip-gram embeddings. After unsupervised training
//! on untriaged reports, the model is frozen and maps a token sequence to
//! the representation r = [fwd y_m, fwd a, bwd y_m, bwd a], where y_m is
//! the final top-layer output of a direction and a its attention summary,
//! giving a feature dimension of 4 x hidden_units.

pub mod graph;
mod train;

pub use train::{train_lm, LmTrainStats};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container, ContainerHeader};
use crate::embed::EmbeddingMatrix;
use crate::nncore::{NnError, ParameterStore, Tape, Tensor};
use crate::scalar::Scalar;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum DbrnnaError {
    #[error("no sequences to train on")]
    EmptyCorpus,
    #[error("all sequences shorter than 2 tokens; next-token targets need length >= 2")]
    AllSequencesTooShort,
    #[error("cannot extract features from an empty sequence")]
    EmptySequence,
    #[error("token index {index} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { index: usize, vocab_size: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbrnnaConfig {
    pub hidden_units: usize,
    pub num_layers: usize,
    /// Dropout probability on LSTM outputs between layers and before the
    /// output projections; train-time only.
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before training stops; 0
    /// disables early stopping.
    pub patience: usize,
    /// Fraction of sequences held out chronologically (from the end) for
    /// early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DbrnnaConfig {
    fn default() -> Self {
        DbrnnaConfig {
            hidden_units: 300,
            num_layers: 1,
            dropout: 0.3,
            lr: 0.001,
            epochs: 100,
            batch_size: 32,
            patience: 5,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Per-step outputs and attention weights of one extraction, for
/// diagnostics and invariant tests. Output lists are in each direction's
/// own visit order (the first backward output corresponds to the last
/// token).
#[derive(Clone, Debug)]
pub struct SequenceTrace<S> {
    pub feature: Vec<S>,
    pub fwd_outputs: Vec<Vec<S>>,
    pub bwd_outputs: Vec<Vec<S>>,
    pub fwd_alphas: Vec<f64>,
    pub bwd_alphas: Vec<f64>,
}

/// A trained (or explicitly random-initialized) feature extractor. Frozen
/// models are immutable; extraction never mutates state, so a model can be
/// shared across threads.
#[derive(Clone, Debug)]
pub struct FeatureModel<S> {
    config: DbrnnaConfig,
    params: ParameterStore<S>,
    embedding: Arc<Tensor<S>>,
}

impl<S: Scalar> FeatureModel<S> {
    /// Random initialization. Weight matrices draw from U[-k, k) with
    /// k = 1/sqrt(fan_in); gate biases start at zero except the forget
    /// gate's, which starts at one. Parameters are created in a fixed
    /// order (forward then backward; layers bottom-up; gates i,f,g,o;
    /// then attention, then the LM head), so the seed pins every value.
    /// Values are quantized to checkpoint (f32) precision up front so that
    /// save/load reproduces extraction exactly even for untrained models.
    pub fn init(config: DbrnnaConfig, embedding: EmbeddingMatrix<S>) -> Self {
        assert!(config.hidden_units > 0, "hidden_units must be positive");
        assert!(config.num_layers > 0, "num_layers must be positive");
        assert!(
            (0.0..1.0).contains(&config.dropout),
            "dropout must lie in [0, 1)"
        );
        let hidden = config.hidden_units;
        let vocab = embedding.vocab_size();
        let embed_dim = embedding.dim();
        assert!(vocab > 0 && embed_dim > 0, "degenerate embedding matrix");

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x10));
        let mut params = ParameterStore::new();
        for dir in [graph::FWD, graph::BWD] {
            let mut in_dim = embed_dim;
            for layer in 0..config.num_layers {
                let rows = in_dim + hidden;
                let k = 1.0 / (rows as f64).sqrt();
                for gate in ["wi", "wf", "wg", "wo"] {
                    params.insert(
                        format!("lstm/{dir}/{layer}/{gate}"),
                        Tensor::uniform(rows, hidden, -k, k, &mut rng),
                    );
                }
                params.insert(format!("lstm/{dir}/{layer}/bi"), Tensor::zeros(1, hidden));
                params.insert(
                    format!("lstm/{dir}/{layer}/bf"),
                    Tensor::filled(1, hidden, S::one()),
                );
                params.insert(format!("lstm/{dir}/{layer}/bg"), Tensor::zeros(1, hidden));
                params.insert(format!("lstm/{dir}/{layer}/bo"), Tensor::zeros(1, hidden));
                in_dim = hidden;
            }
            let k = 1.0 / (hidden as f64).sqrt();
            params.insert(
                format!("attn/{dir}/w"),
                Tensor::uniform(hidden, hidden, -k, k, &mut rng),
            );
            params.insert(format!("attn/{dir}/b"), Tensor::zeros(1, hidden));
            params.insert(
                format!("attn/{dir}/u"),
                Tensor::uniform(hidden, 1, -k, k, &mut rng),
            );
            params.insert(
                format!("lmhead/{dir}/w"),
                Tensor::uniform(hidden, vocab, -k, k, &mut rng),
            );
            params.insert(format!("lmhead/{dir}/b"), Tensor::zeros(1, vocab));
        }
        params.round_f32();
        let mut embedding = embedding.into_tensor();
        embedding.round_f32();
        FeatureModel {
            config,
            params,
            embedding: Arc::new(embedding),
        }
    }

    pub fn config(&self) -> &DbrnnaConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.config.hidden_units
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    /// Direct access to the named parameter tensors, for callers that
    /// build custom heads on the [`graph`] layer (training loops, gradient
    /// checks). Everyday use goes through [`extract_feature`](Self::extract_feature).
    pub fn params(&self) -> &ParameterStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<S> {
        &mut self.params
    }

    pub fn embedding(&self) -> &Arc<Tensor<S>> {
        &self.embedding
    }

    fn validate(&self, tokens: &[usize]) -> Result<(), DbrnnaError> {
        if tokens.is_empty() {
            return Err(DbrnnaError::EmptySequence);
        }
        let vocab = self.vocab_size();
        for &t in tokens {
            if t >= vocab {
                return Err(DbrnnaError::TokenOutOfRange {
                    index: t,
                    vocab_size: vocab,
                });
            }
        }
        Ok(())
    }

    /// Maps a non-empty token sequence to its 4 x hidden_units
    /// representation. Evaluation mode: dropout disabled, deterministic,
    /// no state mutated.
    pub fn extract_feature(&self, tokens: &[usize]) -> Result<Vec<S>, DbrnnaError> {
        self.validate(tokens)?;
        let mut tape = Tape::new(false);
        let bound = graph::bind(&mut tape, &self.params, &self.embedding, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout is off; never consulted
        let nodes = graph::feature_nodes(&mut tape, &bound, &self.config, tokens, &mut rng)?;
        Ok(tape.value(nodes.feature).data().to_vec())
    }

    /// Like [`extract_feature`](Self::extract_feature) but also returns the
    /// per-step outputs and attention weights.
    pub fn trace(&self, tokens: &[usize]) -> Result<SequenceTrace<S>, DbrnnaError> {
        self.validate(tokens)?;
        let mut tape = Tape::new(false);
        let bound = graph::bind(&mut tape, &self.params, &self.embedding, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nodes = graph::feature_nodes(&mut tape, &bound, &self.config, tokens, &mut rng)?;
        let row = |id| tape.value(id).data().to_vec();
        let alphas = |id| {
            tape.value(id)
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect::<Vec<f64>>()
        };
        Ok(SequenceTrace {
            feature: row(nodes.feature),
            fwd_outputs: nodes.fwd_outputs.iter().map(|&id| row(id)).collect(),
            bwd_outputs: nodes.bwd_outputs.iter().map(|&id| row(id)).collect(),
            fwd_alphas: alphas(nodes.fwd_alphas),
            bwd_alphas: alphas(nodes.bwd_alphas),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DbrnnaError> {
        let mut container = Container::new(ContainerHeader {
            kind: "dbrnna".to_string(),
            hidden_units: Some(self.config.hidden_units),
            num_layers: Some(self.config.num_layers),
            vocab_size: Some(self.vocab_size()),
            embed_dim: Some(self.embed_dim()),
            dropout: Some(self.config.dropout),
            seed: Some(self.config.seed),
            ..ContainerHeader::default()
        });
        container.push_tensor(
            "embed/input",
            vec![self.embedding.rows(), self.embedding.cols()],
            self.embedding.to_f32_vec(),
        );
        for (name, tensor) in self.params.iter() {
            container.push_tensor(name, vec![tensor.rows(), tensor.cols()], tensor.to_f32_vec());
        }
        container.save(path)?;
        Ok(())
    }

    /// Loads a frozen model. Training-only config fields (lr, epochs,
    /// batch size, patience, validation fraction) are not persisted and
    /// come back as defaults; they do not affect extraction.
    pub fn load(path: &std::path::Path) -> Result<FeatureModel<S>, DbrnnaError> {
        let container = Container::load(path)?;
        let header = &container.header;
        if header.kind != "dbrnna" {
            return Err(CheckpointError::VersionMismatch(format!(
                "expected a dbrnna checkpoint, found kind `{}`",
                header.kind
            ))
            .into());
        }
        let missing = |field: &str| {
            CheckpointError::VersionMismatch(format!("header missing field `{field}`"))
        };
        let config = DbrnnaConfig {
            hidden_units: header.hidden_units.ok_or_else(|| missing("hidden_units"))?,
            num_layers: header.num_layers.ok_or_else(|| missing("num_layers"))?,
            dropout: header.dropout.ok_or_else(|| missing("dropout"))?,
            seed: header.seed.ok_or_else(|| missing("seed"))?,
            ..DbrnnaConfig::default()
        };

        let tensor_of = |name: &str| -> Result<Tensor<S>, DbrnnaError> {
            let record = container.tensor(name).ok_or_else(|| {
                CheckpointError::VersionMismatch(format!("missing tensor `{name}`"))
            })?;
            if record.shape.len() != 2 {
                return Err(CheckpointError::VersionMismatch(format!(
                    "tensor `{name}` is not 2-dimensional"
                ))
                .into());
            }
            Ok(Tensor::from_f32_vec(
                record.shape[0],
                record.shape[1],
                &record.data,
            ))
        };

        let embedding = Arc::new(tensor_of("embed/input")?);
        let mut params = ParameterStore::new();
        let expected = expected_parameter_names(&config);
        for name in &expected {
            params.insert(name.clone(), tensor_of(name)?);
        }
        Ok(FeatureModel {
            config,
            params,
            embedding,
        })
    }
}

fn expected_parameter_names(config: &DbrnnaConfig) -> Vec<String> {
    let mut names = Vec::new();
    for dir in [graph::FWD, graph::BWD] {
        for layer in 0..config.num_layers {
            for gate in ["wi", "wf", "wg", "wo", "bi", "bf", "bg", "bo"] {
                names.push(format!("lstm/{dir}/{layer}/{gate}"));
            }
        }
        names.push(format!("attn/{dir}/w"));
        names.push(format!("attn/{dir}/b"));
        names.push(format!("attn/{dir}/u"));
        names.push(format!("lmhead/{dir}/w"));
        names.push(format!("lmhead/{dir}/b"));
    }
    names
}
