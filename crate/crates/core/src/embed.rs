//! Skip-gram word embeddings with negative sampling.
//!
//! Trained on the untriaged partition only, then frozen before feature
//! learning. The implementation follows the classic formulation: for each
//! (center, context) pair within the window, the positive context and
//! `negatives` draws from the unigram^0.75 distribution get logistic
//! updates. A fixed symmetric window is used (no random window shrinking)
//! and sentences are visited in corpus order, so a seed fully determines
//! the result.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container, ContainerHeader};
use crate::nncore::Tensor;
use crate::scalar::Scalar;
use crate::textprep::Vocabulary;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no training pairs: corpus is empty or all sequences are shorter than 2")]
    EmptyCorpus,
    #[error("token index {index} not addressable in vocabulary of size {vocab_size}")]
    OutOfVocabulary { index: usize, vocab_size: usize },
    #[error("checkpoint failure: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

/// Input-side embedding matrix, one row per vocabulary index. The `<pad>`
/// row is all-zero and never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<S> {
    tensor: Tensor<S>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    pub fn from_tensor(tensor: Tensor<S>) -> Self {
        EmbeddingMatrix { tensor }
    }

    pub fn vocab_size(&self) -> usize {
        self.tensor.rows()
    }

    pub fn dim(&self) -> usize {
        self.tensor.cols()
    }

    pub fn vector(&self, index: usize) -> &[S] {
        self.tensor.row(index)
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.tensor
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<(), EmbedError> {
        let mut container = Container::new(ContainerHeader {
            kind: "embedding".to_string(),
            vocab_size: Some(self.vocab_size()),
            embed_dim: Some(self.dim()),
            seed: Some(seed),
            ..ContainerHeader::default()
        });
        container.push_tensor(
            "embed/input",
            vec![self.vocab_size(), self.dim()],
            self.tensor.to_f32_vec(),
        );
        container.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(EmbeddingMatrix<S>, ContainerHeader), EmbedError> {
        let container = Container::load(path)?;
        let record = container.tensor("embed/input").ok_or_else(|| {
            CheckpointError::VersionMismatch("missing tensor `embed/input`".to_string())
        })?;
        let tensor = Tensor::from_f32_vec(record.shape[0], record.shape[1], &record.data);
        Ok((EmbeddingMatrix { tensor }, container.header))
    }
}

#[derive(Clone, Debug, Default)]
pub struct SkipgramStats {
    /// Mean pair loss before any update (evaluated with its own seeded
    /// negative draws).
    pub initial_loss: f64,
    /// Running mean pair loss of each training epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: usize,
}

struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    /// Unigram distribution raised to 3/4, the standard negative-sampling
    /// smoothing.
    fn build(frequencies: &[u64]) -> Self {
        let cumulative: Vec<f64> = frequencies
            .iter()
            .scan(0.0, |acc, &f| {
                *acc += (f as f64).powf(0.75);
                Some(*acc)
            })
            .collect();
        NegativeTable { cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let x = rng.gen::<f64>() * self.total();
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn for_each_pair(sequences: &[Vec<usize>], window: usize, mut f: impl FnMut(usize, usize)) {
    for seq in sequences {
        for (i, &center) in seq.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(seq.len() - 1);
            for (j, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                if j != i {
                    f(center, context);
                }
            }
        }
    }
}

/// Trains skip-gram embeddings over encoded token sequences. `<unk>`
/// participates like any token; `<pad>` never occurs in sequences, draws
/// zero negative-sampling mass, and its row stays zero.
pub fn train_skipgram<S: Scalar>(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    config: &EmbeddingConfig,
) -> Result<(EmbeddingMatrix<S>, SkipgramStats), EmbedError> {
    assert!(config.dim > 0 && config.window > 0, "degenerate embedding config");
    for seq in sequences {
        for &t in seq {
            if t >= vocab_size {
                return Err(EmbedError::OutOfVocabulary {
                    index: t,
                    vocab_size,
                });
            }
        }
    }
    let mut frequencies = vec![0u64; vocab_size];
    let mut pairs = 0usize;
    for_each_pair(sequences, config.window, |c, _| {
        frequencies[c] += 1;
        pairs += 1;
    });
    if pairs == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    let table = NegativeTable::build(&frequencies);

    // Input vectors: uniform in [-0.5/dim, 0.5/dim), drawn row-major; the
    // <pad> row is zeroed afterwards. Context vectors start at zero.
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let bound = 0.5 / config.dim as f64;
    let mut input = Tensor::<f64>::uniform(vocab_size, config.dim, -bound, bound, &mut init_rng);
    for c in 0..config.dim {
        input.set(Vocabulary::PAD, c, 0.0);
    }
    let mut context = Tensor::<f64>::zeros(vocab_size, config.dim);

    let mut stats = SkipgramStats {
        pairs_per_epoch: pairs,
        ..SkipgramStats::default()
    };
    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    stats.initial_loss = average_pair_loss(
        &input,
        &context,
        sequences,
        config,
        &table,
        &mut eval_rng,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let dim = config.dim;
    let lr = config.lr;
    let mut neu1e = vec![0.0f64; dim];
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for_each_pair(sequences, config.window, |center, positive| {
            neu1e.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..=config.negatives {
                let (target, label) = if k == 0 {
                    (positive, 1.0)
                } else {
                    let draw = table.draw(&mut rng);
                    if draw == positive {
                        continue;
                    }
                    (draw, 0.0)
                };
                let dot: f64 = (0..dim)
                    .map(|d| input.get(center, d) * context.get(target, d))
                    .sum();
                let f = sigmoid(dot);
                epoch_loss -= if label == 1.0 { f.max(1e-300).ln() } else { (1.0 - f).max(1e-300).ln() };
                let err = (f - label) * lr;
                for (d, e) in neu1e.iter_mut().enumerate() {
                    let ctx_val = context.get(target, d);
                    *e += err * ctx_val;
                    context.set(target, d, ctx_val - err * input.get(center, d));
                }
            }
            for (d, &e) in neu1e.iter().enumerate() {
                let v = input.get(center, d) - e;
                input.set(center, d, v);
            }
            epoch_pairs += 1;
        });
        stats.epoch_losses.push(epoch_loss / epoch_pairs as f64);
    }

    // Quantize to checkpoint precision so a save/load round trip reproduces
    // the in-memory matrix exactly.
    input.round_f32();
    let data = input.data().iter().map(|&v| S::lit(v)).collect();
    let tensor = Tensor::from_vec(vocab_size, dim, data);
    Ok((EmbeddingMatrix { tensor }, stats))
}

fn average_pair_loss(
    input: &Tensor<f64>,
    context: &Tensor<f64>,
    sequences: &[Vec<usize>],
    config: &EmbeddingConfig,
    table: &NegativeTable,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut loss = 0.0;
    let mut pairs = 0usize;
    for_each_pair(sequences, config.window, |center, positive| {
        for k in 0..=config.negatives {
            let (target, label) = if k == 0 {
                (positive, true)
            } else {
                let draw = table.draw(rng);
                if draw == positive {
                    continue;
                }
                (draw, false)
            };
            let dot: f64 = (0..input.cols())
                .map(|d| input.get(center, d) * context.get(target, d))
                .sum();
            let f = sigmoid(dot);
            loss -= if label { f.max(1e-300).ln() } else { (1.0 - f).max(1e-300).ln() };
        }
        pairs += 1;
    });
    loss / pairs as f64
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// The `k` vocabulary indices closest to `query` by cosine similarity,
/// best first, ties broken by ascending index. The query itself and the
/// special tokens are excluded; querying a special is an error.
pub fn nearest_neighbors<S: Scalar>(
    matrix: &EmbeddingMatrix<S>,
    query: usize,
    k: usize,
) -> Result<Vec<(usize, f64)>, EmbedError> {
    if query >= matrix.vocab_size() || Vocabulary::is_special(query) {
        return Err(EmbedError::OutOfVocabulary {
            index: query,
            vocab_size: matrix.vocab_size(),
        });
    }
    let q = matrix.vector(query);
    let mut scored: Vec<(usize, f64)> = (Vocabulary::NUM_SPECIALS..matrix.vocab_size())
        .filter(|&i| i != query)
        .map(|i| (i, cosine(q, matrix.vector(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_matrix() -> EmbeddingMatrix<f64> {
        // Rows: 0 unk, 1 pad, 2..5 planted. Row 3 duplicates row 2; row 4
        // is orthogonal; row 5 is opposite.
        let data = vec![
            0.1, 0.1, //
            0.0, 0.0, //
            1.0, 0.0, //
            2.0, 0.0, //
            0.0, 1.0, //
            -1.0, 0.0,
        ];
        EmbeddingMatrix::from_tensor(Tensor::from_vec(6, 2, data))
    }

    #[test]
    fn nearest_neighbors_ranks_by_cosine_and_skips_specials() {
        let m = planted_matrix();
        let got = nearest_neighbors(&m, 2, 3).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, 3);
        assert!((got[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(got[1].0, 4);
        assert!((got[1].1).abs() < 1e-12);
        assert_eq!(got[2].0, 5);
        assert!((got[2].1 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_neighbors_rejects_specials_and_out_of_range() {
        let m = planted_matrix();
        assert!(matches!(
            nearest_neighbors(&m, 0, 2),
            Err(EmbedError::OutOfVocabulary { .. })
        ));
        assert!(matches!(
            nearest_neighbors(&m, 99, 2),
            Err(EmbedError::OutOfVocabulary { .. })
        ));
        assert!(nearest_neighbors(&m, 2, 0).unwrap().is_empty());
    }

    fn toy_sequences() -> Vec<Vec<usize>> {
        // Vocab: 0 unk, 1 pad, 2..8 content. Two interleaved topic chains.
        let mut seqs = Vec::new();
        for _ in 0..40 {
            seqs.push(vec![2, 3, 4, 2, 3, 4]);
            seqs.push(vec![5, 6, 7, 5, 6, 7]);
        }
        seqs
    }

    #[test]
    fn training_reduces_average_loss() {
        let cfg = EmbeddingConfig {
            dim: 8,
            window: 2,
            negatives: 3,
            epochs: 3,
            lr: 0.05,
            seed: 7,
        };
        let (_, stats) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg).unwrap();
        let last = *stats.epoch_losses.last().unwrap();
        assert!(
            last < stats.initial_loss,
            "loss did not decrease: {} -> {last}",
            stats.initial_loss
        );
    }

    #[test]
    fn pad_row_stays_zero() {
        let cfg = EmbeddingConfig {
            dim: 8,
            window: 2,
            negatives: 3,
            epochs: 2,
            lr: 0.05,
            seed: 7,
        };
        let (m, _) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg).unwrap();
        assert!(m.vector(Vocabulary::PAD).iter().all(|&v| v == 0.0));
        // Trained rows moved away from zero.
        assert!(m.vector(2).iter().any(|&v| v.abs() > 1e-4));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let cfg = EmbeddingConfig {
            dim: 4,
            ..EmbeddingConfig::default()
        };
        assert!(matches!(
            train_skipgram::<f64>(&[], 4, &cfg),
            Err(EmbedError::EmptyCorpus)
        ));
        let singletons: Vec<Vec<usize>> = vec![vec![2], vec![3]];
        assert!(matches!(
            train_skipgram::<f64>(&singletons, 4, &cfg),
            Err(EmbedError::EmptyCorpus)
        ));
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let cfg = EmbeddingConfig {
            dim: 6,
            window: 2,
            negatives: 2,
            epochs: 2,
            lr: 0.05,
            seed: 11,
        };
        let (a, _) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg).unwrap();
        let (b, _) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg).unwrap();
        assert_eq!(a.tensor().data(), b.tensor().data());
        let cfg2 = EmbeddingConfig { seed: 12, ..cfg };
        let (c, _) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg2).unwrap();
        assert_ne!(a.tensor().data(), c.tensor().data());
    }

    #[test]
    fn interchangeable_tokens_embed_closer_than_unrelated_ones() {
        // Tokens 2 and 3 appear in identical contexts (4, 5); token 6 lives
        // in a disjoint context (7, 8).
        let mut seqs = Vec::new();
        for i in 0..120 {
            let synonym = if i % 2 == 0 { 2 } else { 3 };
            seqs.push(vec![4, synonym, 5]);
            seqs.push(vec![7, 6, 8]);
        }
        let cfg = EmbeddingConfig {
            dim: 12,
            window: 2,
            negatives: 4,
            epochs: 12,
            lr: 0.05,
            seed: 3,
        };
        let (m, _) = train_skipgram::<f64>(&seqs, 9, &cfg).unwrap();
        let close = cosine(m.vector(2), m.vector(3));
        let far = cosine(m.vector(2), m.vector(6));
        assert!(
            close > far,
            "synonyms not closer: cos(2,3)={close}, cos(2,6)={far}"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = EmbeddingConfig {
            dim: 6,
            window: 2,
            negatives: 2,
            epochs: 1,
            lr: 0.05,
            seed: 5,
        };
        let (m, _) = train_skipgram::<f64>(&toy_sequences(), 8, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embedding.dbra");
        m.save(&path, cfg.seed).unwrap();
        let (loaded, header) = EmbeddingMatrix::<f64>::load(&path).unwrap();
        assert_eq!(loaded.tensor().data(), m.tensor().data());
        assert_eq!(header.kind, "embedding");
        assert_eq!(header.vocab_size, Some(8));
    }
}
