//! Unsupervised language-model training for the feature extractor.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingMatrix;
use crate::nncore::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::scalar::Scalar;
use crate::util::derive_seed;

use super::graph;
use super::{DbrnnaConfig, DbrnnaError, FeatureModel};

#[derive(Clone, Debug, Default)]
pub struct LmTrainStats {
    /// Mean per-sequence loss of each epoch, measured during training
    /// (dropout active, parameters moving).
    pub epoch_train_losses: Vec<f64>,
    /// Mean per-sequence loss on the held-out tail after each epoch
    /// (dropout disabled).
    pub epoch_val_losses: Vec<f64>,
    /// Index into the epoch vectors of the checkpoint that was kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub trained_sequences: usize,
    pub validation_sequences: usize,
    pub skipped_short: usize,
}

// Seed streams: 0x10 is parameter init (see FeatureModel::init); shuffle
// and dropout get one stream per epoch so early stopping at different
// epochs never shifts later draws.
const SHUFFLE_STREAM: u64 = 0x100;
const DROPOUT_STREAM: u64 = 0x10_000;

/// Trains the forward and backward language models on untriaged-report
/// sequences (chronological order expected: the validation split is the
/// final `val_fraction` of usable sequences). Each position predicts the
/// next token in its direction's reading order; Adam updates on mean batch
/// gradients; the best-validation parameters are restored at the end and
/// rounded to checkpoint (f32) precision so saving is lossless.
pub fn train_lm<S: Scalar>(
    sequences: &[Vec<usize>],
    embedding: EmbeddingMatrix<S>,
    config: DbrnnaConfig,
) -> Result<(FeatureModel<S>, LmTrainStats), DbrnnaError> {
    if sequences.is_empty() {
        return Err(DbrnnaError::EmptyCorpus);
    }
    let usable: Vec<&Vec<usize>> = sequences.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(DbrnnaError::AllSequencesTooShort);
    }
    let vocab_size = embedding.vocab_size();
    for seq in &usable {
        for &t in seq.iter() {
            if t >= vocab_size {
                return Err(DbrnnaError::TokenOutOfRange {
                    index: t,
                    vocab_size,
                });
            }
        }
    }

    let mut model = FeatureModel::init(config, embedding);
    let n = usable.len();
    let n_val = if n >= 2 {
        ((n as f64 * config.val_fraction).floor() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (train_set, val_set) = usable.split_at(n - n_val);
    // A single usable sequence leaves nothing to hold out; validation then
    // monitors the training sequence itself.
    let val_eval: &[&Vec<usize>] = if n_val == 0 { train_set } else { val_set };

    let mut stats = LmTrainStats {
        trained_sequences: train_set.len(),
        validation_sequences: val_eval.len(),
        skipped_short: sequences.len() - n,
        ..LmTrainStats::default()
    };

    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut best_val = f64::INFINITY;
    let mut best_snapshot = model.params().snapshot();
    let mut epochs_since_best = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT_STREAM + epoch as u64));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grad_sum: BTreeMap<String, Tensor<S>> = model
                .params()
                .iter()
                .map(|(name, t)| (name.to_string(), Tensor::zeros(t.rows(), t.cols())))
                .collect();
            for &idx in batch {
                let mut tape = Tape::new(true);
                let bound = graph::bind(&mut tape, model.params(), model.embedding(), true);
                let loss = graph::lm_sequence_loss(
                    &mut tape,
                    &bound,
                    model.config(),
                    train_set[idx],
                    &mut dropout_rng,
                )?;
                epoch_loss += tape.value(loss).get(0, 0).as_f64();
                let mut grads = tape.backward(loss)?;
                for (name, id) in bound.param_ids() {
                    if let Some(g) = grads.take(id) {
                        let acc = grad_sum.get_mut(name).expect("bound name is a parameter");
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                }
            }
            let scale = S::lit(1.0 / batch.len() as f64);
            for g in grad_sum.values_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            adam_step(model.params_mut(), &grad_sum, &mut adam)?;
        }
        stats
            .epoch_train_losses
            .push(epoch_loss / train_set.len() as f64);

        let val_loss = mean_eval_loss(&model, val_eval)?;
        stats.epoch_val_losses.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_snapshot = model.params().snapshot();
            stats.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if config.patience > 0 && epochs_since_best >= config.patience {
                stats.stopped_early = true;
                break;
            }
        }
    }

    model.params_mut().restore(&best_snapshot);
    model.params_mut().round_f32();
    Ok((model, stats))
}

fn mean_eval_loss<S: Scalar>(
    model: &FeatureModel<S>,
    sequences: &[&Vec<usize>],
) -> Result<f64, DbrnnaError> {
    let mut total = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout disabled on eval tapes
    for seq in sequences {
        let mut tape = Tape::new(false);
        let bound = graph::bind(&mut tape, model.params(), model.embedding(), false);
        let loss = graph::lm_sequence_loss(&mut tape, &bound, model.config(), seq, &mut rng)?;
        total += tape.value(loss).get(0, 0).as_f64();
    }
    Ok(total / sequences.len() as f64)
}
