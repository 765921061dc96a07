//! Tape-graph construction for the bidirectional feature model.
//!
//! Every function here appends nodes to a caller-owned [`Tape`]; parameters
//! enter the graph through [`bind`], which registers each store entry as a
//! shared leaf so training tapes can pull gradients for all of them by name.
//! The pieces are public so custom heads (classification layers, probes,
//! gradient checks) can be composed on top of the same graph the built-in
//! training loop uses.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::nncore::{NnResult, NodeId, ParameterStore, Tape, Tensor};
use crate::scalar::Scalar;

use super::DbrnnaConfig;

pub const FWD: &str = "fwd";
pub const BWD: &str = "bwd";

/// Parameter leaves of one tape, addressable by store name.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
    pub embed: NodeId,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound to this tape"))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// Registers every parameter plus the frozen embedding matrix as tape
/// leaves. `trainable` controls whether backward keeps their gradients; the
/// embedding is always frozen.
pub fn bind<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParameterStore<S>,
    embedding: &Arc<Tensor<S>>,
    trainable: bool,
) -> Bound {
    let mut ids = BTreeMap::new();
    for name in params.names() {
        ids.insert(name.to_string(), tape.leaf_shared(params.shared(name), trainable));
    }
    let embed = tape.leaf_shared(Arc::clone(embedding), false);
    Bound { ids, embed }
}

pub fn affine<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
) -> NnResult<NodeId> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

pub struct CellState {
    pub h: NodeId,
    pub c: NodeId,
}

/// One LSTM step: sigmoid input/forget/output gates and a tanh candidate,
/// each an affine map of `[x; h_prev]`; the step output is the new hidden
/// state.
pub fn lstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    dir: &str,
    layer: usize,
    x: NodeId,
    prev: &CellState,
) -> NnResult<(CellState, NodeId)> {
    let name = |gate: &str| format!("lstm/{dir}/{layer}/{gate}");
    let xh = tape.concat(&[x, prev.h], 1)?;
    let i_lin = affine(tape, xh, bound.id(&name("wi")), bound.id(&name("bi")))?;
    let i = tape.sigmoid(i_lin)?;
    let f_lin = affine(tape, xh, bound.id(&name("wf")), bound.id(&name("bf")))?;
    let f = tape.sigmoid(f_lin)?;
    let g_lin = affine(tape, xh, bound.id(&name("wg")), bound.id(&name("bg")))?;
    let g = tape.tanh(g_lin)?;
    let o_lin = affine(tape, xh, bound.id(&name("wo")), bound.id(&name("bo")))?;
    let o = tape.sigmoid(o_lin)?;
    let fc = tape.mul(f, prev.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok((CellState { h, c }, h))
}

/// Unrolls one direction's LSTM stack over per-step inputs (already in that
/// direction's visit order). Initial states are zero; dropout is applied to
/// the outputs feeding the next layer, never to the top layer (callers
/// drop out before projections instead). Returns the top-layer outputs.
pub fn run_direction<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &DbrnnaConfig,
    dir: &str,
    inputs: &[NodeId],
    rng: &mut ChaCha8Rng,
) -> NnResult<Vec<NodeId>> {
    let mut layer_in = inputs.to_vec();
    for layer in 0..cfg.num_layers {
        let h0 = tape.leaf(Tensor::zeros(1, cfg.hidden_units));
        let c0 = tape.leaf(Tensor::zeros(1, cfg.hidden_units));
        let mut state = CellState { h: h0, c: c0 };
        let mut outputs = Vec::with_capacity(layer_in.len());
        for &x in &layer_in {
            let (next, y) = lstm_step(tape, bound, dir, layer, x, &state)?;
            state = next;
            outputs.push(y);
        }
        if layer + 1 == cfg.num_layers {
            return Ok(outputs);
        }
        layer_in.clear();
        for &y in &outputs {
            layer_in.push(tape.dropout(y, cfg.dropout, rng)?);
        }
    }
    unreachable!("num_layers must be positive")
}

/// Soft attention over per-step outputs: score_i = u . tanh(W y_i + b),
/// alphas = softmax(scores), a = sum_i alpha_i y_i. Returns (alphas as a
/// `[1, m]` row, a as `[1, hidden]`).
pub fn attention_over<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    dir: &str,
    outputs: &[NodeId],
) -> NnResult<(NodeId, NodeId)> {
    let w = bound.id(&format!("attn/{dir}/w"));
    let b = bound.id(&format!("attn/{dir}/b"));
    let u = bound.id(&format!("attn/{dir}/u"));
    let mut scores = Vec::with_capacity(outputs.len());
    for &y in outputs {
        let z = affine(tape, y, w, b)?;
        let t = tape.tanh(z)?;
        scores.push(tape.matmul(t, u)?);
    }
    let score_row = tape.concat(&scores, 1)?;
    let alphas = tape.softmax(score_row)?;
    let stacked = tape.concat(outputs, 0)?;
    let a = tape.matmul(alphas, stacked)?;
    Ok((alphas, a))
}

pub struct FeatureNodes {
    pub feature: NodeId,
    pub fwd_outputs: Vec<NodeId>,
    pub bwd_outputs: Vec<NodeId>,
    pub fwd_alphas: NodeId,
    pub bwd_alphas: NodeId,
}

/// Builds the full representation r = [fwd y_m, fwd a, bwd y_m, bwd a] for
/// one token sequence (callers guarantee it is non-empty and in range).
pub fn feature_nodes<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &DbrnnaConfig,
    tokens: &[usize],
    rng: &mut ChaCha8Rng,
) -> NnResult<FeatureNodes> {
    let x_all = tape.embedding_lookup(bound.embed, tokens)?;
    let mut rows = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        rows.push(tape.slice_rows(x_all, t, 1)?);
    }
    let fwd = run_direction(tape, bound, cfg, FWD, &rows, rng)?;
    let rev: Vec<NodeId> = rows.iter().rev().copied().collect();
    let bwd = run_direction(tape, bound, cfg, BWD, &rev, rng)?;
    let (fwd_alphas, fwd_a) = attention_over(tape, bound, FWD, &fwd)?;
    let (bwd_alphas, bwd_a) = attention_over(tape, bound, BWD, &bwd)?;
    let fwd_last = *fwd.last().expect("non-empty sequence");
    let bwd_last = *bwd.last().expect("non-empty sequence");
    let feature = tape.concat(&[fwd_last, fwd_a, bwd_last, bwd_a], 1)?;
    Ok(FeatureNodes {
        feature,
        fwd_outputs: fwd,
        bwd_outputs: bwd,
        fwd_alphas,
        bwd_alphas,
    })
}

/// Language-model loss for one direction. `view` is the sequence in this
/// direction's reading order (reversed beforehand for the backward model),
/// so position t predicts view[t+1]. The first m-1 tokens are consumed;
/// per-step cross-entropies are averaged, and an auxiliary head predicts
/// the final token from the attention summary of the same outputs so the
/// attention parameters train under the unsupervised objective too. The
/// two terms combine as (sum of step losses + aux loss) / m.
fn lm_direction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &DbrnnaConfig,
    dir: &str,
    view: &[usize],
    rng: &mut ChaCha8Rng,
) -> NnResult<NodeId> {
    let m = view.len();
    debug_assert!(m >= 2, "language-model sequences need at least two tokens");
    let inputs = &view[..m - 1];
    let targets = &view[1..];
    let w_out = bound.id(&format!("lmhead/{dir}/w"));
    let b_out = bound.id(&format!("lmhead/{dir}/b"));

    let x_all = tape.embedding_lookup(bound.embed, inputs)?;
    let mut rows = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        rows.push(tape.slice_rows(x_all, t, 1)?);
    }
    let outputs = run_direction(tape, bound, cfg, dir, &rows, rng)?;

    let stacked = tape.concat(&outputs, 0)?;
    let dropped = tape.dropout(stacked, cfg.dropout, rng)?;
    let logits = affine(tape, dropped, w_out, b_out)?;
    let step_loss = tape.cross_entropy(logits, targets)?;

    let (_, summary) = attention_over(tape, bound, dir, &outputs)?;
    let summary_dropped = tape.dropout(summary, cfg.dropout, rng)?;
    let aux_logits = affine(tape, summary_dropped, w_out, b_out)?;
    let aux_loss = tape.cross_entropy(aux_logits, &[view[m - 1]])?;

    let step_sum = tape.scale(step_loss, (m - 1) as f64)?;
    let total = tape.add(step_sum, aux_loss)?;
    tape.scale(total, 1.0 / m as f64)
}

/// Mean of the forward and backward language-model losses for one sequence.
pub fn lm_sequence_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &DbrnnaConfig,
    tokens: &[usize],
    rng: &mut ChaCha8Rng,
) -> NnResult<NodeId> {
    let fwd = lm_direction_loss(tape, bound, cfg, FWD, tokens, rng)?;
    let reversed: Vec<usize> = tokens.iter().rev().copied().collect();
    let bwd = lm_direction_loss(tape, bound, cfg, BWD, &reversed, rng)?;
    let sum = tape.add(fwd, bwd)?;
    tape.scale(sum, 0.5)
}
