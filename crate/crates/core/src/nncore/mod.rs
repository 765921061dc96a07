//! Numeric substrate: dense tensors, a reverse-mode autodiff tape, the Adam
//! optimizer, and a finite-difference gradient checker.
//!
//! Everything here is single-threaded and deterministic: given the same
//! inputs and seeds, forward values, gradients, and optimizer trajectories
//! are bit-identical across runs.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, ParameterStore};
pub use gradcheck::{gradient_check, BuiltLoss, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("{detail}")]
    MissingGradient { detail: String },
}

pub type NnResult<T> = Result<T, NnError>;

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t64(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut tape = Tape::new(false);
        let a = tape.leaf(t64(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t64(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_dimension_mismatch() {
        let mut tape = Tape::<f64>::new(false);
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(4, 2));
        assert!(matches!(
            tape.matmul(a, b),
            Err(NnError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t64(2, 3, vec![0.1, -2.0, 3.0, 5.0, 5.0, 5.0]));
        let y = tape.softmax(x).unwrap();
        for r in 0..2 {
            let sum: f64 = tape.value(y).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // Uniform logits give uniform probabilities.
        for c in 0..3 {
            assert!((tape.value(y).get(1, c) - 1.0 / 3.0).abs() < 1e-12);
        }
        // Shifting logits by a constant leaves the softmax unchanged.
        let shifted = tape.leaf(t64(2, 3, vec![100.1, 98.0, 103.0, 5.0, 5.0, 5.0]));
        let ys = tape.softmax(shifted).unwrap();
        for c in 0..3 {
            assert!((tape.value(ys).get(0, c) - tape.value(y).get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let mut tape = Tape::new(false);
        let logits = tape.leaf(t64(1, 4, vec![0.0; 4]));
        let loss = tape.cross_entropy(logits, &[0]).unwrap();
        assert!((tape.value(loss).get(0, 0) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        // p=1, g=1, lr=0.001: m=0.1, v=0.001, m_hat=1, v_hat=1,
        // p' = 1 - 0.001 / (1 + 1e-8) = 0.999 (to within 1e-9).
        let mut params = ParameterStore::new();
        params.insert("p", t64(1, 1, vec![1.0]));
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), t64(1, 1, vec![1.0]));
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert!((params.get("p").get(0, 0) - 0.999).abs() < 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_with_zero_gradients_leaves_parameters_unchanged() {
        let mut params = ParameterStore::new();
        params.insert("p", t64(1, 2, vec![0.5, -0.25]));
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::zeros(1, 2));
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.get("p").data(), &[0.5, -0.25]);
    }

    #[test]
    fn adam_rejects_missing_and_unknown_gradients() {
        let mut params = ParameterStore::new();
        params.insert("a", Tensor::<f64>::zeros(1, 1));
        let mut state = AdamState::new(AdamConfig::default());
        let empty = BTreeMap::new();
        assert!(matches!(
            adam_step(&mut params, &empty, &mut state),
            Err(NnError::MissingGradient { .. })
        ));
        let mut extra = BTreeMap::new();
        extra.insert("a".to_string(), Tensor::<f64>::zeros(1, 1));
        extra.insert("ghost".to_string(), Tensor::<f64>::zeros(1, 1));
        assert!(matches!(
            adam_step(&mut params, &extra, &mut state),
            Err(NnError::MissingGradient { .. })
        ));
    }

    #[test]
    fn reused_node_gradients_accumulate() {
        // loss = sum(x + x); d/dx = 2 everywhere.
        let mut tape = Tape::new(false);
        let x = tape.leaf(t64(1, 3, vec![1.0, 2.0, 3.0]).with_grad(true));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_lookup_scatter_adds_repeated_indices() {
        let mut tape = Tape::new(false);
        let m = tape.leaf(t64(3, 2, vec![0.0; 6]).with_grad(true));
        let out = tape.embedding_lookup(m, &[1, 1, 2]).unwrap();
        let loss = tape.sum_all(out).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(m).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_masks_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut eval_tape = Tape::new(false);
        let x = eval_tape.leaf(t64(1, 4, vec![1.0, 2.0, 3.0, 4.0]));
        let y = eval_tape.dropout(x, 0.5, &mut rng).unwrap();
        assert_eq!(eval_tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut train_tape = Tape::new(true);
        let x = train_tape.leaf(t64(1, 1000, vec![1.0; 1000]));
        let y = train_tape.dropout(x, 0.25, &mut rng).unwrap();
        let mut kept = 0usize;
        for &v in train_tape.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
            if v != 0.0 {
                kept += 1;
            }
        }
        // Keep rate concentrates near 0.75 for 1000 draws.
        assert!((600..=880).contains(&kept));
    }

    #[test]
    fn dropout_with_p_zero_is_identity_even_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(true);
        let x = tape.leaf(t64(1, 3, vec![1.0, -2.0, 3.0]));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new(false);
        let a = tape.leaf(t64(1, 1, vec![1e308]));
        let b = tape.leaf(t64(1, 1, vec![1e308]));
        assert!(matches!(
            tape.add(a, b),
            Err(NnError::NonFiniteValue { op: "add" })
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t64(1, 2, vec![1.0, 2.0]).with_grad(true));
        assert!(matches!(
            tape.backward(x),
            Err(NnError::ShapeMismatch { op: "backward", .. })
        ));
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::new(false);
        let a = tape.leaf(t64(1, 2, vec![1.0, 2.0]));
        let b = tape.leaf(t64(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).shape(), [3, 2]);
        let back = tape.slice_rows(c, 1, 2).unwrap();
        assert_eq!(tape.value(back).data(), &[3.0, 4.0, 5.0, 6.0]);

        let d = tape.concat(&[a, a], 1).unwrap();
        assert_eq!(tape.value(d).data(), &[1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn gradient_check_on_quadratic_is_tight() {
        // loss = sum(x*x): analytic gradient 2x; central differences on a
        // quadratic are exact up to rounding, so the error bound is far
        // below the default tolerance.
        let mut params = ParameterStore::new();
        params.insert("x", t64(1, 5, vec![0.9, -0.4, 0.1, 1.7, -1.2]));
        let report = gradient_check(
            &mut params,
            |p| {
                let mut tape = Tape::new(false);
                let x = tape.leaf(p.get("x").clone().with_grad(true));
                let sq = tape.mul(x, x)?;
                let loss = tape.sum_all(sq)?;
                Ok(BuiltLoss {
                    tape,
                    loss,
                    params: vec![("x".to_string(), x)],
                })
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 5);
    }
}
