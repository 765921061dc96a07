//! Analytic-versus-numeric gradient comparison.
//!
//! The numeric side re-evaluates the forward pass at perturbed parameter
//! values (central differences); it never touches the tape's backward code,
//! so the two routes are independent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nncore::adam::ParameterStore;
use crate::nncore::tape::{NodeId, Tape};
use crate::nncore::NnResult;
use crate::scalar::Scalar;

/// A recorded forward pass ending in a scalar loss, with the tape nodes
/// that correspond to named parameters.
pub struct BuiltLoss<S: Scalar> {
    pub tape: Tape<S>,
    pub loss: NodeId,
    pub params: Vec<(String, NodeId)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Upper bound on coordinates probed per parameter; `None` checks all.
    /// Subsampling is seeded and reproducible.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            rel_tol: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: Option<(String, usize)>,
    pub coords_checked: usize,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.rel_tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradients of `build`'s loss against central finite
/// differences on every (sampled) parameter coordinate. `build` must be
/// deterministic: called repeatedly with perturbed parameter values it has
/// to construct the same graph (fixed dropout seeds, fixed inputs).
pub fn gradient_check<S, F>(
    params: &mut ParameterStore<S>,
    mut build: F,
    opts: &GradCheckOptions,
) -> NnResult<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&ParameterStore<S>) -> NnResult<BuiltLoss<S>>,
{
    let built = build(params)?;
    let mut grads = built.tape.backward(built.loss)?;
    let analytic: Vec<(String, Vec<S>)> = built
        .params
        .iter()
        .map(|(name, id)| {
            let g = grads
                .take(*id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![S::zero(); params.get(name).len()]);
            (name.clone(), g)
        })
        .collect();
    drop(built);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        coords_checked: 0,
        rel_tol: opts.rel_tol,
    };
    for (name, grad) in &analytic {
        let n = params.get(name).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(limit) = opts.max_coords_per_param {
            coords.shuffle(&mut rng);
            coords.truncate(limit);
            coords.sort_unstable();
        }
        for &i in &coords {
            let original = params.get(name).data()[i];
            params.get_mut(name).data_mut()[i] = original + S::lit(h);
            let plus = build(params)?;
            let f_plus = plus.tape.value(plus.loss).get(0, 0).as_f64();
            params.get_mut(name).data_mut()[i] = original - S::lit(h);
            let minus = build(params)?;
            let f_minus = minus.tape.value(minus.loss).get(0, 0).as_f64();
            params.get_mut(name).data_mut()[i] = original;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let err = rel_err(grad[i].as_f64(), numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
