use std::collections::BTreeMap;
use std::sync::Arc;

use crate::nncore::tensor::Tensor;
use crate::nncore::{NnError, NnResult};
use crate::scalar::Scalar;

/// Named parameter collection. Tensors are reference-counted so tapes can
/// record them as leaves without copying; mutation between tapes goes
/// through copy-on-write.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<S> {
    params: BTreeMap<String, Arc<Tensor<S>>>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
        }
    }

    /// Registers a parameter. Names are unique; re-registering is a bug.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), Arc::new(tensor));
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn shared(&self, name: &str) -> Arc<Tensor<S>> {
        Arc::clone(
            self.params
                .get(name)
                .unwrap_or_else(|| panic!("unknown parameter `{name}`")),
        )
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        Arc::make_mut(
            self.params
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown parameter `{name}`")),
        )
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Deep copy of all parameter values, used for best-model snapshots.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor<S>> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_ref().clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &BTreeMap<String, Tensor<S>>) {
        for (name, tensor) in snapshot {
            *self.get_mut(name) = tensor.clone();
        }
    }

    /// Quantizes every parameter through f32, the checkpoint storage width.
    pub fn round_f32(&mut self) {
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            self.get_mut(&name).round_f32();
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment estimates plus the shared step counter.
pub struct AdamState<S> {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. `grads` must cover exactly the
/// parameter names in `params`, with matching shapes.
pub fn adam_step<S: Scalar>(
    params: &mut ParameterStore<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
) -> NnResult<()> {
    for name in grads.keys() {
        if !params.contains(name) {
            return Err(NnError::MissingGradient {
                detail: format!("gradient for unknown parameter `{name}`"),
            });
        }
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let grad = grads.get(name).ok_or_else(|| NnError::MissingGradient {
            detail: format!("no gradient for parameter `{name}`"),
        })?;
        if grad.shape() != params.get(name).shape() {
            return Err(NnError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "parameter `{name}` is {:?} but gradient is {:?}",
                    params.get(name).shape(),
                    grad.shape()
                ),
            });
        }
    }
    state.t += 1;
    let t = state.t;
    let cfg = state.config;
    let lr = S::lit(cfg.lr);
    let b1 = S::lit(cfg.beta1);
    let b2 = S::lit(cfg.beta2);
    let eps = S::lit(cfg.eps);
    let bc1 = S::lit(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = S::lit(1.0 - cfg.beta2.powi(t as i32));
    for name in &names {
        let grad = &grads[name];
        let shape = grad.shape();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
        let p = params.get_mut(name);
        for i in 0..grad.len() {
            let g = grad.data()[i];
            let mi = b1 * m.data()[i] + (S::one() - b1) * g;
            let vi = b2 * v.data()[i] + (S::one() - b2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] = p.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.all_finite() {
            return Err(NnError::NonFiniteValue { op: "adam_step" });
        }
    }
    Ok(())
}
