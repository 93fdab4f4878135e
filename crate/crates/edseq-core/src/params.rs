//! Named trainable parameters with per-loss gradient barriers.
//!
//! A barrier tag on a parameter makes every backward pass run under that
//! loss name contribute exactly zero to the parameter's accumulator. The
//! attention bilinear matrix uses this to stay untouched by the generation
//! and bag-of-labels objectives.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub barriers: BTreeSet<String>,
}

/// Insertion-ordered registry of parameters. Iteration order (and therefore
/// initialization, updates and checkpoints) is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
            barriers: BTreeSet::new(),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Xavier-uniform initialized matrix: limit sqrt(6/(fan_in+fan_out)).
    pub fn insert_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).expect("xavier shape"))
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Tag `params` so that backward passes run under `loss_name` contribute
    /// zero gradient to them.
    pub fn with_barrier(&mut self, loss_name: &str, params: &[ParamId]) {
        for &id in params {
            self.entries[id.0].barriers.insert(loss_name.to_string());
        }
    }

    pub fn is_barred(&self, id: ParamId, loss_name: &str) -> bool {
        self.entries[id.0].barriers.contains(loss_name)
    }

    /// Add `scale * grads` into the accumulators of trainable parameters.
    pub fn accumulate(&mut self, grads: &GradMap, scale: f64) {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                let entry = &mut self.entries[i];
                for (acc, &gv) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += scale * gv;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }
}

/// Gradients keyed by parameter, as produced by one backward pass.
/// Parameters that received no contribution (unused on the tape, or barred
/// for the pass's loss name) hold `None`, which reads as a zero gradient.
#[derive(Debug, Clone)]
pub struct GradMap {
    pub(crate) by_param: Vec<Option<Tensor>>,
}

impl GradMap {
    pub fn empty(n_params: usize) -> Self {
        GradMap { by_param: vec![None; n_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, materializing zeros for absent entries.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(store.value(id).shape()),
        }
    }

    pub(crate) fn add_into(&mut self, id: ParamId, g: &Tensor) {
        let slot = &mut self.by_param[id.0];
        match slot {
            Some(acc) => {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
            None => *slot = Some(g.clone()),
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule")]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam_default() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer over a `ParamStore`; consumes accumulated gradients on `step`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub rule: UpdateRule,
    pub learning_rate: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, learning_rate: f64, store: &ParamStore) -> Result<Self> {
        if learning_rate < 0.0 {
            return Err(Error::invalid(format!("negative learning rate {learning_rate}")));
        }
        let shapes: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Ok(Optimizer { rule, learning_rate, m: shapes.clone(), v: shapes, t: 0 })
    }

    /// Apply one update using the store's accumulated gradients, then clear
    /// the accumulators. Non-trainable parameters are left untouched (their
    /// moment state does not advance either).
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let lr = self.learning_rate;
        for i in 0..store.len() {
            let id = ParamId(i);
            if !store.get(id).trainable {
                continue;
            }
            match self.rule {
                UpdateRule::Sgd => {
                    let p = store.get_mut(id);
                    let (value, grad) = (&mut p.value, &p.grad);
                    for (v, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *v -= lr * g;
                    }
                }
                UpdateRule::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    let p = &mut store.entries[i];
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (j, val) in p.value.data_mut().iter_mut().enumerate() {
                        let g = p.grad.data()[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *val -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grads();
    }
}
