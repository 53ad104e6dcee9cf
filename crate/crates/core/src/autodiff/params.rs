use std::collections::HashMap;

use super::{AutodiffError, BatchStats, Mode, Real, Result, Tape, Tensor, Var};
use crate::rng::{keyed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named array. Non-learnable entries hold buffers such as batch-norm
/// running statistics; they are saved with the model but never optimised.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub learnable: bool,
}

/// Ordered collection of named model arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, learnable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            learnable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.learnable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Learnable scalars whose name starts with `prefix`.
    pub fn learnable_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.learnable && p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    learnable: p.learnable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Handles of a batch-norm layer's running mean and variance buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnStats {
    pub mean: ParamId,
    pub var: ParamId,
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

/// One forward/backward pass: a fresh tape, the parameters bound to it,
/// seeded dropout and deferred running-statistics updates.
pub struct Session<T> {
    pub tape: Tape<T>,
    mode: Mode,
    bound: HashMap<ParamId, Var>,
    pending_bn: Vec<(BnStats, BatchStats<T>)>,
    dropout_seed: u64,
    dropout_calls: u64,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Real> Session<T> {
    pub fn new(mode: Mode, dropout_seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            mode,
            bound: HashMap::new(),
            pending_bn: Vec::new(),
            dropout_seed,
            dropout_calls: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Places a parameter on the tape once per session.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.param(id);
        let v = self
            .tape
            .leaf(p.value.clone(), p.learnable && self.mode == Mode::Train);
        self.bound.insert(id, v);
        v
    }

    /// Dropout seeded by `(session seed, call index)`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let mut rng = keyed(self.dropout_seed, stream::DROPOUT, self.dropout_calls);
        self.dropout_calls += 1;
        self.tape.dropout(x, p, self.mode, &mut rng)
    }

    pub fn batch_norm(
        &mut self,
        store: &ParamStore<T>,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        stats: BnStats,
    ) -> Result<Var> {
        let g = self.param(store, gamma);
        let b = self.param(store, beta);
        let running = (store.get(stats.mean).data(), store.get(stats.var).data());
        let (y, batch) = self.tape.batch_norm(x, g, b, self.mode, running, BN_EPS)?;
        if let Some(batch) = batch {
            self.pending_bn.push((stats, batch));
        }
        Ok(y)
    }

    /// Folds this pass's batch statistics into the running buffers
    /// (exponential average with momentum 0.1, unbiased variance).
    pub fn commit_running_stats(&mut self, store: &mut ParamStore<T>) {
        let m = T::of(BN_MOMENTUM);
        for (stats, batch) in self.pending_bn.drain(..) {
            let unbias = if batch.count > 1 {
                T::of(batch.count as f64 / (batch.count - 1) as f64)
            } else {
                T::one()
            };
            for (r, &b) in store
                .get_mut(stats.mean)
                .data_mut()
                .iter_mut()
                .zip(&batch.mean)
            {
                *r = (T::one() - m) * *r + m * b;
            }
            for (r, &b) in store
                .get_mut(stats.var)
                .data_mut()
                .iter_mut()
                .zip(&batch.var)
            {
                *r = (T::one() - m) * *r + m * b * unbias;
            }
        }
    }

    /// Runs backward and collects gradients of every bound parameter.
    pub fn backward(&mut self, loss: Var, store: &ParamStore<T>) -> Result<ParamGrads<T>> {
        let mut g = self.tape.backward(loss)?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for (&id, &v) in &self.bound {
            if store.param(id).learnable {
                grads[id.0] = g.take(v);
            }
        }
        Ok(ParamGrads { grads })
    }
}
