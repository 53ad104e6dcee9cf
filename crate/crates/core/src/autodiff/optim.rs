use super::{AutodiffError, ParamGrads, ParamStore, Real, Result, Tensor};

/// Hyperparameters and momentum buffers of SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<Tensor<T>>>,
}

/// Stochastic gradient descent with heavy-ball momentum and L2 decay:
///
/// ```text
/// g   ← grad + wd·param
/// buf ← momentum·buf + g
/// p   ← p − lr·buf
/// ```
pub type Sgd<T> = OptimState<T>;

impl<T: Real> OptimState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    /// Momentum 0.9 and weight decay 1e-4.
    pub fn standard(lr: f64) -> Self {
        Self::new(lr, 0.9, 1e-4)
    }

    pub fn buffer(&self, index: usize) -> Option<&Tensor<T>> {
        self.buffers.get(index).and_then(Option::as_ref)
    }

    /// Updates every learnable parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        if grads.len() != store.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.buffers.len() < store.len() {
            self.buffers.resize_with(store.len(), || None);
        }
        let (lr, mom, wd) = (
            T::of(self.lr),
            T::of(self.momentum),
            T::of(self.weight_decay),
        );
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let Some(grad) = grads.get(id) else { continue };
            if !store.param(id).learnable {
                continue;
            }
            let param = store.get_mut(id);
            if grad.shape() != param.shape() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "gradient {:?} for parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let buf = self.buffers[id.index()].get_or_insert_with(|| Tensor::zeros(param.shape()));
            for ((p, b), &g) in param
                .data_mut()
                .iter_mut()
                .zip(buf.data_mut())
                .zip(grad.data())
            {
                let g = g + wd * *p;
                *b = mom * *b + g;
                *p -= lr * *b;
            }
        }
        Ok(())
    }
}
