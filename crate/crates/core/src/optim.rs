use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const DEFAULT_LEARNING_RATE: f64 = 2e-5;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub(crate) first: Vec<Tensor>,
    pub(crate) second: Vec<Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(DEFAULT_LEARNING_RATE)
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Restores moments saved alongside a checkpoint.
    pub fn with_moments(mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Self {
        self.step = step;
        self.first = first;
        self.second = second;
        self
    }

    // Parameters registered after the optimizer started get fresh moments.
    fn sync_with(&mut self, store: &ParameterStore) -> Result<()> {
        for (id, name, value) in store.iter() {
            let i = id.index();
            if i < self.first.len() {
                if self.first[i].shape() != value.shape() || self.second[i].shape() != value.shape() {
                    return Err(Error::Contract(format!(
                        "optimizer moments for `{name}` have shape {:?}, parameter has {:?}",
                        self.first[i].shape(),
                        value.shape()
                    )));
                }
            } else {
                self.first.push(Tensor::zeros(value.shape()));
                self.second.push(Tensor::zeros(value.shape()));
            }
        }
        Ok(())
    }
}

/// One Adam update from the gradients currently held in `store`, which are
/// zeroed afterwards.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    state.sync_with(store)?;
    for (id, name, value) in store.iter() {
        if store.grad(id).shape() != value.shape() {
            return Err(Error::Contract(format!("gradient for `{name}` missing or misshapen")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (values, grads) = store.values_and_grads_mut();
    for (i, (value, grad)) in values.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    store.zero_grads();
    Ok(())
}
