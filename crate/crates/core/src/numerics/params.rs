use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    has_grad: bool,
    adam: AdamState,
}

/// Named trainable tensors with their gradient slots and Adam moments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoreRepr", into = "StoreRepr")]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.clone(),
            grad: Tensor::zeros(&shape),
            has_grad: false,
            adam: AdamState {
                first_moment: Tensor::zeros(&shape),
                second_moment: Tensor::zeros(&shape),
                step: 0,
            },
            value,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Registers a weight drawn uniformly from `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn register_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.register(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn register_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        let p = &self.params[id.0];
        p.has_grad.then_some(&p.grad)
    }

    pub fn adam_state(&self, id: ParamId) -> &AdamState {
        &self.params[id.0].adam
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in &grads.entries {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::State(format!("unknown parameter id {}", id.0)))?;
            if g.len() != p.grad.len() {
                return Err(Error::dim("accumulate", p.grad.shape(), &[g.len()]));
            }
            for (slot, v) in p.grad.data_mut().iter_mut().zip(g) {
                *slot += v;
            }
            p.has_grad = true;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
            p.has_grad = false;
        }
    }

    /// One bias-corrected Adam update, then clears gradients.
    ///
    /// Parameters that received no gradient since the last step are left
    /// untouched, moments included. Fails if no parameter has a gradient.
    pub fn adam_step(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate {learning_rate}")));
        }
        if !self.params.iter().any(|p| p.has_grad) {
            return Err(Error::State("adam_step called with no accumulated gradient".into()));
        }
        for p in &mut self.params {
            if !p.has_grad {
                continue;
            }
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            let m = st.first_moment.data_mut();
            let v = st.second_moment.data_mut();
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        self.zero_grad();
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    params: Vec<ParamRepr>,
}

#[derive(Serialize, Deserialize)]
struct ParamRepr {
    name: String,
    value: Tensor,
    adam: AdamState,
}

impl From<StoreRepr> for ParamStore {
    fn from(repr: StoreRepr) -> Self {
        let mut store = ParamStore::new();
        for p in repr.params {
            let id = ParamId(store.params.len());
            store.by_name.insert(p.name.clone(), id);
            store.params.push(Param {
                grad: Tensor::zeros(p.value.shape()),
                has_grad: false,
                name: p.name,
                value: p.value,
                adam: p.adam,
            });
        }
        store
    }
}

impl From<ParamStore> for StoreRepr {
    fn from(store: ParamStore) -> Self {
        StoreRepr {
            params: store
                .params
                .into_iter()
                .map(|p| ParamRepr {
                    name: p.name,
                    value: p.value,
                    adam: p.adam,
                })
                .collect(),
        }
    }
}
