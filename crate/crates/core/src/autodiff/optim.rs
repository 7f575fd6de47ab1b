//! Named parameter storage, gradient clipping and the Adam update rule.

use std::collections::BTreeMap;

use super::{Gradients, Graph, Tensor, Var};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

/// Parameters of a [`ParamStore`] loaded into one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds names to vars created elsewhere, e.g. by a gradient checker.
    pub fn from_vars<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// Panics on an unknown name: every name used by a forward pass is fixed
    /// at construction time.
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub type GradMap = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Loads every parameter into `g`. Trainable leaves are created when
    /// `trainable` is set, constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Gradients of the bound parameters that the loss actually reached.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> GradMap {
        bound
            .iter()
            .filter_map(|(name, v)| grads.get(v).map(|t| (name.to_string(), t.clone())))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

/// Global L2 norm of a gradient map.
pub fn grad_norm(grads: &GradMap) -> f64 {
    grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / (norm + 1e-6);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Parameters without a gradient in a step are
/// left untouched, moments included.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamStore,
    pub second: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: ParamStore::new(),
            second: ParamStore::new(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &GradMap) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entries
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            m.data_mut()
                .iter_mut()
                .zip(grad.data())
                .for_each(|(m, g)| *m = beta1 * *m + (1.0 - beta1) * g);
            let v = self
                .second
                .entries
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            v.data_mut()
                .iter_mut()
                .zip(grad.data())
                .for_each(|(v, g)| *v = beta2 * *v + (1.0 - beta2) * g * g);
            let (m, v) = (m.data(), v.data());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
