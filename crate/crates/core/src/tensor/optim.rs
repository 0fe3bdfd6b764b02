use std::collections::HashMap;

use indexmap::IndexMap;

use super::{Gradients, Graph, Result, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// A named tensor with its Adam moments.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub trainable: bool,
    m: Tensor<S>,
    v: Tensor<S>,
}

/// Named parameters in insertion order, plus optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<S> {
    params: IndexMap<String, Param<S>>,
    step: u64,
}

/// Parameters bound to a graph for one forward pass.
pub struct Bound<'g, S: Scalar> {
    vars: HashMap<String, Var<'g, S>>,
}

impl<'g, S: Scalar> Bound<'g, S> {
    pub fn get(&self, name: &str) -> Result<Var<'g, S>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let zeros = Tensor::zeros(value.shape());
        self.params.insert(
            name.to_string(),
            Param {
                value,
                trainable: true,
                m: zeros.clone(),
                v: zeros,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), p))
    }

    /// Registers every parameter on `graph`; frozen ones become constants.
    pub fn bind<'g>(&self, graph: &'g Graph<S>) -> Result<Bound<'g, S>> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for (name, p) in &self.params {
            let v = if p.trainable {
                graph.param(name, p.value.clone())?
            } else {
                graph.constant(p.value.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    /// One Adam update from `grads`. Returns the global gradient norm
    /// before clipping. Parameters without a gradient are left untouched.
    pub fn adam_step(&mut self, grads: &Gradients<S>, cfg: &AdamConfig) -> S {
        let norm = grads
            .params()
            .filter_map(|(_, g)| g)
            .map(|g| g.sq_norm())
            .sum::<S>()
            .sqrt();
        let clip = match cfg.clip_norm {
            Some(c) if norm.as_f64() > c => S::lit(c) / norm,
            _ => S::one(),
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        let (lr, eps) = (S::lit(cfg.lr), S::lit(cfg.eps));
        for (name, g) in grads.params() {
            let (Some(g), Some(p)) = (g, self.params.get_mut(name)) else {
                continue;
            };
            if !p.trainable {
                continue;
            }
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i] * clip;
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        norm
    }

    /// Converts values to another precision; optimizer state is reset.
    pub fn cast<T: Scalar>(&self) -> ParameterStore<T> {
        let mut out = ParameterStore::new();
        for (name, p) in &self.params {
            out.insert(name, p.value.cast()).expect("names are unique");
            out.params[name.as_str()].trainable = p.trainable;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::vector(vec![3.0, -2.0])).unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..2000 {
            let g = Graph::new();
            let b = store.bind(&g).unwrap();
            let x = b.get("x").unwrap();
            let loss = x.mul(x).unwrap().sum().unwrap();
            let grads = g.backward(loss).unwrap();
            store.adam_step(&grads, &cfg);
        }
        assert!(store.get("x").unwrap().data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn first_step_is_lr_times_sign_and_clipping_applies() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::vector(vec![0.0, 0.0])).unwrap();
        store.insert("frozen", Tensor::vector(vec![1.0])).unwrap();
        store.set_trainable("frozen", false).unwrap();
        let g = Graph::new();
        let b = store.bind(&g).unwrap();
        let w = g.constant(Tensor::vector(vec![30.0, -40.0])).unwrap();
        let f = b.get("frozen").unwrap();
        let loss = b.get("x").unwrap().mul(w).unwrap().sum().unwrap().add(f.sum().unwrap()).unwrap();
        let grads = g.backward(loss).unwrap();
        let norm = store.adam_step(&grads, &AdamConfig::default());
        assert!((norm - 50.0).abs() < 1e-12);
        let x = store.get("x").unwrap();
        assert!((x.data()[0] + 1e-3).abs() < 1e-9);
        assert!((x.data()[1] - 1e-3).abs() < 1e-9);
        assert_eq!(store.get("frozen").unwrap().data(), &[1.0]);
    }
}
