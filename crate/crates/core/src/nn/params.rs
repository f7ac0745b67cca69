use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Named tensors in a stable, documented order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

/// Shape record used when a store is serialised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        let prev = self.tensors.insert(name.clone(), t);
        debug_assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                lhs: slot.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        *slot = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.iter()
            .map(|(name, t)| ParamSpec {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    /// Leaves on `tape`, or constants when `trainable` is false.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    let v = if trainable {
                        tape.leaf(t.clone())
                    } else {
                        tape.constant(t.clone())
                    };
                    (k.clone(), v)
                })
                .collect(),
        }
    }
}

/// A [`ParamStore`] placed on a tape.
pub struct Bound<'t> {
    vars: IndexMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn from_vars<S: Into<String>>(vars: impl IntoIterator<Item = (S, Var<'t>)>) -> Self {
        Self {
            vars: vars.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> + '_ {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Seeded parameter factory.
///
/// Parameters are kept `f32`-representable throughout training (they are
/// computed in `f64` but stored as `f32`).
///
/// Convolution and dense weights and biases are uniform in `±1/√fan_in`;
/// recurrent weights are uniform in `±1/√H`.
pub struct ParamInit<'a> {
    rng: &'a mut ChaCha8Rng,
    pub store: ParamStore,
}

impl<'a> ParamInit<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            rng,
            store: ParamStore::new(),
        }
    }

    /// Values are rounded to `f32` so that parameters survive a checkpoint
    /// round trip unchanged.
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound) as f32 as f64)
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// `{name}.weight [cout×cin×k]` and `{name}.bias [cout]`.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = self.uniform(&[cout, cin, k], bound);
        let b = self.uniform(&[cout], bound);
        self.store.insert(format!("{name}.weight"), w);
        self.store.insert(format!("{name}.bias"), b);
    }

    /// `{name}.weight [in×out]` and `{name}.bias [out]`.
    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(&[fan_in, fan_out], bound);
        let b = self.uniform(&[fan_out], bound);
        self.store.insert(format!("{name}.weight"), w);
        self.store.insert(format!("{name}.bias"), b);
    }

    pub fn prelu(&mut self, name: &str, channels: usize) {
        self.store
            .insert(format!("{name}.slope"), Tensor::full(vec![channels], 0.25));
    }

    /// Generator `cond → 16 → 2C`. The output bias starts at γ=1, β=0 so an
    /// untrained FiLM layer is close to the identity.
    pub fn film(&mut self, name: &str, cond_dim: usize, channels: usize) {
        self.dense(&format!("{name}.gen1"), cond_dim, super::FILM_HIDDEN);
        let bound = 1.0 / (super::FILM_HIDDEN as f64).sqrt();
        let w = self.uniform(&[super::FILM_HIDDEN, 2 * channels], bound);
        let mut b = vec![1.0; channels];
        b.extend(std::iter::repeat_n(0.0, channels));
        self.store.insert(format!("{name}.gen2.weight"), w);
        self.store
            .insert(format!("{name}.gen2.bias"), Tensor::from_vec(b));
    }

    /// LSTM gates `(i, f, g, o)`; forget bias starts at 1.
    pub fn lstm(&mut self, name: &str, input: usize, hidden: usize) {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = self.uniform(&[input, 4 * hidden], bound);
        let w_hh = self.uniform(&[hidden, 4 * hidden], bound);
        let mut b = self.uniform(&[4 * hidden], bound).into_vec();
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        self.store.insert(format!("{name}.w_ih"), w_ih);
        self.store.insert(format!("{name}.w_hh"), w_hh);
        self.store.insert(format!("{name}.bias"), Tensor::from_vec(b));
    }

    /// GRU gates `(z, r, n)`.
    pub fn gru(&mut self, name: &str, input: usize, hidden: usize) {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = self.uniform(&[input, 3 * hidden], bound);
        let w_hh = self.uniform(&[hidden, 3 * hidden], bound);
        let b = self.uniform(&[3 * hidden], bound);
        self.store.insert(format!("{name}.w_ih"), w_ih);
        self.store.insert(format!("{name}.w_hh"), w_hh);
        self.store.insert(format!("{name}.bias"), b);
    }
}
