//! Named parameter tensors, gradient accumulators and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named tensors plus their Adam state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        let len = tensor.len();
        self.moments.insert(
            name.clone(),
            Moments {
                m: vec![0.0; len],
                v: vec![0.0; len],
            },
        );
        self.tensors.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Panics when `name` is missing; callers only ask for tensors their own
    /// constructor created.
    pub fn data(&self, name: &str) -> &[f64] {
        &self.tensors[name].data
    }

    pub fn data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.tensors.get_mut(name).map(|t| t.data.as_mut_slice())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Zero-filled gradient buffers shaped like every tensor.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    /// Copies every tensor of `other` whose name and shape match. Returns the
    /// names that were copied. Adam state of copied tensors is reset.
    pub fn copy_matching(&mut self, other: &ParameterSet) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, src) in &other.tensors {
            if let Some(dst) = self.tensors.get_mut(name) {
                if dst.shape == src.shape {
                    dst.data.clone_from(&src.data);
                    let m = self.moments.get_mut(name).expect("moments track tensors");
                    m.m.iter_mut().for_each(|x| *x = 0.0);
                    m.v.iter_mut().for_each(|x| *x = 0.0);
                    copied.push(name.clone());
                }
            }
        }
        copied
    }

    /// One Adam update. Gradients containing NaN or infinity are rejected
    /// before any parameter is touched. Tensors without a gradient entry are
    /// left alone.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, g) in &grads.tensors {
            let Some(t) = self.tensors.get(name) else {
                return Err(Error::shape(format!("gradient for unknown tensor {name}")));
            };
            if t.len() != g.len() {
                return Err(Error::shape(format!(
                    "gradient for {name} has {} values, tensor has {}",
                    g.len(),
                    t.len()
                )));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {name} at index {bad}"
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in &grads.tensors {
            let tensor = self.tensors.get_mut(name).expect("checked above");
            let moments = self.moments.get_mut(name).expect("moments track tensors");
            for (((p, m), v), &gi) in tensor
                .data
                .iter_mut()
                .zip(moments.m.iter_mut())
                .zip(moments.v.iter_mut())
                .zip(g)
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}

/// Gradient buffers keyed by tensor name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    tensors: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient buffer for {name}"))
    }

    /// Disjoint mutable borrows of several buffers at once.
    pub fn get_many_mut<const N: usize>(&mut self, names: [&str; N]) -> [&mut [f64]; N] {
        let mut found: [Option<&mut [f64]>; N] = std::array::from_fn(|_| None);
        for (key, buf) in self.tensors.iter_mut() {
            if let Some(slot) = names.iter().position(|n| n == key) {
                found[slot] = Some(buf.as_mut_slice());
            }
        }
        found.map(|f| f.expect("gradient buffer registered"))
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.tensors.insert(name.into(), values);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Vec<f64>> {
        self.tensors.remove(name)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (name, g) in &other.tensors {
            match self.tensors.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.tensors.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.tensors.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors.values().all(|g| g.iter().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}
