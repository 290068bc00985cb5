//! Named flat parameter tensors and matching gradient buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.fill(value);
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of parameter tensors with unique names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: Tensor) -> ParamId {
        debug_assert!(
            self.tensors.iter().all(|t| t.name != tensor.name),
            "duplicate parameter name {}",
            tensor.name
        );
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Drops every tensor whose name starts with `prefix`, keeping order.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.tensors.retain(|t| !t.name.starts_with(prefix));
    }

    /// FNV-1a over names, shapes and value bits of the selected tensors.
    pub fn fingerprint(&self, include: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for t in self.tensors.iter().filter(|t| include(&t.name)) {
            eat(t.name.as_bytes());
            for &d in &t.shape {
                eat(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            buffers: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradient buffers congruent to a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    buffers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn from_buffers(buffers: Vec<Vec<f64>>) -> Self {
        Self { buffers }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.buffers[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.buffers[id.0]
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    /// `self += other`, element by element.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.buffers.len() != other.buffers.len() {
            return Err(Error::Validation("gradient sets differ in tensor count".into()));
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            if a.len() != b.len() {
                return Err(Error::Validation("gradient tensors differ in length".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in &mut self.buffers {
            for x in buf {
                *x *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.buffers.iter().all(|b| b.iter().all(|&x| x == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.buffers
            .iter()
            .flatten()
            .fold(0.0_f64, |m, &x| m.max(x.abs()))
    }
}
