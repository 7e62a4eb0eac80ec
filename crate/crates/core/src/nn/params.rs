use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// One named tensor in a [`ParamSet`]. Non-trainable entries hold buffers
/// such as batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of model tensors. Entry order is fixed by the
/// architecture, so two sets built from the same config line up index by
/// index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

/// Graph leaves for the trainable entries of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx].expect("buffer entries are not bound to the graph")
    }

    pub fn get(&self, idx: usize) -> Option<Var> {
        self.vars[idx]
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> usize {
        self.entries.push(ParamEntry { name: name.into(), tensor, trainable });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry<T> {
        &self.entries[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.entries[idx].tensor
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    /// Adds every trainable entry to `g`, as differentiable leaves when
    /// `requires_grad` is set and as constants otherwise.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Binding {
        let vars = self.entries.iter().map(|e| e.trainable.then(|| g.leaf(e.tensor.clone(), requires_grad))).collect();
        Binding { vars }
    }

    /// Overwrites tensors from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.tensor = b.tensor.clone();
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamSet<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(
                "param_set",
                format!("{} entries vs {}", self.entries.len(), other.entries.len()),
            ));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::shape(
                    "param_set",
                    format!("{} {:?} vs {} {:?}", a.name, a.tensor.shape(), b.name, b.tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn apply_updates(&mut self, updates: Vec<(usize, Vec<T>)>) {
        for (idx, data) in updates {
            self.entries[idx].tensor.data_mut().copy_from_slice(&data);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), tensor: e.tensor.cast(), trainable: e.trainable })
                .collect(),
        }
    }
}

pub(crate) fn kaiming_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

pub(crate) fn uniform_fan_in<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}
