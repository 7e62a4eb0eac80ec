use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Allowed deviation of a queued key's norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `theta_k <- m * theta_k + (1 - m) * theta_q`, elementwise.
pub fn momentum_update<T: Real>(theta_k: &mut [T], theta_q: &[T], m: f64) -> Result<()> {
    if theta_k.len() != theta_q.len() {
        return Err(Error::shape("momentum_update", format!("{} vs {} values", theta_k.len(), theta_q.len())));
    }
    if !(0.0..1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum {m} outside [0, 1)")));
    }
    let (mt, rest) = (T::from_f64(m), T::from_f64(1.0 - m));
    for (k, &q) in theta_k.iter_mut().zip(theta_q) {
        *k = mt * *k + rest * q;
    }
    Ok(())
}

/// Blends every trainable entry of `key` toward the same-named entry of
/// `query`. Buffers are left alone.
pub fn momentum_update_params<T: Real>(key: &mut ParamSet<T>, query: &ParamSet<T>, m: f64) -> Result<()> {
    for i in 0..key.len() {
        if !key.entry(i).trainable {
            continue;
        }
        let name = &key.entry(i).name;
        let q = query
            .find(name)
            .ok_or_else(|| Error::shape("momentum_update", format!("query network has no `{name}`")))?;
        let q = query.tensor(q).data();
        momentum_update(key.tensor_mut(i).data_mut(), q, m)?;
    }
    Ok(())
}

/// Fixed-capacity FIFO of unit-length keys.
#[derive(Clone, Debug, PartialEq)]
pub struct MocoQueue<T: Real> {
    capacity: usize,
    dim: usize,
    /// Ring storage, `capacity * dim` values.
    data: Vec<T>,
    /// Slot of the oldest key.
    head: usize,
    len: usize,
}

impl<T: Real> MocoQueue<T> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("queue capacity and key width must be positive"));
        }
        Ok(Self { capacity, dim, data: vec![T::zero(); capacity * dim], head: 0, len: 0 })
    }

    /// A full queue of random unit keys.
    pub fn random(capacity: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let mut keys = Vec::with_capacity(capacity * dim);
        for _ in 0..capacity {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            keys.extend(row.iter().map(|v| T::from_f64(v / n)));
        }
        q.push(&Tensor::new(vec![capacity, dim], keys)?)?;
        Ok(q)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `keys: [B, dim]`, evicting the oldest keys once full.
    pub fn push(&mut self, keys: &Tensor<T>) -> Result<()> {
        let [b, d] = *keys.shape() else {
            return Err(Error::shape("queue_push", format!("keys must be a matrix, got {:?}", keys.shape())));
        };
        if d != self.dim {
            return Err(Error::shape("queue_push", format!("key width {d}, queue width {}", self.dim)));
        }
        if b > self.capacity {
            return Err(Error::invalid(format!("batch of {b} keys exceeds queue capacity {}", self.capacity)));
        }
        for (r, row) in keys.data().chunks(d).enumerate() {
            let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!("key {r} has norm {norm}, expected unit length")));
            }
        }
        for row in keys.data().chunks(d) {
            let slot = if self.len < self.capacity {
                self.len += 1;
                (self.head + self.len - 1) % self.capacity
            } else {
                let s = self.head;
                self.head = (self.head + 1) % self.capacity;
                s
            };
            self.data[slot * d..(slot + 1) * d].copy_from_slice(row);
        }
        Ok(())
    }

    /// Keys from oldest to newest as `[len, dim]`.
    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        if self.len == 0 {
            return Err(Error::InsufficientData("empty negative queue".into()));
        }
        let d = self.dim;
        let mut out = Vec::with_capacity(self.len * d);
        for i in 0..self.len {
            let s = (self.head + i) % self.capacity;
            out.extend_from_slice(&self.data[s * d..(s + 1) * d]);
        }
        Tensor::new(vec![self.len, d], out)
    }
}
