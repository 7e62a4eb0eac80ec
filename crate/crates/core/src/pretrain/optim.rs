use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Ratio of the maximum to the starting learning rate.
pub const ONE_CYCLE_DIV: f64 = 25.0;
/// Ratio of the maximum to the final learning rate.
pub const ONE_CYCLE_FINAL_DIV: f64 = 1e4;
/// Share of steps spent warming up.
pub const ONE_CYCLE_WARMUP: f64 = 0.25;

/// Cosine 1-cycle schedule: rises from `max_lr / 25` to `max_lr` over the
/// first quarter of the steps, then falls to `max_lr / 1e4` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::invalid(format!("step {step} outside schedule of {total_steps} steps")));
    }
    let warm = ((ONE_CYCLE_WARMUP * total_steps as f64).round() as usize).max(1);
    let start = max_lr / ONE_CYCLE_DIV;
    let end = max_lr / ONE_CYCLE_FINAL_DIV;
    if step < warm {
        let t = step as f64 / warm as f64;
        return Ok(start + (max_lr - start) * (1.0 - (PI * t).cos()) / 2.0);
    }
    let span = total_steps - 1 - warm;
    if span == 0 {
        return Ok(max_lr);
    }
    let t = (step - warm) as f64 / span as f64;
    Ok(max_lr - (max_lr - end) * (1.0 - (PI * t).cos()) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every entry of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = |e: &crate::nn::ParamEntry<T>| vec![T::zero(); if e.trainable { e.tensor.numel() } else { 0 }];
        Self {
            step: 0,
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` is the gradient of entry `i`;
/// `None` (or a buffer entry) leaves it untouched.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adam_step", format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let e = params.entry(i);
        if g.shape() != e.tensor.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{}: grad {:?} vs {:?}", e.name, g.shape(), e.tensor.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", e.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(cfg.eps));
    let one = T::one();
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        if !params.entry(i).trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = params.tensor_mut(i).data_mut();
        for k in 0..w.len() {
            let gk = g.data()[k];
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            w[k] = w[k] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
