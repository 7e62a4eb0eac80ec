use rand::Rng;

use super::params::{kaiming_normal, uniform_fan_in, Binding, ParamSet};
use crate::autodiff::{BatchNormConfig, Conv2dSpec, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through one forward pass. Batch-norm layers in training
/// mode push their new running statistics into `updates`; the caller
/// commits them with [`ParamSet::apply_updates`].
pub struct Forward<'a, T: Real> {
    pub params: &'a ParamSet<T>,
    pub binding: &'a Binding,
    pub mode: Mode,
    pub bn: BatchNormConfig,
    pub updates: Vec<(usize, Vec<T>)>,
}

impl<'a, T: Real> Forward<'a, T> {
    pub fn new(params: &'a ParamSet<T>, binding: &'a Binding, mode: Mode) -> Self {
        Self { params, binding, mode, bn: BatchNormConfig::default(), updates: Vec::new() }
    }
}

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.push(format!("{name}.weight"), uniform_fan_in(&[in_dim, out_dim], in_dim, rng), true);
        let bias = ps.push(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let y = g.matmul(x, f.binding.var(self.weight))?;
        g.add_bias(y, f.binding.var(self.bias))
    }
}

/// Convolution followed by batch norm. Bias is omitted since the norm
/// layer's shift subsumes it.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub spec: Conv2dSpec,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight =
            ps.push(format!("{name}.conv.weight"), kaiming_normal(&[out_ch, in_ch, kernel, kernel], fan_in, rng), true);
        let gamma = ps.push(format!("{name}.bn.weight"), Tensor::full(&[out_ch], T::one()), true);
        let beta = ps.push(format!("{name}.bn.bias"), Tensor::zeros(&[out_ch]), true);
        let running_mean = ps.push(format!("{name}.bn.running_mean"), Tensor::zeros(&[out_ch]), false);
        let running_var = ps.push(format!("{name}.bn.running_var"), Tensor::full(&[out_ch], T::one()), false);
        Self { weight, gamma, beta, running_mean, running_var, spec }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = g.conv2d(x, f.binding.var(self.weight), self.spec)?;
        let mut mean = f.params.tensor(self.running_mean).data().to_vec();
        let mut var = f.params.tensor(self.running_var).data().to_vec();
        let train = f.mode == Mode::Train;
        let out =
            g.batchnorm2d(y, f.binding.var(self.gamma), f.binding.var(self.beta), &mut mean, &mut var, f.bn, train)?;
        if train {
            f.updates.push((self.running_mean, mean));
            f.updates.push((self.running_var, var));
        }
        Ok(out)
    }
}

pub(crate) fn expect_dim(op: &'static str, shape: &[usize], dim: usize) -> Result<usize> {
    match *shape {
        [b, d] if d == dim => Ok(b),
        _ => Err(Error::shape(op, format!("expected [batch, {dim}], got {shape:?}"))),
    }
}
