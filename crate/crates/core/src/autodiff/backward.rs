use std::collections::BTreeMap;

use super::graph::{dot, norm, sigmoid, Graph, Op, Var};
use super::kernels;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar loss with respect to every leaf that requires grad.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f64> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = BTreeMap::new();

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                out.insert(Var(id), Tensor::new(shape, gy).expect("gradient shape"));
                continue;
            }
            self.propagate(id, &gy, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Vec<T>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], g);
            }
        };
        let data = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                send(*a, gy.to_vec());
                send(*b, gy.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, gy.to_vec());
                send(*b, gy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    send(*a, gy.iter().zip(data(*b)).map(|(&g, &v)| g * v).collect());
                }
                if needs(*b) {
                    send(*b, gy.iter().zip(data(*a)).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Scale(x, c) => send(*x, gy.iter().map(|&g| g * *c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, gy.to_vec()),
            Op::AddBias { x, bias } => {
                send(*x, gy.to_vec());
                if needs(*bias) {
                    let xs = self.shape(*x);
                    let c = xs[1];
                    let inner: usize = xs[2..].iter().product();
                    let mut gb = vec![T::zero(); c];
                    for (i, &g) in gy.iter().enumerate() {
                        gb[(i / inner) % c] = gb[(i / inner) % c] + g;
                    }
                    send(*bias, gb);
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if needs(*a) {
                    // dA = dC B^T
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gy,
                        n as isize,
                        1,
                        data(*b),
                        1,
                        n as isize,
                        T::zero(),
                        &mut ga,
                        k as isize,
                        1,
                    );
                    send(*a, ga);
                }
                if needs(*b) {
                    // dB = A^T dC
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        data(*a),
                        1,
                        k as isize,
                        gy,
                        n as isize,
                        1,
                        T::zero(),
                        &mut gb,
                        n as isize,
                        1,
                    );
                    send(*b, gb);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gy[j * r + i];
                    }
                }
                send(*x, gx);
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = kernels::conv2d_backward(data(*x), data(*w), gy, geom, needs(*x), needs(*w));
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let s = self.shape(*x);
                let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                let g = data(*gamma);
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (i, (&d, &xh)) in gy.iter().zip(xhat).enumerate() {
                    let ch = (i / hw) % c;
                    sum_dy[ch] = sum_dy[ch] + d;
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + d * xh;
                }
                if needs(*x) {
                    let n = T::from_f64((b * hw) as f64);
                    let gx = gy
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(i, (&d, &xh))| {
                            let ch = (i / hw) % c;
                            if *train {
                                g[ch] * inv_std[ch] / n * (n * d - sum_dy[ch] - xh * sum_dy_xhat[ch])
                            } else {
                                g[ch] * inv_std[ch] * d
                            }
                        })
                        .collect();
                    send(*x, gx);
                }
                send(*gamma, sum_dy_xhat);
                send(*beta, sum_dy);
            }
            Op::Relu(x) => {
                send(*x, gy.iter().zip(y).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect());
            }
            Op::Sigmoid(x) => {
                send(*x, gy.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect());
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (&g, &i) in gy.iter().zip(argmax) {
                    gx[i] = gx[i] + g;
                }
                send(*x, gx);
            }
            Op::Upsample { x, factor } => {
                let s = self.shape(*x);
                let shape = [s[0], s[1], s[2], s[3]];
                send(*x, kernels::upsample_nearest_backward(gy, shape, *factor));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let inv = T::from_f64(1.0 / hw as f64);
                send(*x, gy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect());
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![gy[0] / T::from_f64(n as f64); n]);
            }
            Op::Sum(x) => send(*x, vec![gy[0]; self.value(*x).numel()]),
            Op::Abs(x) => {
                let sign = |v: T| match v.partial_cmp(&T::zero()) {
                    Some(std::cmp::Ordering::Greater) => T::one(),
                    Some(std::cmp::Ordering::Less) => -T::one(),
                    _ => T::zero(),
                };
                send(*x, gy.iter().zip(data(*x)).map(|(&g, &v)| g * sign(v)).collect());
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                send(*x, gy.iter().zip(data(*x)).map(|(&g, &v)| g * two * v).collect());
            }
            Op::Log(x) => send(*x, gy.iter().zip(data(*x)).map(|(&g, &v)| g / v).collect()),
            Op::Exp(x) => send(*x, gy.iter().zip(y).map(|(&g, &v)| g * v).collect()),
            Op::Concat { inputs, axis } => {
                let base = self.shape(inputs[0]);
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total: usize = inputs.iter().map(|v| self.shape(*v)[*axis]).sum::<usize>() * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis] * inner;
                    if needs(*v) {
                        let mut gx = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            gx.extend_from_slice(&gy[o * total + offset..o * total + offset + len]);
                        }
                        send(*v, gx);
                    }
                    offset += len;
                }
            }
            Op::CosineSimilarity { a, b } => {
                let d = *self.shape(*a).last().unwrap();
                let (ad, bd) = (data(*a), data(*b));
                let mut ga = vec![T::zero(); ad.len()];
                let mut gb = vec![T::zero(); bd.len()];
                for (r, &g) in gy.iter().enumerate() {
                    let (x, z) = (&ad[r * d..(r + 1) * d], &bd[r * d..(r + 1) * d]);
                    let (nx, nz) = (norm(x), norm(z));
                    let s = y[r];
                    for i in 0..d {
                        ga[r * d + i] = g * (z[i] / (nx * nz) - s * x[i] / (nx * nx));
                        gb[r * d + i] = g * (x[i] / (nx * nz) - s * z[i] / (nz * nz));
                    }
                }
                if needs(*a) {
                    send(*a, ga);
                }
                if needs(*b) {
                    send(*b, gb);
                }
            }
            Op::NormalizeRows(x) => {
                let d = *self.shape(*x).last().unwrap();
                let xd = data(*x);
                let mut gx = vec![T::zero(); xd.len()];
                for r in 0..xd.len() / d {
                    let nr = norm(&xd[r * d..(r + 1) * d]);
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gy[r * d..(r + 1) * d];
                    let proj = dot(yr, gr);
                    for i in 0..d {
                        gx[r * d + i] = (gr[i] - yr[i] * proj) / nr;
                    }
                }
                send(*x, gx);
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = gy[0] / T::from_f64(n as f64);
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gx[r * c + t] = gx[r * c + t] - scale;
                }
                send(*logits, gx);
            }
            Op::BceWithLogits { logits, targets, clip } => {
                let ld = data(*logits);
                let scale = gy[0] / T::from_f64(ld.len() as f64);
                let gx = ld
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| if x.abs() > *clip { T::zero() } else { (sigmoid(x) - t) * scale })
                    .collect();
                send(*logits, gx);
            }
        }
    }
}
