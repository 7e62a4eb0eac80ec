use std::str::FromStr;

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// `kernel / 2` on each side; preserves size for odd kernels at stride 1.
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, padding: Padding::Same }
    }
}

/// Batch-norm hyperparameters. Running statistics blend with weight
/// `momentum` toward each training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { eps: 1e-5, momentum: 0.1 }
    }
}

/// Every op kind the tape knows how to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    Matmul,
    Conv2d,
    BatchNorm2d,
    Relu,
    Sigmoid,
    MaxPool2d,
    NearestUpsample2d,
    Mean,
    Sum,
    Abs,
    Square,
    Log,
    Exp,
    Concat,
    CosineSimilarity,
    SoftmaxCrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::Matmul,
        OpKind::Conv2d,
        OpKind::BatchNorm2d,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::MaxPool2d,
        OpKind::NearestUpsample2d,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Log,
        OpKind::Exp,
        OpKind::Concat,
        OpKind::CosineSimilarity,
        OpKind::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Matmul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm2d => "batchnorm2d",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::MaxPool2d => "maxpool2d",
            OpKind::NearestUpsample2d => "nearest_upsample2d",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Concat => "concat",
            OpKind::CosineSimilarity => "cosine_similarity",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::UnsupportedOp(s.to_string()))
    }
}

/// Attributes for the generic [`Graph::apply`] entry point.
#[derive(Clone, Debug, Default)]
pub enum OpAttrs<T> {
    #[default]
    None,
    Conv2d(Conv2dSpec),
    BatchNorm2d {
        running_mean: Vec<T>,
        running_var: Vec<T>,
        config: BatchNormConfig,
        train: bool,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Upsample {
        factor: usize,
    },
    Concat {
        axis: usize,
    },
    Targets(Vec<usize>),
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias { x: Var, bias: Var },
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    GlobalAvgPool(Var),
    Mean(Var),
    Sum(Var),
    Abs(Var),
    Square(Var),
    Log(Var),
    Exp(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    CosineSimilarity { a: Var, b: Var },
    NormalizeRows(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceWithLogits { logits: Var, targets: Vec<T>, clip: T },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// A single-threaded tape. Nodes are appended in creation order, which is
/// a topological order; [`Graph::backward`] walks it in reverse.
pub struct Graph<T: Real = f64> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match *t {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [B, C, H, W], got {t:?}"))),
    }
}

fn dims2(op: &'static str, t: &[usize]) -> Result<[usize; 2]> {
    match *t {
        [r, c] => Ok([r, c]),
        _ => Err(Error::shape(op, format!("expected a matrix, got {t:?}"))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, value).expect("op produced inconsistent shape");
        self.push(value, op, rg)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.record(out, shape, op, &[a, b])
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.record(out, shape, op, &[x])
    }

    /// Dispatch by kind. Typed methods below are the usual entry points;
    /// this exists for table-driven callers and tests.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var], attrs: &mut OpAttrs<T>) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(kind.name(), format!("expected {n} inputs, got {}", inputs.len())));
            }
            Ok(())
        };
        let bad_attrs = || Error::invalid(format!("attributes do not match op {}", kind.name()));
        match kind {
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Matmul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Conv2d => {
                arity(2)?;
                let spec = match attrs {
                    OpAttrs::Conv2d(s) => *s,
                    OpAttrs::None => Conv2dSpec::default(),
                    _ => return Err(bad_attrs()),
                };
                self.conv2d(inputs[0], inputs[1], spec)
            }
            OpKind::BatchNorm2d => {
                arity(3)?;
                match attrs {
                    OpAttrs::BatchNorm2d { running_mean, running_var, config, train } => {
                        self.batchnorm2d(inputs[0], inputs[1], inputs[2], running_mean, running_var, *config, *train)
                    }
                    _ => Err(bad_attrs()),
                }
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::MaxPool2d => {
                arity(1)?;
                let (window, stride) = match attrs {
                    OpAttrs::MaxPool2d { window, stride } => (*window, *stride),
                    OpAttrs::None => (3, 2),
                    _ => return Err(bad_attrs()),
                };
                self.maxpool2d(inputs[0], window, stride)
            }
            OpKind::NearestUpsample2d => {
                arity(1)?;
                let factor = match attrs {
                    OpAttrs::Upsample { factor } => *factor,
                    OpAttrs::None => 2,
                    _ => return Err(bad_attrs()),
                };
                self.upsample_nearest2d(inputs[0], factor)
            }
            OpKind::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
            OpKind::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            OpKind::Abs => {
                arity(1)?;
                Ok(self.abs(inputs[0]))
            }
            OpKind::Square => {
                arity(1)?;
                Ok(self.square(inputs[0]))
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Exp => {
                arity(1)?;
                Ok(self.exp(inputs[0]))
            }
            OpKind::Concat => {
                let axis = match attrs {
                    OpAttrs::Concat { axis } => *axis,
                    OpAttrs::None => 0,
                    _ => return Err(bad_attrs()),
                };
                self.concat(inputs, axis)
            }
            OpKind::CosineSimilarity => {
                arity(2)?;
                self.cosine_similarity(inputs[0], inputs[1])
            }
            OpKind::SoftmaxCrossEntropy => {
                arity(1)?;
                match attrs {
                    OpAttrs::Targets(t) => self.softmax_cross_entropy(inputs[0], t),
                    _ => Err(bad_attrs()),
                }
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Adds `bias[C]` along axis 1 of `x` (`[B, C]` or `[B, C, H, W]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias);
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::shape("add_bias", format!("x {xs:?} with bias {bs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let c = xs[1];
        let b = self.data(bias);
        let out = self.data(x).iter().enumerate().map(|(i, &v)| v + b[(i / inner) % c]).collect();
        Ok(self.record(out, xs, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = dims2("matmul", self.shape(a))?;
        let [k2, n] = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(a),
            k as isize,
            1,
            self.data(b),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.record(out, vec![m, n], Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let [r, c] = dims2("transpose", self.shape(x))?;
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(d[i * c + j]);
            }
        }
        Ok(self.record(out, vec![c, r], Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.data(x).to_vec();
        Ok(self.record(out, shape.to_vec(), Op::Reshape(x), &[x]))
    }

    /// `x: [B, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let [b, cin, h, wd] = dims4("conv2d", self.shape(x))?;
        let [cout, cin2, kh, kw] = dims4("conv2d", self.shape(w))?;
        if cin != cin2 {
            return Err(Error::shape("conv2d", format!("input has {cin} channels, kernel expects {cin2}")));
        }
        if spec.stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let (pad_h, pad_w) = match spec.padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Explicit(p) => (p, p),
        };
        if h + 2 * pad_h < kh || wd + 2 * pad_w < kw {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{wd}")));
        }
        let geom = ConvGeom {
            batch: b,
            in_channels: cin,
            height: h,
            width: wd,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            stride: spec.stride,
            pad_h,
            pad_w,
            out_h: (h + 2 * pad_h - kh) / spec.stride + 1,
            out_w: (wd + 2 * pad_w - kw) / spec.stride + 1,
        };
        let out = kernels::conv2d_forward(self.data(x), self.data(w), &geom);
        let shape = vec![b, cout, geom.out_h, geom.out_w];
        Ok(self.record(out, shape, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    /// Per-channel batch normalization over `[B, C, H, W]`.
    ///
    /// In training mode the batch statistics normalize the input and are
    /// blended into `running_mean`/`running_var` (unbiased variance); in
    /// eval mode the running statistics are used as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        config: BatchNormConfig,
        train: bool,
    ) -> Result<Var> {
        let [b, c, h, w] = dims4("batchnorm2d", self.shape(x))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{name} has shape {:?}, expected [{c}]", self.shape(v)),
                ));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm2d", "running statistics length"));
        }
        let hw = h * w;
        let n = b * hw;
        if train && n < 2 {
            return Err(Error::invalid("batchnorm2d needs more than one value per channel in training mode"));
        }
        let xd = self.data(x);
        let eps = T::from_f64(config.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        if train {
            let nf = T::from_f64(n as f64);
            let mom = T::from_f64(config.momentum);
            for ch in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    s = s + xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().copied().sum();
                }
                let mean = s / nf;
                let mut ss = T::zero();
                for bi in 0..b {
                    for &v in &xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                        ss = ss + (v - mean) * (v - mean);
                    }
                }
                let var = ss / nf;
                means[ch] = mean;
                inv_std[ch] = T::one() / (var + eps).sqrt();
                let unbiased = ss / T::from_f64((n - 1) as f64);
                running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean;
                running_var[ch] = (T::one() - mom) * running_var[ch] + mom * unbiased;
            }
        } else {
            for ch in 0..c {
                means[ch] = running_mean[ch];
                inv_std[ch] = T::one() / (running_var[ch] + eps).sqrt();
            }
        }
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (i, (&v, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / hw) % c;
            *xh = (v - means[ch]) * inv_std[ch];
            *o = g[ch] * *xh + bt[ch];
        }
        let shape = self.shape(x).to_vec();
        Ok(self.record(out, shape, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let s = dims4("maxpool2d", self.shape(x))?;
        if window == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d window and stride must be positive"));
        }
        if s[2] < window || s[3] < window {
            return Err(Error::shape("maxpool2d", format!("window {window} larger than input {}x{}", s[2], s[3])));
        }
        let (out, argmax, [oh, ow]) = kernels::maxpool2d_forward(self.data(x), s, window, stride);
        Ok(self.record(out, vec![s[0], s[1], oh, ow], Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn upsample_nearest2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = dims4("nearest_upsample2d", self.shape(x))?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let out = kernels::upsample_nearest(self.data(x), s, factor);
        Ok(self.record(out, vec![s[0], s[1], s[2] * factor, s[3] * factor], Op::Upsample { x, factor }, &[x]))
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = dims4("global_avg_pool", self.shape(x))?;
        let hw = h * w;
        let inv = T::from_f64(1.0 / hw as f64);
        let out = self.data(x).chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Ok(self.record(out, vec![b, c], Op::GlobalAvgPool(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().copied().sum::<T>() / T::from_f64(d.len() as f64);
        self.record(vec![m], vec![1], Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.record(vec![s], vec![1], Op::Sum(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.data(x).iter().find(|&&v| v <= T::zero()) {
            return Err(Error::NonFinite(format!("log of non-positive value {bad:?}")));
        }
        Ok(self.unary(x, |v| v.ln(), Op::Log(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.data(*v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.record(out, shape, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    /// Row-wise cosine similarity of two `[N, D]` matrices (or two vectors).
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let (n, d) = rows_cols("cosine_similarity", self.shape(a))?;
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let (x, y) = (&ad[r * d..(r + 1) * d], &bd[r * d..(r + 1) * d]);
            let (nx, ny) = (norm(x), norm(y));
            if nx == T::zero() || ny == T::zero() {
                return Err(Error::ZeroVector { row: r });
            }
            out.push(dot(x, y) / (nx * ny));
        }
        Ok(self.record(out, vec![n], Op::CosineSimilarity { a, b }, &[a, b]))
    }

    /// Scales every row of `[N, D]` to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = rows_cols("normalize_rows", self.shape(x))?;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &xd[r * d..(r + 1) * d];
            let nr = norm(row);
            if nr == T::zero() {
                return Err(Error::ZeroVector { row: r });
            }
            out.extend(row.iter().map(|&v| v / nr));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.record(out, shape, Op::NormalizeRows(x), &[x]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let [n, c] = dims2("softmax_cross_entropy", self.shape(logits))?;
        if targets.len() != n {
            return Err(Error::shape("softmax_cross_entropy", format!("{n} rows but {} targets", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::shape("softmax_cross_entropy", format!("target {t} >= {c} classes")));
        }
        let ld = self.data(logits);
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for r in 0..n {
            let row = &ld[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - mx).exp();
                z = z + *p;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p = *p / z;
            }
            total = total + (mx + z.ln() - row[targets[r]]);
        }
        let loss = total / T::from_f64(n as f64);
        Ok(self.record(
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy on logits clipped to `[-clip, clip]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], clip: f64) -> Result<Var> {
        if targets.len() != self.value(logits).numel() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{:?} logits vs {} targets", self.shape(logits), targets.len()),
            ));
        }
        let clip = T::from_f64(clip);
        let ld = self.data(logits);
        let mut total = T::zero();
        for (&x, &y) in ld.iter().zip(targets) {
            let z = x.max(-clip).min(clip);
            total = total + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        }
        let loss = total / T::from_f64(ld.len() as f64);
        Ok(self.record(vec![loss], vec![1], Op::BceWithLogits { logits, targets: targets.to_vec(), clip }, &[logits]))
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn rows_cols(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match *s {
        [d] => Ok((1, d)),
        [n, d] => Ok((n, d)),
        _ => Err(Error::shape(op, format!("expected a vector or matrix, got {s:?}"))),
    }
}
