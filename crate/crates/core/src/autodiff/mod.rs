//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! A [`Graph`] records every op applied to its nodes. Leaves created with
//! [`Graph::param`] receive gradients from [`Graph::backward`]; constants
//! never do.
//!
//! ```
//! use pretrain_bench::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let sq = g.square(x);
//! let loss = g.mean(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
//! ```

mod backward;
mod check;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use backward::Gradients;
pub use check::{grad_check, grad_check_many};
pub use graph::{BatchNormConfig, Conv2dSpec, Graph, OpAttrs, OpKind, Padding, Var};
pub use tensor::{Real, Tensor};
