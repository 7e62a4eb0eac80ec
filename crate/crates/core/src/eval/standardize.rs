use serde::{Deserialize, Serialize};

use super::EncodingMatrix;
use crate::error::{Error, Result};

/// Column centering and scaling fitted on a training matrix. Columns with
/// no spread on the training rows are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub keep: Vec<bool>,
}

impl Standardizer {
    /// Population statistics per column of `train`.
    pub fn fit(train: &EncodingMatrix) -> Result<Self> {
        let (n, d) = (train.rows(), train.cols());
        if n == 0 {
            return Err(Error::InsufficientData("standardizer needs at least one row".into()));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        // Rounding in the mean leaves a constant column with a tiny residual spread.
        let keep: Vec<bool> = sd.iter().zip(&mean).map(|(s, m)| *s > 1e-12 * m.abs().max(1.0)).collect();
        if !keep.iter().any(|&k| k) {
            return Err(Error::InsufficientData("every encoding column has zero variance".into()));
        }
        Ok(Self { mean, sd, keep })
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn apply(&self, m: &EncodingMatrix) -> Result<EncodingMatrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::shape("standardize", format!("{} columns, fitted on {}", m.cols(), self.mean.len())));
        }
        let d = self.kept();
        let mut data = Vec::with_capacity(m.rows() * d);
        for r in 0..m.rows() {
            for (j, v) in m.row(r).iter().enumerate() {
                if self.keep[j] {
                    data.push((v - self.mean[j]) / self.sd[j]);
                }
            }
        }
        EncodingMatrix::new(m.rows(), d, data)
    }
}
