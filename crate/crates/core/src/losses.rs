//! Training objectives: the weighted autoencoder loss, the supervised
//! composite, and the two contrastive losses (in-batch NT-Xent and the
//! queue-based momentum-contrast loss).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{PredictionHeadOutput, N_FINDINGS};

/// Logits are clipped to this magnitude before binary cross-entropy.
pub const LOGIT_CLIP: f64 = 30.0;

/// Excludes self-similarity from the NT-Xent softmax; `exp` of it is 0.
const MASK: f64 = -1e30;

/// Term weights of the autoencoder objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaTriple {
    /// Supervised (classification + age regression) weight.
    pub lambda_reg: f64,
    /// Reconstruction weight.
    pub lambda_recon: f64,
    /// L1-on-encodings weight.
    pub lambda_norm: f64,
}

impl Default for LambdaTriple {
    fn default() -> Self {
        Self { lambda_reg: 1.0, lambda_recon: 20.0, lambda_norm: 1e-4 }
    }
}

impl LambdaTriple {
    pub fn new(lambda_reg: f64, lambda_recon: f64, lambda_norm: f64) -> Self {
        Self { lambda_reg, lambda_recon, lambda_norm }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("lambda_reg", self.lambda_reg), ("lambda_recon", self.lambda_recon), ("lambda_norm", self.lambda_norm)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-batch supervision for the prediction head.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedTargets<T> {
    /// Row-major `[batch, 14]` flags in {0, 1}.
    pub findings: Vec<T>,
    /// `[batch]` flags in {0, 1}.
    pub sex: Vec<T>,
    /// `[batch]` standardized ages.
    pub age: Vec<T>,
}

impl<T: Real> SupervisedTargets<T> {
    pub fn batch_size(&self) -> usize {
        self.sex.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.sex.len();
        if self.findings.len() != b * N_FINDINGS || self.age.len() != b {
            return Err(Error::shape(
                "supervised_targets",
                format!("{} finding flags, {} sex flags, {} ages", self.findings.len(), b, self.age.len()),
            ));
        }
        let binary = |v: &T| *v == T::zero() || *v == T::one();
        if !self.findings.iter().all(binary) || !self.sex.iter().all(binary) {
            return Err(Error::invalid("finding and sex targets must be 0 or 1"));
        }
        if !self.age.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("age target".into()));
        }
        Ok(())
    }
}

/// Mean squared error over every element.
pub fn mse<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Findings BCE + sex BCE + age MSE, equally weighted.
pub fn supervised_loss<T: Real>(
    g: &mut Graph<T>,
    preds: &PredictionHeadOutput,
    targets: &SupervisedTargets<T>,
) -> Result<Var> {
    targets.validate()?;
    let b = targets.batch_size();
    let check = |g: &Graph<T>, v: Var, w: usize, name: &str| -> Result<()> {
        if g.shape(v) != [b, w] {
            return Err(Error::shape(
                "supervised_loss",
                format!("{name} has shape {:?}, expected [{b}, {w}]", g.shape(v)),
            ));
        }
        Ok(())
    };
    check(g, preds.finding_logits, N_FINDINGS, "finding_logits")?;
    check(g, preds.sex_logit, 1, "sex_logit")?;
    check(g, preds.age_estimate, 1, "age_estimate")?;

    let findings = g.bce_with_logits(preds.finding_logits, &targets.findings, LOGIT_CLIP)?;
    let sex = g.bce_with_logits(preds.sex_logit, &targets.sex, LOGIT_CLIP)?;
    let age_t = g.constant(Tensor::new(vec![b, 1], targets.age.clone())?);
    let age = mse(g, preds.age_estimate, age_t)?;
    let s = g.add(findings, sex)?;
    g.add(s, age)
}

/// Inputs to [`autoencoder_loss`].
pub struct AutoencoderTerms<'a, T> {
    pub images: Var,
    pub reconstructions: Var,
    pub encodings: Var,
    pub preds: Option<&'a PredictionHeadOutput>,
    pub targets: Option<&'a SupervisedTargets<T>>,
}

/// `lambda_recon * MSE(x, x_hat) + lambda_reg * supervised + lambda_norm * mean|h|`.
///
/// The supervised term is present only when `semi` is set; zero-weight
/// terms are skipped entirely.
pub fn autoencoder_loss<T: Real>(
    g: &mut Graph<T>,
    terms: &AutoencoderTerms<'_, T>,
    lambdas: &LambdaTriple,
    semi: bool,
) -> Result<Var> {
    lambdas.validate()?;
    let mut parts = Vec::with_capacity(3);
    if g.shape(terms.images) != g.shape(terms.reconstructions) {
        return Err(Error::shape(
            "autoencoder_loss",
            format!("images {:?} vs reconstructions {:?}", g.shape(terms.images), g.shape(terms.reconstructions)),
        ));
    }
    if lambdas.lambda_recon > 0.0 {
        let recon = mse(g, terms.images, terms.reconstructions)?;
        parts.push(g.scale(recon, lambdas.lambda_recon));
    }
    if semi && lambdas.lambda_reg > 0.0 {
        let (Some(preds), Some(targets)) = (terms.preds, terms.targets) else {
            return Err(Error::invalid("semi-supervised loss needs predictions and targets"));
        };
        let sup = supervised_loss(g, preds, targets)?;
        parts.push(g.scale(sup, lambdas.lambda_reg));
    }
    if lambdas.lambda_norm > 0.0 {
        let a = g.abs(terms.encodings);
        let l1 = g.mean(a);
        parts.push(g.scale(l1, lambdas.lambda_norm));
    }
    sum_terms(g, &parts)
}

pub(crate) fn sum_terms<T: Real>(g: &mut Graph<T>, parts: &[Var]) -> Result<Var> {
    let mut it = parts.iter().copied();
    let Some(mut acc) = it.next() else {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    };
    for p in it {
        acc = g.add(acc, p)?;
    }
    Ok(acc)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Loss of one positive pair `(i, j)` among the `2N` rows of `z`:
/// `-log(exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau))`.
pub fn ntxent_pair_loss(i: usize, j: usize, z: &Tensor<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let [n, d] = *z.shape() else {
        return Err(Error::shape("ntxent_pair_loss", format!("expected a matrix, got {:?}", z.shape())));
    };
    if n < 2 || i >= n || j >= n || i == j {
        return Err(Error::invalid(format!("pair ({i}, {j}) invalid for {n} rows")));
    }
    let rows: Vec<&[f64]> = z.data().chunks(d).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(r) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroVector { row: r });
    }
    let sim = |a: usize, b: usize| -> f64 {
        rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum::<f64>() / (norms[a] * norms[b])
    };
    // log-sum-exp over k != i, shifted by the largest logit
    let logits: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| sim(i, k) / tau).collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - sim(i, j) / tau)
}

/// Batch NT-Xent over `z: [2M, D]` where rows `2t` and `2t + 1` are the
/// positive pair. Both orderings of every pair contribute, so the result is
/// the mean of `2M` pair losses.
pub fn ntxent_batch_loss<T: Real>(g: &mut Graph<T>, z: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let [n, _] = *g.shape(z) else {
        return Err(Error::shape("ntxent_batch_loss", format!("expected a matrix, got {:?}", g.shape(z))));
    };
    if n % 2 != 0 || n == 0 {
        return Err(Error::invalid(format!("ntxent_batch_loss needs an even row count, got {n}")));
    }
    let zn = g.normalize_rows(z)?;
    let zt = g.transpose(zn)?;
    let sim = g.matmul(zn, zt)?;
    let logits = g.scale(sim, 1.0 / tau);
    let mut mask = Tensor::zeros(&[n, n]);
    for r in 0..n {
        mask.data_mut()[r * n + r] = T::from_f64(MASK);
    }
    let mask = g.constant(mask);
    let masked = g.add(logits, mask)?;
    let targets: Vec<usize> = (0..n).map(|r| r ^ 1).collect();
    g.softmax_cross_entropy(masked, &targets)
}

/// Momentum-contrast loss: each query's positive is its key, the queue rows
/// are negatives. Queue rows must already be unit length.
pub fn moco_loss<T: Real>(
    g: &mut Graph<T>,
    queries: Var,
    positive_keys: &Tensor<T>,
    queue: &Tensor<T>,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let [b, d] = *g.shape(queries) else {
        return Err(Error::shape("moco_loss", format!("queries must be a matrix, got {:?}", g.shape(queries))));
    };
    if positive_keys.shape() != [b, d] {
        return Err(Error::shape("moco_loss", format!("keys {:?} vs queries [{b}, {d}]", positive_keys.shape())));
    }
    let [k, qd] = *queue.shape() else {
        return Err(Error::shape("moco_loss", "queue must be a matrix"));
    };
    if qd != d {
        return Err(Error::shape("moco_loss", format!("queue width {qd} vs query width {d}")));
    }
    if k == 0 {
        return Err(Error::InsufficientData("empty negative queue".into()));
    }
    let keys = g.constant(positive_keys.clone());
    let pos = g.cosine_similarity(queries, keys)?;
    let pos = g.reshape(pos, &[b, 1])?;
    let qn = g.normalize_rows(queries)?;
    let mut qt = Vec::with_capacity(k * d);
    for c in 0..d {
        for r in 0..k {
            qt.push(queue.data()[r * d + c]);
        }
    }
    let queue_t = g.constant(Tensor::new(vec![d, k], qt)?);
    let neg = g.matmul(qn, queue_t)?;
    let logits = g.concat(&[pos, neg], 1)?;
    let logits = g.scale(logits, 1.0 / tau);
    g.softmax_cross_entropy(logits, &vec![0; b])
}
