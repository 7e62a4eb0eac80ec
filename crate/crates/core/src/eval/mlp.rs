use serde::{Deserialize, Serialize};

use super::EncodingMatrix;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::LOGIT_CLIP;
use crate::nn::{Forward, Linear, Mode, ParamSet};
use crate::pretrain::{adam_step, AdamConfig, AdamState};
use crate::rng::{stream, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the mean squared weight penalty.
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 200, lr: 1e-2, weight_decay: 1e-3 }
    }
}

/// One-hidden-layer ReLU network probe, trained full-batch with Adam.
#[derive(Clone, Debug)]
pub struct MlpProbe {
    params: ParamSet<f64>,
    hidden: Linear,
    output: Linear,
}

impl MlpProbe {
    pub fn fit(x: &EncodingMatrix, y: &[bool], cfg: &MlpConfig, seed: u64) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape("mlp_probe", format!("{} rows vs {} labels", x.rows(), y.len())));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::SingleClass);
        }
        if cfg.hidden == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) || !(cfg.weight_decay >= 0.0) {
            return Err(Error::invalid("mlp probe needs positive hidden units, epochs and learning rate"));
        }
        let mut rng = stream(seed, &[tag("mlp-probe")]);
        let mut params = ParamSet::new();
        let hidden = Linear::new(&mut params, "hidden", x.cols(), cfg.hidden, &mut rng);
        let output = Linear::new(&mut params, "output", cfg.hidden, 1, &mut rng);
        let mut probe = Self { params, hidden, output };
        let targets: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let input = Tensor::new(vec![x.rows(), x.cols()], x.data().to_vec())?;
        let mut adam = AdamState::new(&probe.params);
        for epoch in 0..cfg.epochs {
            let mut g = Graph::new();
            let binding = probe.params.bind(&mut g, true);
            let f = Forward::new(&probe.params, &binding, Mode::Train);
            let xv = g.constant(input.clone());
            let logit = probe.logits(&mut g, &f, xv)?;
            let mut loss = g.bce_with_logits(logit, &targets, LOGIT_CLIP)?;
            if cfg.weight_decay > 0.0 {
                for w in [probe.hidden.weight, probe.output.weight] {
                    let sq = g.square(binding.var(w));
                    let m = g.mean(sq);
                    let pen = g.scale(m, cfg.weight_decay);
                    loss = g.add(loss, pen)?;
                }
            }
            let grads = g.backward(loss)?;
            let refs: Vec<Option<&Tensor<f64>>> =
                (0..probe.params.len()).map(|i| binding.get(i).and_then(|v| grads.get(v))).collect();
            adam_step(&mut probe.params, &refs, &mut adam, cfg.lr, &AdamConfig::default())
                .map_err(|e| Error::NonFinite(format!("mlp probe epoch {}: {e}", epoch + 1)))?;
        }
        Ok(probe)
    }

    fn logits(
        &self,
        g: &mut Graph<f64>,
        f: &Forward<'_, f64>,
        x: crate::autodiff::Var,
    ) -> Result<crate::autodiff::Var> {
        let h = self.hidden.forward(g, f, x)?;
        let h = g.relu(h);
        self.output.forward(g, f, h)
    }

    pub fn decision(&self, x: &EncodingMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.hidden.in_dim {
            return Err(Error::shape("mlp_predict", format!("{} columns, probe has {}", x.cols(), self.hidden.in_dim)));
        }
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let f = Forward::new(&self.params, &binding, Mode::Eval);
        let xv = g.constant(Tensor::new(vec![x.rows(), x.cols()], x.data().to_vec())?);
        let out = self.logits(&mut g, &f, xv)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn predict_proba(&self, x: &EncodingMatrix) -> Result<Vec<f64>> {
        Ok(self.decision(x)?.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
    }
}
