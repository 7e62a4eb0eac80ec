use std::sync::Arc;

use super::sweep::{CellKey, EndToEndScorer};
use super::{extract_encodings, EncodingMatrix};
use crate::autodiff::{Real, Tensor};
use crate::data::{split_by_patient, CohortRecord};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::pretrain::{pretrain, StrategyConfig, StrategyKind};
use crate::rng::derive_seed;

/// Share of a sampled training set used for fitting; the rest picks the epoch.
pub const END_TO_END_TRAIN_FRAC: f64 = 0.8;

/// Event probabilities from the outcome head of `net`.
pub fn outcome_probabilities<T: Real>(net: &Network<T>, records: &[CohortRecord]) -> Result<Vec<f64>> {
    let enc: EncodingMatrix = extract_encodings(net, records)?;
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let h = Tensor::new(vec![enc.rows(), enc.cols()], enc.data().iter().map(|&v| T::from_f64(v)).collect())?;
    let logits = net.outcome_encodings(&h)?;
    Ok(logits.data().iter().map(|z| 1.0 / (1.0 + (-z.as_f64()).exp())).collect())
}

/// Scorer that trains `config` (a scratch strategy) on each sampled training
/// set and scores the internal and external test records.
pub fn end_to_end_scorer(
    config: StrategyConfig,
    pool: Arc<[CohortRecord]>,
    internal: Arc<[CohortRecord]>,
    external: Arc<[CohortRecord]>,
) -> Result<EndToEndScorer> {
    if config.kind != StrategyKind::Scratch {
        return Err(Error::invalid(format!("end-to-end scoring needs the scratch strategy, got {}", config.kind)));
    }
    config.validate()?;
    Ok(Box::new(move |key: &CellKey, rows: &[usize]| {
        let sample: Vec<CohortRecord> = rows.iter().map(|&i| pool[i].clone()).collect();
        let seed = derive_seed(config.seed, &[key.horizon.index() as u64, key.size as u64, key.trial as u64]);
        let (a, b) = split_by_patient(&sample, END_TO_END_TRAIN_FRAC, seed)?;
        let train: Vec<CohortRecord> = a.iter().map(|&i| sample[i].clone()).collect();
        let tune: Vec<CohortRecord> = b.iter().map(|&i| sample[i].clone()).collect();
        let cfg = StrategyConfig { horizon: key.horizon, seed, ..config.clone() };
        let ck = pretrain::<f32>(&cfg, &train, &tune)?;
        let net = ck.network::<f32>()?;
        Ok([outcome_probabilities(&net, &internal)?, outcome_probabilities(&net, &external)?])
    }))
}
