use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::CohortRecord;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Splits record indices so every patient lands wholly in one part;
/// `round(frac * patients)` patients go to the first part.
pub fn split_by_patient(records: &[CohortRecord], frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if records.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty record set".into()));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(format!("split fraction {frac} outside (0, 1)")));
    }
    let mut patients: Vec<&str> =
        records.iter().map(|r| r.patient_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    patients.shuffle(&mut stream(seed, &[]));
    let n_a = (patients.len() as f64 * frac).round() as usize;
    let part_a: BTreeSet<&str> = patients[..n_a].iter().copied().collect();
    let (a, b) = (0..records.len()).partition(|&i| part_a.contains(records[i].patient_id.as_str()));
    Ok((a, b))
}

/// One sampled training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub size: usize,
    pub trial: usize,
    /// Sorted positions into the training pool.
    pub indices: Vec<usize>,
}

/// `trials` independent draws without replacement of each size from a pool
/// of `pool` records. Each `(size, trial)` cell has its own RNG stream, so
/// adding sizes or trials never changes existing cells.
pub fn subsample_training_sets(pool: usize, sizes: &[usize], trials: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::with_capacity(sizes.len() * trials);
    for &size in sizes {
        if size > pool {
            return Err(Error::InsufficientData(format!("sample size {size} exceeds pool of {pool}")));
        }
        if size == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        for trial in 0..trials {
            let mut rng = stream(seed, &[size as u64, trial as u64]);
            let mut indices = index::sample(&mut rng, pool, size).into_vec();
            indices.sort_unstable();
            out.push(TrainingSample { size, trial, indices });
        }
    }
    Ok(out)
}
