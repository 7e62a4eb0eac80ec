use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::data::{augment, AugmentPolicy, CohortRecord};
use crate::error::{Error, Result};

/// Record indices grouped by patient, in patient-id order.
#[derive(Clone, Debug)]
pub struct PatientIndex {
    groups: Vec<Vec<usize>>,
}

impl PatientIndex {
    pub fn new(records: &[CohortRecord]) -> Self {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            map.entry(&r.patient_id).or_default().push(i);
        }
        Self { groups: map.into_values().collect() }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, p: usize) -> &[usize] {
        &self.groups[p]
    }
}

/// One positive pair: two records of one patient (the same record twice
/// when the patient has a single image) and their augmented views.
#[derive(Clone, Debug, PartialEq)]
pub struct PclrPair {
    pub first: usize,
    pub second: usize,
    pub views: [Vec<f32>; 2],
}

/// Draws `batch_size` distinct patients and builds one positive pair each.
pub fn sample_pclr_batch(
    records: &[CohortRecord],
    patients: &PatientIndex,
    batch_size: usize,
    policy: &AugmentPolicy,
    input_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PclrPair>> {
    if batch_size > patients.len() {
        return Err(Error::InsufficientData(format!(
            "batch of {batch_size} patients requested from {} unique patients",
            patients.len()
        )));
    }
    let chosen = index::sample(rng, patients.len(), batch_size).into_vec();
    let mut out = Vec::with_capacity(batch_size);
    for p in chosen {
        let g = patients.group(p);
        let (first, second) = if g.len() >= 2 {
            let pick = index::sample(rng, g.len(), 2);
            (g[pick.index(0)], g[pick.index(1)])
        } else {
            (g[0], g[0])
        };
        let a = augment(&*records[first].image.load()?, policy, input_size, rng)?;
        let b = augment(&*records[second].image.load()?, policy, input_size, rng)?;
        out.push(PclrPair { first, second, views: [a, b] });
    }
    Ok(out)
}
