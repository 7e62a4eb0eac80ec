//! Synthetic cohorts, augmentation, patient-wise splits, and on-disk
//! manifests.

mod augment;
mod image;
mod manifest;
mod split;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use augment::{apply_augment, augment, preprocess, AugmentParams, AugmentPolicy};
pub use image::GrayImage;
pub use manifest::{load_images, read_image_cache, read_manifest, write_image_cache, write_manifest, MANIFEST_FILE};
pub use split::{split_by_patient, subsample_training_sets, TrainingSample};
pub use synth::{
    calibrate, generate_cohort, outcome_probabilities, render, Calibration, Cohort, Latents, OutcomeCoefficients,
    Population, SynthConfig, FINDING_NAMES,
};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::N_FINDINGS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortTag {
    Pretrain,
    Train,
    InternalTest,
    ExternalTest,
}

impl CohortTag {
    pub const ALL: [CohortTag; 4] =
        [CohortTag::Pretrain, CohortTag::Train, CohortTag::InternalTest, CohortTag::ExternalTest];

    pub fn name(self) -> &'static str {
        match self {
            CohortTag::Pretrain => "pretrain",
            CohortTag::Train => "train",
            CohortTag::InternalTest => "internal_test",
            CohortTag::ExternalTest => "external_test",
        }
    }
}

impl fmt::Display for CohortTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CohortTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CohortTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cohort tag `{s}`")))
    }
}

/// Outcome horizon: short (1-year) or long (12-year) mortality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Y1,
    Y12,
}

impl Horizon {
    pub const ALL: [Horizon; 2] = [Horizon::Y1, Horizon::Y12];

    pub fn name(self) -> &'static str {
        match self {
            Horizon::Y1 => "y1",
            Horizon::Y12 => "y12",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Horizon::Y1 => 0,
            Horizon::Y12 => 1,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Horizon::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown horizon `{s}` (expected y1 or y12)")))
    }
}

/// Where a record's pixels live.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Inline(Arc<GrayImage>),
}

impl ImageRef {
    pub fn load(&self) -> Result<Arc<GrayImage>> {
        match self {
            ImageRef::Inline(img) => Ok(Arc::clone(img)),
            ImageRef::Path(p) => Ok(Arc::new(GrayImage::read_png(p)?)),
        }
    }
}

/// One patient visit.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortRecord {
    pub patient_id: String,
    pub image: ImageRef,
    pub findings: [bool; N_FINDINGS],
    /// `true` for male.
    pub sex: bool,
    /// Years.
    pub age: f64,
    pub y1: bool,
    pub y12: bool,
    pub cohort_tag: CohortTag,
}

impl CohortRecord {
    pub fn outcome(&self, h: Horizon) -> bool {
        match h {
            Horizon::Y1 => self.y1,
            Horizon::Y12 => self.y12,
        }
    }
}

/// Mean and standard deviation used to standardize age targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeScaler {
    pub mean: f64,
    pub sd: f64,
}

impl AgeScaler {
    pub fn fit(records: &[&CohortRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData("no records to fit the age scaler".into()));
        }
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.age).sum::<f64>() / n;
        let var = records.iter().map(|r| (r.age - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, age: f64) -> f64 {
        (age - self.mean) / self.sd
    }
}

/// Stacks `[size * size]` images into a `[batch, 1, size, size]` tensor.
pub fn batch_tensor<T: Real>(images: &[Vec<f32>], size: usize) -> Result<Tensor<T>> {
    if images.is_empty() {
        return Err(Error::InsufficientData("empty image batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.len() != size * size {
            return Err(Error::shape(
                "batch_tensor",
                format!("image of {} values, expected {}", img.len(), size * size),
            ));
        }
        data.extend(img.iter().map(|&v| T::from_f64(f64::from(v))));
    }
    Tensor::new(vec![images.len(), 1, size, size], data)
}
