//! Downstream evaluation: frozen-encoder feature extraction, the
//! standardized L1 logistic probe with cross-validated penalty, metrics,
//! and the label-efficiency sweep.

mod lasso;
mod metrics;
mod mlp;
mod scratch;
mod standardize;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lasso::{
    cv_select_lambda, kkt_violation, lambda_grid, lambda_max, lasso_logistic_fit, lasso_path, stratified_folds,
    CvSelection, LassoModel, CD_TOL, MAX_SWEEPS, PATH_MAX_DEV_RATIO, PATH_MIN_DEV_GAIN,
};
pub use metrics::{auc, eo_ratio};
pub use mlp::{MlpConfig, MlpProbe};
pub use scratch::{end_to_end_scorer, outcome_probabilities, END_TO_END_TRAIN_FRAC};
pub use standardize::Standardizer;
pub use sweep::{
    read_trials_csv, run_sweep, AggregateRow, CellKey, EndToEndScorer, StrategySource, SweepConfig, SweepData,
    SweepReport, SweepStrategy, TestCohort, TrialRow, TrialSink, TrialStatus, REPORT_FILE, SUMMARY_FILE, TRIALS_FILE,
};

use crate::autodiff::{Real, Tensor};
use crate::data::{batch_tensor, preprocess, CohortRecord};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::pretrain::Checkpoint;

/// Images per encoder forward pass during extraction.
pub const EXTRACT_BATCH: usize = 64;

const ENC_MAGIC: &[u8; 8] = b"PBENC\0\0\x01";

/// Row-major `[rows, cols]` feature matrix, one row per record.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EncodingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("encoding_matrix", format!("{} values for {rows}x{cols}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("encoding row {}, column {}", i / cols.max(1), i % cols.max(1))));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let [rows, cols] = *t.shape() else {
            return Err(Error::shape("encoding_matrix", format!("expected a matrix, got {:?}", t.shape())));
        };
        Self::new(rows, cols, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { rows: rows.len(), cols: self.cols, data }
    }

    /// Binary dump: magic, `u64` rows and columns, then `f32` values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(24 + 4 * self.data.len());
        out.extend_from_slice(ENC_MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
        if bytes.len() < 24 || &bytes[..8] != ENC_MAGIC {
            return Err(bad("not an encoding file"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
        let (rows, cols) = (word(8), word(16));
        if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(bytes.len() - 24) {
            return Err(bad("length does not match the header"));
        }
        let data = bytes[24..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Self::new(rows, cols, data)
    }
}

/// Eval-mode encodings of `records`, in input order.
pub fn extract_encodings<T: Real>(net: &Network<T>, records: &[CohortRecord]) -> Result<EncodingMatrix> {
    let size = net.config.encoder.input_size;
    let mut data = Vec::with_capacity(records.len() * crate::nn::ENCODING_DIM);
    let mut cols = crate::nn::ENCODING_DIM;
    for chunk in records.chunks(EXTRACT_BATCH) {
        let mut views = Vec::with_capacity(chunk.len());
        for r in chunk {
            let img = r.image.load()?;
            if img.height.min(img.width) < size {
                return Err(Error::shape(
                    "extract_encodings",
                    format!(
                        "image of {} is {}x{}, smaller than the encoder input {size}",
                        r.patient_id, img.height, img.width
                    ),
                ));
            }
            views.push(preprocess(&img, size)?);
        }
        let enc = net.encode_images(&batch_tensor::<T>(&views, size)?)?;
        cols = enc.shape()[1];
        data.extend(enc.data().iter().map(|v| v.as_f64()));
    }
    EncodingMatrix::new(records.len(), cols, data)
}

/// [`extract_encodings`] with the checkpoint's selected weights, in `f32`.
pub fn extract_from_checkpoint(ck: &Checkpoint, records: &[CohortRecord]) -> Result<EncodingMatrix> {
    extract_encodings(&ck.network::<f32>()?, records)
}

/// Probe fitted on standardized encodings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    LassoLogistic,
    OneHiddenLayerNet,
}

#[cfg(test)]
mod tests;
