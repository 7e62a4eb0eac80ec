use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::StrategyConfig;
use crate::autodiff::{Real, Tensor};
use crate::data::AgeScaler;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkConfig, ParamSet};

const MAGIC: &[u8; 8] = b"PBCKPT\r\n";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Losses recorded at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// A trained network plus everything needed to reproduce and use it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub strategy: StrategyConfig,
    pub network: NetworkConfig,
    /// Age standardization of the supervised targets, when used.
    pub age_scaler: Option<AgeScaler>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters are stored (lowest validation loss).
    pub selected_epoch: usize,
    pub params: ParamSet<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    strategy: StrategyConfig,
    network: NetworkConfig,
    age_scaler: Option<AgeScaler>,
    history: Vec<EpochRecord>,
    selected_epoch: usize,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

impl Checkpoint {
    pub fn selected(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.selected_epoch)
    }

    /// Rebuilds the network with the stored parameters.
    pub fn network<T: Real>(&self) -> Result<Network<T>> {
        let mut net = Network::<T>::new(self.network.clone(), 0)?;
        net.params.copy_from(&self.params.cast())?;
        Ok(net)
    }

    /// Layout: 8-byte magic, u32 version, u64 metadata length, JSON
    /// metadata, then for every parameter its values as little-endian f64
    /// in the order listed in the metadata.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            strategy: self.strategy.clone(),
            network: self.network.clone(),
            age_scaler: self.age_scaler,
            history: self.history.clone(),
            selected_epoch: self.selected_epoch,
            params: self
                .params
                .entries()
                .iter()
                .map(|e| ParamMeta { name: e.name.clone(), shape: e.tensor.shape().to_vec(), trainable: e.trainable })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&meta)?;
        let mut out = Vec::with_capacity(
            20 + json.len() + 8 * self.params.entries().iter().map(|e| e.tensor.numel()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.params.entries() {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes.get(20..20 + meta_len).ok_or_else(|| err("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(json)?;
        let mut pos = 20 + meta_len;
        let mut params = ParamSet::new();
        for p in meta.params {
            let n: usize = p.shape.iter().product();
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| err("truncated parameter block"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(p.name, Tensor::new(p.shape, data)?, p.trainable);
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes after parameter blocks"));
        }
        Network::<f64>::new(meta.network.clone(), 0)?.params.check_layout(&params)?;
        Ok(Self {
            strategy: meta.strategy,
            network: meta.network,
            age_scaler: meta.age_scaler,
            history: meta.history,
            selected_epoch: meta.selected_epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp).and_then(|mut f| f.write_all(&bytes)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
