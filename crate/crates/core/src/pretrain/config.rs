use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, Horizon};
use crate::error::{Error, Result};
use crate::losses::LambdaTriple;
use crate::nn::{EncoderConfig, HeadConfig, NetworkConfig, ProjectionKind, ENCODING_DIM};

/// The eight pretraining strategies under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SemiAe,
    SelfAe,
    SemiPclr,
    SelfPclr,
    SemiMoco,
    SelfMoco,
    Transfer,
    Scratch,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::SemiAe,
        StrategyKind::SelfAe,
        StrategyKind::SemiPclr,
        StrategyKind::SelfPclr,
        StrategyKind::SemiMoco,
        StrategyKind::SelfMoco,
        StrategyKind::Transfer,
        StrategyKind::Scratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SemiAe => "semi_ae",
            StrategyKind::SelfAe => "self_ae",
            StrategyKind::SemiPclr => "semi_pclr",
            StrategyKind::SelfPclr => "self_pclr",
            StrategyKind::SemiMoco => "semi_moco",
            StrategyKind::SelfMoco => "self_moco",
            StrategyKind::Transfer => "transfer",
            StrategyKind::Scratch => "scratch",
        }
    }

    /// Whether the objective includes the findings/sex/age head.
    pub fn is_semi(self) -> bool {
        matches!(self, StrategyKind::SemiAe | StrategyKind::SemiPclr | StrategyKind::SemiMoco)
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, StrategyKind::SemiAe | StrategyKind::SelfAe)
    }

    pub fn is_pclr(self) -> bool {
        matches!(self, StrategyKind::SemiPclr | StrategyKind::SelfPclr)
    }

    pub fn is_moco(self) -> bool {
        matches!(self, StrategyKind::SemiMoco | StrategyKind::SelfMoco)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown strategy `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// How the scratch strategy is evaluated inside a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScratchMode {
    /// Probe the encodings of a freshly initialized, untrained encoder.
    #[default]
    RandomInit,
    /// Train encoder and outcome head on each sampled training set.
    EndToEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub lambdas: LambdaTriple,
    pub tau: f64,
    pub momentum_m: f64,
    pub queue_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub seed: u64,
    pub input_size: usize,
    pub block_channels: Vec<usize>,
    /// Restrict the encoder to the published sizes.
    pub paper_faithful: bool,
    pub disable_recon: bool,
    pub disable_supervision: bool,
    /// Caps optimizer steps per epoch; `None` runs full passes.
    pub steps_per_epoch: Option<usize>,
    /// Caps the number of tuning records scored each epoch.
    pub validation_size: Option<usize>,
    pub augment: AugmentPolicy,
    pub scratch_mode: ScratchMode,
    /// Outcome used by end-to-end scratch training.
    pub horizon: Horizon,
    pub projection_hidden: usize,
}

impl StrategyConfig {
    /// Desk-scale profile: small encoder, 64-pixel inputs, short schedule.
    pub fn desk(kind: StrategyKind) -> Self {
        Self {
            kind,
            lambdas: LambdaTriple::default(),
            tau: if kind.is_moco() { 0.07 } else { 0.1 },
            momentum_m: 0.99,
            queue_size: 512,
            epochs: 10,
            batch_size: 16,
            max_lr: 2e-3,
            seed: 0,
            input_size: 64,
            block_channels: vec![16, 32, 64, 128],
            paper_faithful: false,
            disable_recon: false,
            disable_supervision: false,
            steps_per_epoch: Some(40),
            validation_size: Some(128),
            augment: AugmentPolicy::default(),
            scratch_mode: ScratchMode::RandomInit,
            horizon: Horizon::Y12,
            projection_hidden: ENCODING_DIM,
        }
    }

    /// The published hyperparameters.
    pub fn paper(kind: StrategyKind) -> Self {
        Self {
            momentum_m: 0.999,
            queue_size: 65_536,
            epochs: 100,
            batch_size: if kind.is_moco() { 32 } else { 64 },
            max_lr: 1e-5,
            input_size: 224,
            block_channels: vec![64, 128, 256, 512],
            paper_faithful: true,
            steps_per_epoch: None,
            validation_size: None,
            scratch_mode: ScratchMode::EndToEnd,
            ..Self::desk(kind)
        }
    }

    /// Supervised head term is active.
    pub fn supervised(&self) -> bool {
        self.kind.is_semi() && !self.disable_supervision && self.lambdas.lambda_reg > 0.0
    }

    /// Reconstruction term is active.
    pub fn reconstructs(&self) -> bool {
        self.kind.is_autoencoder() && !self.disable_recon && self.lambdas.lambda_recon > 0.0
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_size: self.input_size,
            block_channels: self.block_channels.clone(),
            paper_faithful: self.paper_faithful,
            ..EncoderConfig::default()
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        let k = self.kind;
        let heads = HeadConfig {
            decoder: self.reconstructs(),
            prediction: self.supervised() || k == StrategyKind::Transfer,
            projection: if k.is_pclr() {
                Some(ProjectionKind::Pclr512)
            } else if k.is_moco() {
                Some(ProjectionKind::Moco128)
            } else {
                None
            },
            outcome: k == StrategyKind::Scratch,
        };
        NetworkConfig { projection_hidden: self.projection_hidden, ..NetworkConfig::new(self.encoder_config(), heads) }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        self.encoder_config().validate()?;
        if self.reconstructs() {
            self.encoder_config().decoder_seed_size()?;
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum_m) {
            return Err(Error::invalid(format!("momentum_m must be in [0, 1), got {}", self.momentum_m)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.kind.is_moco() && self.queue_size < self.batch_size {
            return Err(Error::invalid(format!(
                "queue_size {} smaller than batch_size {}",
                self.queue_size, self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::invalid(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        let empty = match self.kind {
            k if k.is_autoencoder() => !self.reconstructs() && !self.supervised(),
            StrategyKind::Transfer => self.disable_supervision,
            _ => false,
        };
        if empty {
            return Err(Error::invalid(format!("{} has no active loss term under the ablation flags", self.kind)));
        }
        if self.steps_per_epoch == Some(0) || self.validation_size == Some(0) || self.projection_hidden == 0 {
            return Err(Error::invalid("step, validation and hidden sizes must be positive"));
        }
        Ok(())
    }
}
