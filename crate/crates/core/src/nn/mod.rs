//! Encoder, decoder and heads built on the autodiff tape.

mod layers;
mod models;
mod params;

pub use layers::{Forward, Linear, Mode};
pub use models::{
    param_count, EncoderConfig, HeadConfig, Network, NetworkConfig, PredictionHeadOutput, ProjectionKind, ENCODING_DIM,
    N_FINDINGS, PAPER_INPUT_SIZES,
};
pub use params::{Binding, ParamEntry, ParamSet};
