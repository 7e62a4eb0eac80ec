use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{expect_dim, ConvBn, Forward, Linear, Mode};
use super::params::{kaiming_normal, ParamSet};
use crate::autodiff::{Conv2dSpec, Graph, Padding, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Number of finding flags predicted by the supervision head.
pub const N_FINDINGS: usize = 14;

/// Width of the encoder output.
pub const ENCODING_DIM: usize = 512;

/// Input sizes supported when `paper_faithful` is set.
pub const PAPER_INPUT_SIZES: [usize; 3] = [128, 224, 320];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub block_channels: Vec<usize>,
    pub encoding_dim: usize,
    pub kernel_size: usize,
    pub conv_stride: usize,
    pub conv_padding: Padding,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Kernel of the decoder convolutions.
    pub decoder_kernel: usize,
    /// Restrict sizes to the published configuration.
    pub paper_faithful: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            input_channels: 1,
            block_channels: vec![16, 32, 64, 128],
            encoding_dim: ENCODING_DIM,
            kernel_size: 7,
            conv_stride: 1,
            conv_padding: Padding::Same,
            pool_window: 3,
            pool_stride: 2,
            decoder_kernel: 3,
            paper_faithful: false,
        }
    }
}

impl EncoderConfig {
    pub fn paper(input_size: usize) -> Self {
        Self { input_size, paper_faithful: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.len() != 4 || self.block_channels.contains(&0) {
            return Err(Error::invalid(format!(
                "encoder needs exactly 4 positive block widths, got {:?}",
                self.block_channels
            )));
        }
        if self.input_channels == 0 || self.encoding_dim == 0 || self.kernel_size == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if self.paper_faithful {
            if self.encoding_dim != ENCODING_DIM {
                return Err(Error::invalid(format!("encoding_dim must be {ENCODING_DIM}")));
            }
            if !PAPER_INPUT_SIZES.contains(&self.input_size) {
                return Err(Error::invalid(format!("input_size {} not in {PAPER_INPUT_SIZES:?}", self.input_size)));
            }
        } else if self.input_size < 32 {
            return Err(Error::invalid(format!("input_size {} below 32", self.input_size)));
        }
        let mut s = self.input_size;
        for _ in 0..4 {
            s = self.conv_out(s);
            if s < self.pool_window {
                return Err(Error::invalid(format!(
                    "input_size {} collapses before the last pooling stage",
                    self.input_size
                )));
            }
            s = (s - self.pool_window) / self.pool_stride + 1;
        }
        Ok(())
    }

    fn conv_out(&self, s: usize) -> usize {
        let pad = match self.conv_padding {
            Padding::Same => self.kernel_size / 2,
            Padding::Explicit(p) => p,
        };
        (s + 2 * pad).saturating_sub(self.kernel_size) / self.conv_stride + 1
    }

    /// Spatial size of the first decoder feature map.
    pub fn decoder_seed_size(&self) -> Result<usize> {
        if !self.input_size.is_multiple_of(16) {
            return Err(Error::invalid(format!("decoder needs input_size divisible by 16, got {}", self.input_size)));
        }
        Ok(self.input_size / 16)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Pclr512,
    Moco128,
}

impl ProjectionKind {
    pub fn output_dim(self) -> usize {
        match self {
            ProjectionKind::Pclr512 => ENCODING_DIM,
            ProjectionKind::Moco128 => 128,
        }
    }
}

/// Which heads sit on top of the shared encoder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub decoder: bool,
    pub prediction: bool,
    pub projection: Option<ProjectionKind>,
    /// Single-logit outcome head used by end-to-end training from scratch.
    pub outcome: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub projection_hidden: usize,
}

impl NetworkConfig {
    pub fn new(encoder: EncoderConfig, heads: HeadConfig) -> Self {
        Self { encoder, heads, projection_hidden: ENCODING_DIM }
    }
}

/// Head outputs for a batch. Generic so it can carry graph handles or
/// materialized tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHeadOutput<V = Var> {
    /// `[batch, 14]`
    pub finding_logits: V,
    /// `[batch, 1]`
    pub sex_logit: V,
    /// `[batch, 1]`, in standardized units.
    pub age_estimate: V,
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<ConvBn>,
    fc: Linear,
    pool_window: usize,
    pool_stride: usize,
    input_size: usize,
    input_channels: usize,
}

impl Encoder {
    fn forward<T: Real>(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let ok = s.len() == 4 && s[1] == self.input_channels && s[2] == self.input_size && s[3] == self.input_size;
        if !ok {
            return Err(Error::shape(
                "encode",
                format!(
                    "expected [batch, {}, {}, {}], got {s:?}",
                    self.input_channels, self.input_size, self.input_size
                ),
            ));
        }
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, f, h)?;
            h = g.relu(h);
            h = g.maxpool2d(h, self.pool_window, self.pool_stride)?;
        }
        let pooled = g.global_avg_pool(h)?;
        self.fc.forward(g, f, pooled)
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    fc: Linear,
    seed_channels: usize,
    seed_size: usize,
    blocks: Vec<ConvBn>,
    out_weight: usize,
    out_bias: usize,
    encoding_dim: usize,
}

impl Decoder {
    fn forward<T: Real>(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, h: Var) -> Result<Var> {
        let b = expect_dim("decode", g.shape(h), self.encoding_dim)?;
        let z = self.fc.forward(g, f, h)?;
        let z = g.relu(z);
        let mut y = g.reshape(z, &[b, self.seed_channels, self.seed_size, self.seed_size])?;
        for block in &self.blocks {
            y = g.upsample_nearest2d(y, 2)?;
            y = block.forward(g, f, y)?;
            y = g.relu(y);
        }
        let y = g.conv2d(y, f.binding.var(self.out_weight), Conv2dSpec::default())?;
        let y = g.add_bias(y, f.binding.var(self.out_bias))?;
        Ok(g.sigmoid(y))
    }
}

#[derive(Clone, Debug)]
struct PredictionHead {
    findings: Linear,
    sex: Linear,
    age: Linear,
}

#[derive(Clone, Debug)]
struct ProjectionHead {
    kind: ProjectionKind,
    hidden: Linear,
    out: Linear,
}

/// Encoder plus whichever heads the strategy needs, with all tensors in
/// one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    pub config: NetworkConfig,
    pub params: ParamSet<T>,
    encoder: Encoder,
    decoder: Option<Decoder>,
    prediction: Option<PredictionHead>,
    projection: Option<ProjectionHead>,
    outcome: Option<Linear>,
}

impl<T: Real> Network<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let ec = &config.encoder;
        ec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let spec = Conv2dSpec { stride: ec.conv_stride, padding: ec.conv_padding };

        let mut blocks = Vec::with_capacity(4);
        let mut in_ch = ec.input_channels;
        for (i, &out_ch) in ec.block_channels.iter().enumerate() {
            blocks.push(ConvBn::new(
                &mut ps,
                &format!("encoder.block{i}"),
                in_ch,
                out_ch,
                ec.kernel_size,
                spec,
                &mut rng,
            ));
            in_ch = out_ch;
        }
        let fc = Linear::new(&mut ps, "encoder.fc", in_ch, ec.encoding_dim, &mut rng);
        let encoder = Encoder {
            blocks,
            fc,
            pool_window: ec.pool_window,
            pool_stride: ec.pool_stride,
            input_size: ec.input_size,
            input_channels: ec.input_channels,
        };

        let decoder = if config.heads.decoder {
            let seed_size = ec.decoder_seed_size()?;
            let seed_channels = ec.block_channels[3];
            let fc =
                Linear::new(&mut ps, "decoder.fc", ec.encoding_dim, seed_channels * seed_size * seed_size, &mut rng);
            let mut widths: Vec<usize> = ec.block_channels.iter().rev().copied().collect();
            widths.push(ec.block_channels[0]);
            let k = ec.decoder_kernel;
            let blocks = (0..4)
                .map(|i| {
                    ConvBn::new(
                        &mut ps,
                        &format!("decoder.block{i}"),
                        widths[i],
                        widths[i + 1],
                        k,
                        Conv2dSpec::default(),
                        &mut rng,
                    )
                })
                .collect();
            let last = ec.block_channels[0];
            let out_weight =
                ps.push("decoder.out.weight", kaiming_normal(&[ec.input_channels, last, 1, 1], last, &mut rng), true);
            let out_bias = ps.push("decoder.out.bias", Tensor::zeros(&[ec.input_channels]), true);
            Some(Decoder { fc, seed_channels, seed_size, blocks, out_weight, out_bias, encoding_dim: ec.encoding_dim })
        } else {
            None
        };

        let prediction = config.heads.prediction.then(|| PredictionHead {
            findings: Linear::new(&mut ps, "head.findings", ec.encoding_dim, N_FINDINGS, &mut rng),
            sex: Linear::new(&mut ps, "head.sex", ec.encoding_dim, 1, &mut rng),
            age: Linear::new(&mut ps, "head.age", ec.encoding_dim, 1, &mut rng),
        });

        let projection = config.heads.projection.map(|kind| {
            let hidden = Linear::new(&mut ps, "projection.hidden", ec.encoding_dim, config.projection_hidden, &mut rng);
            let out = Linear::new(&mut ps, "projection.out", config.projection_hidden, kind.output_dim(), &mut rng);
            ProjectionHead { kind, hidden, out }
        });

        let outcome = config.heads.outcome.then(|| Linear::new(&mut ps, "outcome", ec.encoding_dim, 1, &mut rng));

        Ok(Self { config, params: ps, encoder, decoder, prediction, projection, outcome })
    }

    pub fn input_size(&self) -> usize {
        self.config.encoder.input_size
    }

    pub fn encoding_dim(&self) -> usize {
        self.config.encoder.encoding_dim
    }

    /// Indices of parameters that belong to the encoder.
    pub fn encoder_entries(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.entries().iter().enumerate().filter(|(_, e)| e.name.starts_with("encoder.")).map(|(i, _)| i)
    }

    pub fn encode(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, images: Var) -> Result<Var> {
        self.encoder.forward(g, f, images)
    }

    pub fn decode(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, encoding: Var) -> Result<Var> {
        self.decoder.as_ref().ok_or_else(|| Error::invalid("network has no decoder"))?.forward(g, f, encoding)
    }

    pub fn predict_head(
        &self,
        g: &mut Graph<T>,
        f: &mut Forward<'_, T>,
        encoding: Var,
    ) -> Result<PredictionHeadOutput> {
        let head = self.prediction.as_ref().ok_or_else(|| Error::invalid("network has no prediction head"))?;
        expect_dim("predict_head", g.shape(encoding), self.encoding_dim())?;
        Ok(PredictionHeadOutput {
            finding_logits: head.findings.forward(g, f, encoding)?,
            sex_logit: head.sex.forward(g, f, encoding)?,
            age_estimate: head.age.forward(g, f, encoding)?,
        })
    }

    pub fn project(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, encoding: Var) -> Result<Var> {
        let head = self.projection.as_ref().ok_or_else(|| Error::invalid("network has no projection head"))?;
        expect_dim("project", g.shape(encoding), self.encoding_dim())?;
        let h = head.hidden.forward(g, f, encoding)?;
        let h = g.relu(h);
        head.out.forward(g, f, h)
    }

    pub fn projection_kind(&self) -> Option<ProjectionKind> {
        self.projection.as_ref().map(|p| p.kind)
    }

    pub fn outcome_logit(&self, g: &mut Graph<T>, f: &mut Forward<'_, T>, encoding: Var) -> Result<Var> {
        let head = self.outcome.as_ref().ok_or_else(|| Error::invalid("network has no outcome head"))?;
        expect_dim("outcome_logit", g.shape(encoding), self.encoding_dim())?;
        head.forward(g, f, encoding)
    }

    /// Eval-mode encodings of `images: [batch, C, H, W]`.
    pub fn encode_images(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let mut f = Forward::new(&self.params, &binding, Mode::Eval);
        let x = g.constant(images.clone());
        let h = self.encode(&mut g, &mut f, x)?;
        Ok(g.value(h).clone())
    }

    /// Eval-mode reconstruction of `encodings: [batch, 512]`.
    pub fn decode_encodings(&self, encodings: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let mut f = Forward::new(&self.params, &binding, Mode::Eval);
        let h = g.constant(encodings.clone());
        let y = self.decode(&mut g, &mut f, h)?;
        Ok(g.value(y).clone())
    }

    /// Eval-mode head outputs for `encodings: [batch, 512]`.
    pub fn predict_encodings(&self, encodings: &Tensor<T>) -> Result<PredictionHeadOutput<Tensor<T>>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let mut f = Forward::new(&self.params, &binding, Mode::Eval);
        let h = g.constant(encodings.clone());
        let out = self.predict_head(&mut g, &mut f, h)?;
        Ok(PredictionHeadOutput {
            finding_logits: g.value(out.finding_logits).clone(),
            sex_logit: g.value(out.sex_logit).clone(),
            age_estimate: g.value(out.age_estimate).clone(),
        })
    }

    /// Eval-mode outcome logits `[batch, 1]` for `encodings: [batch, 512]`.
    pub fn outcome_encodings(&self, encodings: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let mut f = Forward::new(&self.params, &binding, Mode::Eval);
        let h = g.constant(encodings.clone());
        let z = self.outcome_logit(&mut g, &mut f, h)?;
        Ok(g.value(z).clone())
    }

    pub fn project_encodings(&self, encodings: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let mut f = Forward::new(&self.params, &binding, Mode::Eval);
        let h = g.constant(encodings.clone());
        let z = self.project(&mut g, &mut f, h)?;
        Ok(g.value(z).clone())
    }
}

/// Trainable parameter count of a network built from `config`.
pub fn param_count(config: &NetworkConfig) -> Result<usize> {
    Ok(Network::<f32>::new(config.clone(), 0)?.params.trainable_count())
}
