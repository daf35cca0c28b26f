//! Declarative network specifications and their compilation into layer stacks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layers::{Activation, ConvGeom, Layer};
use super::network::{Network, NetworkBuilder};
use super::params::ModelParams;
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::real::Real;

/// One convolutional stage: `kernel x kernel` convolution with "same" padding
/// and the given stride, followed by a nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    pub stride: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_kernel() -> usize {
    3
}

fn default_activation() -> Activation {
    Activation::LeakyRelu
}

impl StageSpec {
    pub fn new(name: &str, out_channels: usize, stride: usize) -> Self {
        StageSpec {
            name: name.to_string(),
            out_channels,
            kernel: 3,
            stride,
            activation: Activation::LeakyRelu,
        }
    }

    fn geom(&self, input: &[usize]) -> Result<ConvGeom> {
        let &[cin, hin, win] = input else {
            return Err(Error::InvalidConfig(format!(
                "stage `{}` needs an image-shaped input, got {input:?}",
                self.name
            )));
        };
        if self.kernel == 0 || self.stride == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "stage `{}` has a zero kernel, stride or channel count",
                self.name
            )));
        }
        Ok(ConvGeom {
            cin,
            cout: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.kernel / 2,
            hin,
            win,
        })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geom(input)?;
        if g.hin + 2 * g.pad < g.kernel || g.win + 2 * g.pad < g.kernel {
            return Err(Error::InvalidConfig(format!(
                "stage `{}`: kernel {} does not fit input {input:?}",
                self.name, self.kernel
            )));
        }
        let (h, w) = g.out_hw();
        Ok(vec![g.cout, h, w])
    }

    fn push(&self, b: NetworkBuilder, input: &[usize]) -> Result<(NetworkBuilder, Vec<usize>)> {
        let g = self.geom(input)?;
        let out = self.output_shape(input)?;
        Ok((b.push(&self.name, Layer::Conv(g)).push(&self.name, Layer::Act(self.activation)), out))
    }
}

/// Name of the encoder's final fully connected stage.
pub const LATENT_STAGE: &str = "fc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input: ImageShape,
    pub conv_stages: Vec<StageSpec>,
    pub latent_dim: usize,
    #[serde(default = "identity_activation")]
    pub latent_activation: Activation,
    /// Stage whose activations are released as the representation Z.
    #[serde(default = "default_tap")]
    pub tap: String,
    /// Rescale each released Z to norm `sqrt(len)`.
    #[serde(default)]
    pub normalize_output: bool,
}

fn identity_activation() -> Activation {
    Activation::Identity
}

fn default_tap() -> String {
    LATENT_STAGE.to_string()
}

impl EncoderSpec {
    /// Desk-scale encoder: three stride-2 convolutions and a latent layer.
    pub fn desk(input: ImageShape) -> Self {
        EncoderSpec {
            input,
            conv_stages: vec![
                StageSpec::new("conv1", 8, 2),
                StageSpec::new("conv2", 16, 2),
                StageSpec::new("conv3", 16, 2),
            ],
            latent_dim: 64,
            latent_activation: Activation::Identity,
            tap: LATENT_STAGE.to_string(),
            normalize_output: true,
        }
    }

    pub fn with_tap(mut self, tap: &str) -> Self {
        self.tap = tap.to_string();
        self
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.conv_stages.iter().map(|s| s.name.as_str()).chain([LATENT_STAGE]).collect()
    }

    fn tap_position(&self) -> Result<usize> {
        self.stage_names()
            .iter()
            .position(|s| *s == self.tap)
            .ok_or_else(|| Error::UnknownStage(self.tap.clone()))
    }

    /// Activation shapes: `[image, after stage 0, ...]`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input.chw().to_vec()];
        for s in &self.conv_stages {
            let next = s.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be positive".into()));
        }
        shapes.push(vec![self.latent_dim]);
        Ok(shapes)
    }

    /// Per-sample shape of Z at the configured tap.
    pub fn tap_shape(&self) -> Result<Vec<usize>> {
        let pos = self.tap_position()?;
        Ok(self.shapes()?.swap_remove(pos + 1))
    }

    /// Encoder network up to and including the tap stage.
    pub fn network(&self) -> Result<Network> {
        let pos = self.tap_position()?;
        let shapes = self.shapes()?;
        let mut b = NetworkBuilder::new();
        for (i, s) in self.conv_stages.iter().enumerate().take(pos + 1) {
            b = s.push(b, &shapes[i])?.0;
        }
        if pos == self.conv_stages.len() {
            let flat: usize = shapes[pos].iter().product();
            b = b
                .push(LATENT_STAGE, Layer::Flatten)
                .push(LATENT_STAGE, Layer::Linear { din: flat, dout: self.latent_dim })
                .push(LATENT_STAGE, Layer::Act(self.latent_activation));
        }
        if self.normalize_output {
            b = b.push(&self.tap, Layer::Normalize);
        }
        b.build("encoder", &shapes[0])
    }

    /// Encoder stages after the tap, as a builder starting from the tap shape.
    fn tail(&self) -> Result<(NetworkBuilder, Vec<usize>)> {
        let pos = self.tap_position()?;
        let shapes = self.shapes()?;
        let mut b = NetworkBuilder::new();
        if pos == self.conv_stages.len() {
            return Ok((b, shapes[pos + 1].clone()));
        }
        for (i, s) in self.conv_stages.iter().enumerate().skip(pos + 1) {
            b = s.push(b, &shapes[i])?.0;
        }
        let last = &shapes[self.conv_stages.len()];
        b = b
            .push(LATENT_STAGE, Layer::Flatten)
            .push(LATENT_STAGE, Layer::Linear { din: last.iter().product(), dout: self.latent_dim })
            .push(LATENT_STAGE, Layer::Act(self.latent_activation));
        Ok((b, vec![self.latent_dim]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderStage {
    /// Fully connected layer reshaped to `shape`.
    Dense { name: String, shape: Vec<usize>, activation: Activation },
    /// Nearest up-sampling to `height x width`, then a stride-1 convolution.
    UpConv {
        name: String,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub input: Vec<usize>,
    pub stages: Vec<DecoderStage>,
    pub output: ImageShape,
}

/// Decoder that reverses the encoder from `tap` down to the image, with
/// up-sampling in place of striding. The last stage is sigmoid-bounded.
pub fn mirror_decoder_spec(encoder: &EncoderSpec, tap: &str) -> Result<DecoderSpec> {
    let enc = EncoderSpec { tap: tap.to_string(), ..encoder.clone() };
    let pos = enc.tap_position()?;
    let shapes = enc.shapes()?;
    let n_conv = enc.conv_stages.len();
    let mut stages = Vec::new();
    // activation applied after reconstructing the input of conv stage `i`
    let act_before = |i: usize| {
        if i == 0 {
            Activation::Sigmoid
        } else {
            enc.conv_stages[i - 1].activation
        }
    };
    let top_conv = if pos == n_conv {
        stages.push(DecoderStage::Dense {
            name: format!("up_{LATENT_STAGE}"),
            shape: shapes[n_conv].clone(),
            activation: act_before(n_conv),
        });
        n_conv
    } else {
        pos + 1
    };
    for i in (0..top_conv).rev() {
        let target = &shapes[i];
        stages.push(DecoderStage::UpConv {
            name: format!("up_{}", enc.conv_stages[i].name),
            out_channels: target[0],
            height: target[1],
            width: target[2],
            kernel: enc.conv_stages[i].kernel,
            activation: act_before(i),
        });
    }
    Ok(DecoderSpec { input: shapes[pos + 1].clone(), stages, output: enc.input })
}

impl DecoderSpec {
    pub fn network(&self) -> Result<Network> {
        let mut b = NetworkBuilder::new();
        let mut cur = self.input.clone();
        for stage in &self.stages {
            match stage {
                DecoderStage::Dense { name, shape, activation } => {
                    let din: usize = cur.iter().product();
                    let dout: usize = shape.iter().product();
                    if cur.len() != 1 {
                        b = b.push(name, Layer::Flatten);
                    }
                    b = b
                        .push(name, Layer::Linear { din, dout })
                        .push(name, Layer::Reshape(shape.clone()))
                        .push(name, Layer::Act(*activation));
                    cur = shape.clone();
                }
                DecoderStage::UpConv { name, out_channels, height, width, kernel, activation } => {
                    let &[c, h, w] = cur.as_slice() else {
                        return Err(Error::InvalidConfig(format!(
                            "decoder stage `{name}` needs an image-shaped input, got {cur:?}"
                        )));
                    };
                    b = b.push(
                        name,
                        Layer::Resize { channels: c, hin: h, win: w, hout: *height, wout: *width },
                    );
                    let g = ConvGeom {
                        cin: c,
                        cout: *out_channels,
                        kernel: *kernel,
                        stride: 1,
                        pad: kernel / 2,
                        hin: *height,
                        win: *width,
                    };
                    let (oh, ow) = g.out_hw();
                    b = b.push(name, Layer::Conv(g)).push(name, Layer::Act(*activation));
                    cur = vec![*out_channels, oh, ow];
                }
            }
        }
        if cur != self.output.chw() {
            return Err(Error::Shape {
                context: "decoder output",
                expected: self.output.chw().to_vec(),
                found: cur,
            });
        }
        b.build("decoder", &self.input)
    }
}

/// Utility classifier: the encoder stages after the tap (empty when the tap is
/// the latent layer) followed by two fully connected layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub encoder: EncoderSpec,
    pub hidden: usize,
    pub k: usize,
}

impl ClassifierSpec {
    pub fn network(&self) -> Result<Network> {
        if self.k == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("classifier sizes must be positive".into()));
        }
        let input = self.encoder.tap_shape()?;
        let (tail, shape) = self.encoder.tail()?;
        let din: usize = shape.iter().product();
        let b = tail
            .push("fc1", Layer::Flatten)
            .push("fc1", Layer::Linear { din, dout: self.hidden })
            .push("fc1", Layer::Act(Activation::LeakyRelu))
            .push("fc2", Layer::Linear { din: self.hidden, dout: self.k });
        b.build("classifier", &input)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub input: ImageShape,
    pub stages: Vec<StageSpec>,
}

impl DiscriminatorSpec {
    pub fn desk(input: ImageShape) -> Self {
        DiscriminatorSpec {
            input,
            stages: vec![StageSpec::new("conv1", 8, 2), StageSpec::new("conv2", 16, 2)],
        }
    }

    pub fn network(&self) -> Result<Network> {
        let mut b = NetworkBuilder::new();
        let mut cur = self.input.chw().to_vec();
        for s in &self.stages {
            let (nb, next) = s.push(b, &cur)?;
            b = nb;
            cur = next;
        }
        b.push("out", Layer::Flatten)
            .push("out", Layer::Linear { din: cur.iter().product(), dout: 1 })
            .push("out", Layer::Act(Activation::Sigmoid))
            .build("discriminator", &self.input.chw())
    }
}

/// Frozen multi-stage feature extractor g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualSpec {
    pub input: ImageShape,
    pub stages: Vec<StageSpec>,
    /// Stages whose activations are compared.
    pub taps: Vec<String>,
    pub seed: u64,
}

impl PerceptualSpec {
    pub fn desk(input: ImageShape) -> Self {
        let stages = vec![
            StageSpec::new("conv1", 8, 2),
            StageSpec::new("conv2", 16, 2),
            StageSpec::new("conv3", 32, 2),
        ];
        let taps = stages.iter().map(|s| s.name.clone()).collect();
        PerceptualSpec { input, stages, taps, seed: 0x9e37 }
    }

    pub fn network(&self) -> Result<Network> {
        let mut b = NetworkBuilder::new();
        let mut cur = self.input.chw().to_vec();
        for s in &self.stages {
            let (nb, next) = s.push(b, &cur)?;
            b = nb;
            cur = next;
        }
        let net = b.build("perceptual", &self.input.chw())?;
        for t in &self.taps {
            net.stage_end(t)?;
        }
        if self.taps.is_empty() {
            return Err(Error::InvalidConfig("perceptual extractor needs at least one tap".into()));
        }
        Ok(net.frozen())
    }
}

/// Private-attribute network C: an identity classifier whose penultimate
/// `feature` stage provides the deep features compared by face similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivateNetSpec {
    pub input: ImageShape,
    pub stages: Vec<StageSpec>,
    pub feature_dim: usize,
    pub n_classes: usize,
    #[serde(default = "default_private_tap")]
    pub tap: String,
}

pub const PRIVATE_FEATURE_STAGE: &str = "feature";

fn default_private_tap() -> String {
    PRIVATE_FEATURE_STAGE.to_string()
}

impl PrivateNetSpec {
    pub fn desk(input: ImageShape, n_classes: usize) -> Self {
        PrivateNetSpec {
            input,
            stages: vec![
                StageSpec::new("conv1", 8, 2),
                StageSpec::new("conv2", 16, 2),
                StageSpec::new("conv3", 32, 2),
            ],
            feature_dim: 64,
            n_classes,
            tap: PRIVATE_FEATURE_STAGE.to_string(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        if self.n_classes < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(
                "private network needs two or more classes and a positive feature size".into(),
            ));
        }
        let mut b = NetworkBuilder::new();
        let mut cur = self.input.chw().to_vec();
        for s in &self.stages {
            let (nb, next) = s.push(b, &cur)?;
            b = nb;
            cur = next;
        }
        let net = b
            .push(PRIVATE_FEATURE_STAGE, Layer::Flatten)
            .push(
                PRIVATE_FEATURE_STAGE,
                Layer::Linear { din: cur.iter().product(), dout: self.feature_dim },
            )
            .push(PRIVATE_FEATURE_STAGE, Layer::Act(Activation::Identity))
            .push("logits", Layer::Linear { din: self.feature_dim, dout: self.n_classes })
            .build("private", &self.input.chw())?;
        net.stage_end(&self.tap)?;
        Ok(net)
    }

    /// Per-sample length of the features at the configured tap.
    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.network()?.stage_shape(&self.tap)?.iter().product())
    }
}

/// Feature-level attack mapper M: two fully connected stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperSpec {
    pub input: Vec<usize>,
    pub hidden: usize,
    pub output_dim: usize,
}

impl MapperSpec {
    pub fn network(&self) -> Result<Network> {
        if self.hidden == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("mapper sizes must be positive".into()));
        }
        let din: usize = self.input.iter().product();
        NetworkBuilder::new()
            .push("fc1", Layer::Flatten)
            .push("fc1", Layer::Linear { din, dout: self.hidden })
            .push("fc1", Layer::Act(Activation::LeakyRelu))
            .push("fc2", Layer::Linear { din: self.hidden, dout: self.output_dim })
            .build("mapper", &self.input)
    }
}

/// Any network spec, tagged; this is what checkpoints record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "network", rename_all = "snake_case")]
pub enum NetSpec {
    Encoder(EncoderSpec),
    Decoder(DecoderSpec),
    Classifier(ClassifierSpec),
    Discriminator(DiscriminatorSpec),
    Perceptual(PerceptualSpec),
    Private(PrivateNetSpec),
    Mapper(MapperSpec),
}

impl NetSpec {
    pub fn network(&self) -> Result<Network> {
        match self {
            NetSpec::Encoder(s) => s.network(),
            NetSpec::Decoder(s) => s.network(),
            NetSpec::Classifier(s) => s.network(),
            NetSpec::Discriminator(s) => s.network(),
            NetSpec::Perceptual(s) => s.network(),
            NetSpec::Private(s) => s.network(),
            NetSpec::Mapper(s) => s.network(),
        }
    }

    /// Deterministic initialization. The perceptual extractor always uses its
    /// own documented seed.
    pub fn build<T: Real>(&self, seed: u64) -> Result<(Network, ModelParams<T>)> {
        let net = self.network()?;
        let seed = match self {
            NetSpec::Perceptual(p) => p.seed,
            _ => seed,
        };
        let params = net.init(seed);
        Ok((net, params))
    }
}
