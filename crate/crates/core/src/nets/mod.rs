//! The networks of the protector/adversary game: encoder, decoders,
//! discriminator, utility classifier, frozen perceptual extractor, the private
//! identity network and the feature mapper.

mod layers;
mod network;
mod params;
mod spec;

use alloc::vec::Vec;

pub use layers::{Activation, ConvGeom, Layer, LEAKY_SLOPE};
pub use network::{Network, NetworkBuilder, Trace};
pub use params::{ModelParams, Param};
pub use spec::{
    mirror_decoder_spec, ClassifierSpec, DecoderSpec, DecoderStage, DiscriminatorSpec, EncoderSpec,
    MapperSpec, NetSpec, PerceptualSpec, PrivateNetSpec, StageSpec, LATENT_STAGE,
    PRIVATE_FEATURE_STAGE,
};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A network together with its spec and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: NetSpec,
    pub net: Network,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    pub fn build(spec: NetSpec, seed: u64) -> Result<Self> {
        let (net, params) = spec.build(seed)?;
        Ok(Model { spec, net, params })
    }

    /// Rebuilds the network for `spec` and adopts existing parameters.
    pub fn from_params(spec: NetSpec, params: ModelParams<T>) -> Result<Self> {
        let net = spec.network()?;
        params.conforms_to(&net.init::<T>(params.init_seed))?;
        Ok(Model { spec, net, params })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(&self.params, x)
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { spec: self.spec.clone(), net: self.net.clone(), params: self.params.cast() }
    }

    pub fn forward_batched(&self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        let n = x.batch();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            parts.push(self.forward(&x.gather(&idx))?);
            start = end;
        }
        if parts.is_empty() {
            let mut shape = alloc::vec![0];
            shape.extend_from_slice(self.net.output_shape());
            return Ok(Tensor::zeros(&shape));
        }
        Tensor::concat(&parts)
    }
}

/// Z = Enc(X).
pub fn encode<T: Real>(enc: &Model<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    enc.forward(x)
}

/// X̂ = Dec(Z), bounded to `[0, 1]` by the final sigmoid.
pub fn decode<T: Real>(dec: &Model<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    dec.forward(z)
}

/// Attribute logits f(Z).
pub fn classify<T: Real>(f: &Model<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    f.forward(z)
}

/// D(X) in `(0, 1)`, shape `[n, 1]`.
pub fn discriminate<T: Real>(d: &Model<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    d.forward(x)
}

/// Tap stages of a perceptual model.
pub fn perceptual_taps<T>(g: &Model<T>) -> Result<&[alloc::string::String]> {
    match &g.spec {
        NetSpec::Perceptual(p) => Ok(&p.taps),
        _ => Err(Error::InvalidConfig("not a perceptual extractor".into())),
    }
}

/// Activations of g at each tapped stage.
pub fn perceptual<T: Real>(g: &Model<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let trace = g.net.forward_traced(&g.params, x)?;
    perceptual_taps(g)?
        .iter()
        .map(|t| Ok(trace.activations[g.net.stage_end(t)?].clone()))
        .collect()
}

/// Flattened features of C at `tap`.
pub fn private_features<T: Real>(c: &Model<T>, x: &Tensor<T>, tap: &str) -> Result<Tensor<T>> {
    Ok(c.net.forward_to(&c.params, x, tap)?.flatten())
}
