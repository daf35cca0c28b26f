//! Evaluation-time adversaries: black-box model inversion and the
//! feature-level mapping attack.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::losses::{feature_regression_grad, pixel_recon_loss};
use crate::metrics::mean_cosine;
use crate::nets::{
    private_features, DecoderSpec, DiscriminatorSpec, MapperSpec, Model, NetSpec,
};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::{decoder_step, Critic};

/// Inference-only access to an encoder. Nothing in this interface reaches
/// parameters or gradients.
pub trait BlackBoxEncoder<T> {
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    /// Per-sample input shape `[c, h, w]`.
    fn input_shape(&self) -> &[usize];
    /// Per-sample output shape.
    fn output_shape(&self) -> &[usize];
}

/// Wraps a trained encoder behind [`BlackBoxEncoder`], counting inference
/// calls and any reads of the wrapped parameters.
pub struct EncoderEndpoint<T> {
    model: Model<T>,
    calls: AtomicU64,
    param_reads: AtomicU64,
}

impl<T: Real> EncoderEndpoint<T> {
    pub fn new(model: Model<T>) -> Self {
        EncoderEndpoint { model, calls: AtomicU64::new(0), param_reads: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn param_accesses(&self) -> u64 {
        self.param_reads.load(Ordering::Relaxed)
    }

    /// Parameter checksum of the wrapped encoder. Counts as a parameter access.
    pub fn checksum(&self) -> u64 {
        self.param_reads.fetch_add(1, Ordering::Relaxed);
        self.model.checksum()
    }

    /// Gives the model back. Counts as a parameter access.
    pub fn into_model(self) -> Model<T> {
        self.param_reads.fetch_add(1, Ordering::Relaxed);
        self.model
    }
}

impl<T: Real> BlackBoxEncoder<T> for EncoderEndpoint<T> {
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.model.forward(x)
    }

    fn input_shape(&self) -> &[usize] {
        self.model.net.input_shape()
    }

    fn output_shape(&self) -> &[usize] {
        self.model.net.output_shape()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub mu1: f64,
    #[serde(default)]
    pub mu2: f64,
    #[serde(default)]
    pub dec_opt: AdamConfig,
    #[serde(default)]
    pub disc_opt: AdamConfig,
    #[serde(default)]
    pub mapper_opt: AdamConfig,
    /// Decoder optimizer steps.
    pub steps: usize,
    /// Mapper optimizer steps.
    pub mapper_steps: usize,
    #[serde(default = "default_mapper_hidden")]
    pub mapper_hidden: usize,
    pub batch_size: usize,
    /// Samples per encoder query.
    #[serde(default = "default_query_batch")]
    pub query_batch: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mapper_hidden() -> usize {
    128
}

fn default_query_batch() -> usize {
    256
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mu1: 0.0,
            mu2: 0.0,
            dec_opt: AdamConfig::default(),
            disc_opt: AdamConfig::default(),
            mapper_opt: AdamConfig::default(),
            steps: 2000,
            mapper_steps: 2000,
            mapper_hidden: default_mapper_hidden(),
            batch_size: 32,
            query_batch: default_query_batch(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        crate::losses::HyperParams { mu1: self.mu1, mu2: self.mu2, ..Default::default() }.validate()?;
        for o in [&self.dec_opt, &self.disc_opt, &self.mapper_opt] {
            o.validate()?;
        }
        if self.batch_size == 0 || self.query_batch == 0 || self.mapper_hidden == 0 {
            return Err(Error::InvalidConfig("attack batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Queries `bb` on every row of `x`, `chunk` rows per call.
pub fn query_all<T: Real>(bb: &dyn BlackBoxEncoder<T>, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
    let n = x.batch();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let idx: Vec<usize> = (start..end).collect();
        parts.push(bb.infer(&x.gather(&idx))?);
        start = end;
    }
    if parts.is_empty() {
        let mut shape = vec![0];
        shape.extend_from_slice(bb.output_shape());
        return Ok(Tensor::zeros(&shape));
    }
    Tensor::concat(&parts)
}

/// Trained inversion decoder Decᵃ, with its discriminator when one was used.
#[derive(Clone, Debug)]
pub struct MiAttack<T> {
    pub dec: Model<T>,
    pub disc: Option<Model<T>>,
    /// Decoder objective per step.
    pub losses: Vec<f64>,
}

/// Trains a fresh decoder on pairs `(X, bb(X))` for `X` in `x2`. The encoder
/// is only ever queried; the discriminator exists only when μ₁ > 0 and the
/// perceptual extractor `g` is required when μ₂ > 0.
pub fn train_mi_attack<T: Real>(
    bb: &dyn BlackBoxEncoder<T>,
    x2: &Tensor<T>,
    dec_spec: &DecoderSpec,
    disc_spec: &DiscriminatorSpec,
    g: Option<&Model<T>>,
    cfg: &AttackConfig,
) -> Result<MiAttack<T>> {
    cfg.validate()?;
    if dec_spec.input != bb.output_shape() {
        return Err(Error::Shape {
            context: "attack decoder input",
            expected: bb.output_shape().to_vec(),
            found: dec_spec.input.clone(),
        });
    }
    if cfg.mu2 > 0.0 && g.is_none() {
        return Err(Error::InvalidConfig("mu2 > 0 needs a perceptual extractor".into()));
    }
    let mut dec: Model<T> =
        Model::build(NetSpec::Decoder(dec_spec.clone()), rng::derive(cfg.seed, "attack-dec", 0))?;
    let mut dec_opt = Adam::new(&dec, cfg.dec_opt)?;
    let mut disc = if cfg.mu1 > 0.0 {
        let d: Model<T> = Model::build(
            NetSpec::Discriminator(disc_spec.clone()),
            rng::derive(cfg.seed, "attack-disc", 0),
        )?;
        let opt = Adam::new(&d, cfg.disc_opt)?;
        Some((d, opt))
    } else {
        None
    };
    if cfg.steps == 0 {
        return Ok(MiAttack { dec, disc: disc.map(|d| d.0), losses: Vec::new() });
    }
    if x2.batch() == 0 {
        return Err(Error::Empty("adversary data"));
    }
    let z = query_all(bb, x2, cfg.query_batch)?;
    let mut stream = BatchStream::new(x2.batch(), cfg.batch_size, rng::derive(cfg.seed, "attack-batches", 0));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = stream.next().ok_or(Error::Empty("adversary data"))?;
        let critic = disc.as_mut().map(|(model, opt)| Critic { model, opt });
        let l = decoder_step(&mut dec, &mut dec_opt, critic, g, &z.gather(&idx), &x2.gather(&idx), cfg.mu1, cfg.mu2)?;
        if !l.objective.is_finite() {
            return Err(Error::Diverged { step, quantity: "attack decoder objective" });
        }
        losses.push(l.objective);
    }
    Ok(MiAttack { dec, disc: disc.map(|d| d.0), losses })
}

/// Reconstructions `Decᵃ(bb(X))` of every test image.
pub fn run_mi_attack<T: Real>(
    dec: &Model<T>,
    bb: &dyn BlackBoxEncoder<T>,
    t: &Tensor<T>,
    chunk: usize,
) -> Result<Tensor<T>> {
    let z = query_all(bb, t, chunk)?;
    dec.forward_batched(&z, chunk)
}

/// Mean pixel reconstruction loss of `dec` on `x` through `bb`.
pub fn held_out_pixel_loss<T: Real>(
    dec: &Model<T>,
    bb: &dyn BlackBoxEncoder<T>,
    x: &Tensor<T>,
    chunk: usize,
) -> Result<f64> {
    let xhat = run_mi_attack(dec, bb, x, chunk)?;
    Ok(pixel_recon_loss(&xhat, x)?.as_f64())
}

/// Trained mapper M from encoder outputs to C's features.
#[derive(Clone, Debug)]
pub struct FeatureAttack<T> {
    pub mapper: Model<T>,
    pub losses: Vec<f64>,
}

/// Fits M to minimize `‖M(bb(X)) − C(X)‖²` over `x2`, with C's features
/// taken at `tap`.
pub fn train_feature_attack<T: Real>(
    bb: &dyn BlackBoxEncoder<T>,
    c: &Model<T>,
    tap: &str,
    x2: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<FeatureAttack<T>> {
    cfg.validate()?;
    let feature_len: usize = c.net.stage_shape(tap)?.iter().product();
    let spec = MapperSpec {
        input: bb.output_shape().to_vec(),
        hidden: cfg.mapper_hidden,
        output_dim: feature_len,
    };
    let mut mapper: Model<T> = Model::build(NetSpec::Mapper(spec), rng::derive(cfg.seed, "mapper", 0))?;
    if cfg.mapper_steps == 0 {
        return Ok(FeatureAttack { mapper, losses: Vec::new() });
    }
    if x2.batch() == 0 {
        return Err(Error::Empty("adversary data"));
    }
    let mut opt = Adam::new(&mapper, cfg.mapper_opt)?;
    let z = query_all(bb, x2, cfg.query_batch)?;
    let target = batched(x2, cfg.query_batch, |x| private_features(c, x, tap))?;
    let mut stream = BatchStream::new(x2.batch(), cfg.batch_size, rng::derive(cfg.seed, "mapper-batches", 0));
    let mut losses = Vec::with_capacity(cfg.mapper_steps);
    for step in 0..cfg.mapper_steps {
        let idx = stream.next().ok_or(Error::Empty("adversary data"))?;
        let y = target.gather(&idx);
        let (value, grads) = mapper
            .net
            .gradient(&mapper.params, &z.gather(&idx), |out| {
                let lg = feature_regression_grad(out, &y)?;
                Ok((lg.value, lg.grad))
            })?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, quantity: "mapper loss" });
        }
        opt.step(&mut mapper.params, &grads);
        losses.push(value.as_f64());
    }
    Ok(FeatureAttack { mapper, losses })
}

/// Mean squared feature-regression error of `mapper` on `x`.
pub fn feature_attack_loss<T: Real>(
    mapper: &Model<T>,
    bb: &dyn BlackBoxEncoder<T>,
    c: &Model<T>,
    tap: &str,
    x: &Tensor<T>,
    chunk: usize,
) -> Result<f64> {
    let z = query_all(bb, x, chunk)?;
    let pred = mapper.forward_batched(&z, chunk)?;
    let target = batched(x, chunk, |b| private_features(c, b, tap))?;
    Ok(feature_regression_grad(&pred, &target)?.value.as_f64())
}

/// Feature similarity: mean cosine between `M(bb(X))` and `C(X)` over `t`.
pub fn feature_similarity<T: Real>(
    mapper: &Model<T>,
    bb: &dyn BlackBoxEncoder<T>,
    c: &Model<T>,
    tap: &str,
    t: &Tensor<T>,
    chunk: usize,
) -> Result<f64> {
    let z = query_all(bb, t, chunk)?;
    let pred = mapper.forward_batched(&z, chunk)?;
    let target = batched(t, chunk, |b| private_features(c, b, tap))?;
    Ok(mean_cosine(&pred, &target)?.0)
}

fn batched<T: Real>(
    x: &Tensor<T>,
    chunk: usize,
    mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let n = x.batch();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let idx: Vec<usize> = (start..end).collect();
        parts.push(f(&x.gather(&idx))?);
        start = end;
    }
    Tensor::concat(&parts)
}
