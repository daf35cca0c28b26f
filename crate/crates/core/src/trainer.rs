//! Alternating min-max training of the encoder/classifier against a
//! training-time decoder (and optional discriminator).

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchStream, DatasetSplit};
use crate::error::{Error, Result};
use crate::losses::{
    gan_discriminator_grad, gan_generator_grad, perceptual_grad, pixel_recon_grad, utility_grad,
    HyperParams,
};
use crate::nets::{
    mirror_decoder_spec, ClassifierSpec, DiscriminatorSpec, EncoderSpec, Model, NetSpec,
    PerceptualSpec,
};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Split the training-time decoder learns from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecData {
    #[default]
    X1,
    X2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// λ₁, λ₂ weight the protector; μ₁, μ₂ weight the training-time decoder.
    #[serde(default)]
    pub hp: HyperParams,
    #[serde(default)]
    pub enc_opt: AdamConfig,
    #[serde(default)]
    pub f_opt: AdamConfig,
    #[serde(default)]
    pub dec_opt: AdamConfig,
    #[serde(default)]
    pub disc_opt: AdamConfig,
    pub batch_size: usize,
    pub total_alternations: usize,
    /// 0 trains no decoder at all.
    #[serde(default = "one")]
    pub dec_steps_per_alt: usize,
    #[serde(default = "one")]
    pub enc_steps_per_alt: usize,
    #[serde(default)]
    pub seed: u64,
    /// Alternations between checkpoints; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub dec_data: DecData,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hp: HyperParams::default(),
            enc_opt: AdamConfig::default(),
            f_opt: AdamConfig::default(),
            dec_opt: AdamConfig::default(),
            disc_opt: AdamConfig::default(),
            batch_size: 32,
            total_alternations: 600,
            dec_steps_per_alt: 1,
            enc_steps_per_alt: 1,
            seed: 0,
            checkpoint_every: 0,
            dec_data: DecData::X1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        for o in [&self.enc_opt, &self.f_opt, &self.dec_opt, &self.disc_opt] {
            o.validate()?;
        }
        if self.batch_size == 0 || self.enc_steps_per_alt == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and enc_steps_per_alt must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether the encoder objective involves the decoder at all.
    pub fn adversarial(&self) -> bool {
        self.hp.lambda1 != 0.0 || self.hp.lambda2 != 0.0
    }
}

/// Architecture of the networks the protector trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectorSpec {
    pub encoder: EncoderSpec,
    #[serde(default = "default_hidden")]
    pub classifier_hidden: usize,
    pub k: usize,
}

fn default_hidden() -> usize {
    64
}

impl ProtectorSpec {
    pub fn classifier(&self) -> ClassifierSpec {
        ClassifierSpec { encoder: self.encoder.clone(), hidden: self.classifier_hidden, k: self.k }
    }

    pub fn discriminator(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::desk(self.encoder.input)
    }

    pub fn perceptual(&self) -> PerceptualSpec {
        PerceptualSpec::desk(self.encoder.input)
    }
}

/// Encoder, classifier, training-time decoder and the optional
/// discriminator / perceptual extractor.
#[derive(Clone, Debug)]
pub struct ProtectorNets<T> {
    pub enc: Model<T>,
    pub f: Model<T>,
    pub dec: Model<T>,
    pub disc: Option<Model<T>>,
    pub g: Option<Model<T>>,
}

impl<T: Real> ProtectorNets<T> {
    /// Each network draws its initialization from its own stream of `seed`.
    pub fn init(spec: &ProtectorSpec, hp: &HyperParams, seed: u64) -> Result<Self> {
        let enc = Model::build(NetSpec::Encoder(spec.encoder.clone()), rng::derive(seed, "enc", 0))?;
        let f = Model::build(NetSpec::Classifier(spec.classifier()), rng::derive(seed, "f", 0))?;
        let dec_spec = mirror_decoder_spec(&spec.encoder, &spec.encoder.tap)?;
        let dec = Model::build(NetSpec::Decoder(dec_spec), rng::derive(seed, "dec", 0))?;
        let disc = if hp.mu1 > 0.0 {
            Some(Model::build(
                NetSpec::Discriminator(spec.discriminator()),
                rng::derive(seed, "disc", 0),
            )?)
        } else {
            None
        };
        let g = if hp.lambda2 > 0.0 || hp.mu2 > 0.0 {
            Some(Model::build(NetSpec::Perceptual(spec.perceptual()), 0)?)
        } else {
            None
        };
        Ok(ProtectorNets { enc, f, dec, disc, g })
    }
}

/// Which side of the game an optimizer step belonged to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Adversary,
    Protector,
}

/// Losses observed at one optimizer step; terms not evaluated are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub utility: Option<f64>,
    pub pixel: Option<f64>,
    pub perceptual: Option<f64>,
    pub gan_gen: Option<f64>,
    pub gan_disc: Option<f64>,
    /// Eq. (5)-style decoder objective or protector objective, by phase.
    pub objective: f64,
}

impl StepRecord {
    fn values(&self) -> [(Option<f64>, &'static str); 6] {
        [
            (self.utility, "utility loss"),
            (self.pixel, "pixel loss"),
            (self.perceptual, "perceptual loss"),
            (self.gan_gen, "generator loss"),
            (self.gan_disc, "discriminator loss"),
            (Some(self.objective), "objective"),
        ]
    }

    fn check_finite(&self) -> Result<()> {
        for (v, quantity) in self.values() {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Diverged { step: self.step, quantity });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, mut r: StepRecord) -> Result<()> {
        r.step = self.records.len();
        r.check_finite()?;
        self.records.push(r);
        Ok(())
    }

    pub fn protector(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Protector)
    }

    pub fn adversary(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Adversary)
    }
}

/// Receives intermediate and final training state.
pub trait CheckpointSink<T> {
    /// `alternation` is the number of completed alternations.
    fn save(&mut self, alternation: usize, nets: &ProtectorNets<T>, history: &TrainHistory) -> Result<()>;
}

/// Sink that keeps nothing.
pub struct NoCheckpoints;

impl<T> CheckpointSink<T> for NoCheckpoints {
    fn save(&mut self, _: usize, _: &ProtectorNets<T>, _: &TrainHistory) -> Result<()> {
        Ok(())
    }
}

/// Reconstruction terms of a decoder output and their combined gradient with
/// respect to the reconstruction.
pub(crate) struct ReconTerms<T> {
    pub pixel: T,
    pub perceptual: Option<T>,
    pub gan_gen: Option<T>,
    pub grad: Tensor<T>,
}

/// `w_pixel · pixel + w_gan · gan_gen + w_perc · perc`. Terms with a zero
/// weight are skipped (the pixel term is always evaluated).
pub(crate) fn recon_terms<T: Real>(
    xhat: &Tensor<T>,
    x: &Tensor<T>,
    [w_pixel, w_gan, w_perc]: [f64; 3],
    disc: Option<&Model<T>>,
    g: Option<&Model<T>>,
) -> Result<ReconTerms<T>> {
    let px = pixel_recon_grad(xhat, x)?;
    let mut grad = px.grad.scale(T::lit(w_pixel));
    let mut gan_gen = None;
    if w_gan != 0.0 {
        let d = disc.ok_or_else(|| Error::InvalidConfig("GAN term needs a discriminator".into()))?;
        let trace = d.net.forward_traced(&d.params, xhat)?;
        let gg = gan_generator_grad(trace.output());
        let (gx, _) = d.net.backward(&d.params, &trace, &gg.grad, false)?;
        grad.add_scaled(T::lit(w_gan), &gx);
        gan_gen = Some(gg.value);
    }
    let mut perceptual = None;
    if w_perc != 0.0 {
        let g = g.ok_or_else(|| Error::InvalidConfig("perceptual term needs an extractor".into()))?;
        let pg = perceptual_grad(g, xhat, x)?;
        grad.add_scaled(T::lit(w_perc), &pg.grad);
        perceptual = Some(pg.value);
    }
    Ok(ReconTerms { pixel: px.value, perceptual, gan_gen, grad })
}

/// Losses of one decoder update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderStepLosses {
    pub pixel: f64,
    pub perceptual: Option<f64>,
    pub gan_gen: Option<f64>,
    pub gan_disc: Option<f64>,
    pub objective: f64,
}

/// A discriminator with its optimizer.
pub struct Critic<'a, T> {
    pub model: &'a mut Model<T>,
    pub opt: &'a mut Adam<T>,
}

/// One descent step on `pixel + μ₁·gan_gen + μ₂·perc` for the decoder taking
/// `z` to `x`, then (when μ₁ > 0) one ascent step on the discriminator
/// objective using the pre-update reconstructions.
pub fn decoder_step<T: Real>(
    dec: &mut Model<T>,
    dec_opt: &mut Adam<T>,
    critic: Option<Critic<'_, T>>,
    g: Option<&Model<T>>,
    z: &Tensor<T>,
    x: &Tensor<T>,
    mu1: f64,
    mu2: f64,
) -> Result<DecoderStepLosses> {
    let trace = dec.net.forward_traced(&dec.params, z)?;
    let xhat = trace.output().clone();
    let disc_ref = critic.as_ref().map(|c| &*c.model);
    if mu1 > 0.0 && disc_ref.is_none() {
        return Err(Error::InvalidConfig("mu1 > 0 needs a discriminator".into()));
    }
    let terms = recon_terms(&xhat, x, [1.0, mu1, mu2], disc_ref, g)?;
    let (_, grads) = dec.net.backward(&dec.params, &trace, &terms.grad, true)?;
    dec_opt.step(&mut dec.params, &grads.expect("decoder gradients"));

    let mut gan_disc = None;
    if let (true, Some(c)) = (mu1 > 0.0, critic) {
        let real = c.model.net.forward_traced(&c.model.params, x)?;
        let fake = c.model.net.forward_traced(&c.model.params, &xhat)?;
        let (value, g_real, g_fake) = gan_discriminator_grad(real.output(), fake.output())?;
        // ascent: descend on the negated objective
        let (_, gr) = c.model.net.backward(&c.model.params, &real, &g_real.scale(-T::one()), true)?;
        let (_, gf) = c.model.net.backward(&c.model.params, &fake, &g_fake.scale(-T::one()), true)?;
        let mut grads = gr.expect("discriminator gradients");
        grads.add_scaled(T::one(), &gf.expect("discriminator gradients"));
        c.opt.step(&mut c.model.params, &grads);
        gan_disc = Some(value.as_f64());
    }
    let pixel = terms.pixel.as_f64();
    let perceptual = terms.perceptual.map(Real::as_f64);
    let gan_gen = terms.gan_gen.map(Real::as_f64);
    let objective = pixel + mu1 * gan_gen.unwrap_or(0.0) + mu2 * perceptual.unwrap_or(0.0);
    Ok(DecoderStepLosses { pixel, perceptual, gan_gen, gan_disc, objective })
}

/// Optimizers for every trainable protector-side network.
pub struct Optimizers<T> {
    pub enc: Adam<T>,
    pub f: Adam<T>,
    pub dec: Adam<T>,
    pub disc: Option<Adam<T>>,
}

impl<T: Real> Optimizers<T> {
    pub fn new(nets: &ProtectorNets<T>, cfg: &TrainConfig) -> Result<Self> {
        Ok(Optimizers {
            enc: Adam::new(&nets.enc, cfg.enc_opt)?,
            f: Adam::new(&nets.f, cfg.f_opt)?,
            dec: Adam::new(&nets.dec, cfg.dec_opt)?,
            disc: nets.disc.as_ref().map(|d| Adam::new(d, cfg.disc_opt)).transpose()?,
        })
    }
}

/// Updates Dec (and D) on `x` with the encoder held fixed.
pub fn adversary_update_step<T: Real>(
    nets: &mut ProtectorNets<T>,
    opts: &mut Optimizers<T>,
    hp: &HyperParams,
    x: &Tensor<T>,
) -> Result<DecoderStepLosses> {
    let z = nets.enc.forward(x)?;
    let critic = match (nets.disc.as_mut(), opts.disc.as_mut()) {
        (Some(model), Some(opt)) if hp.mu1 > 0.0 => Some(Critic { model, opt }),
        _ => None,
    };
    decoder_step(&mut nets.dec, &mut opts.dec, critic, nets.g.as_ref(), &z, x, hp.mu1, hp.mu2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtectorStepLosses {
    pub utility: f64,
    pub pixel: Option<f64>,
    pub perceptual: Option<f64>,
    pub objective: f64,
}

/// Updates Enc and f on a labelled batch with the decoder held fixed,
/// minimizing `utility − λ₁·pixel − λ₂·perc`. With λ₁ = λ₂ = 0 the decoder is
/// not evaluated.
pub fn protector_update_step<T: Real>(
    nets: &mut ProtectorNets<T>,
    opts: &mut Optimizers<T>,
    hp: &HyperParams,
    batch: &Batch<T>,
) -> Result<ProtectorStepLosses> {
    let enc_trace = nets.enc.net.forward_traced(&nets.enc.params, &batch.images)?;
    let z = enc_trace.output();
    let f_trace = nets.f.net.forward_traced(&nets.f.params, z)?;
    let util = utility_grad(f_trace.output(), &batch.attributes)?;
    let (mut dz, f_grads) = nets.f.net.backward(&nets.f.params, &f_trace, &util.grad, true)?;

    let mut pixel = None;
    let mut perceptual = None;
    if hp.lambda1 != 0.0 || hp.lambda2 != 0.0 {
        let dec_trace = nets.dec.net.forward_traced(&nets.dec.params, z)?;
        let terms = recon_terms(
            dec_trace.output(),
            &batch.images,
            [-hp.lambda1, 0.0, -hp.lambda2],
            None,
            nets.g.as_ref(),
        )?;
        let (dz_priv, _) = nets.dec.net.backward(&nets.dec.params, &dec_trace, &terms.grad, false)?;
        dz.add_assign(&dz_priv);
        pixel = Some(terms.pixel.as_f64());
        perceptual = terms.perceptual.map(Real::as_f64);
    }
    let (_, enc_grads) = nets.enc.net.backward(&nets.enc.params, &enc_trace, &dz, true)?;
    opts.f.step(&mut nets.f.params, &f_grads.expect("classifier gradients"));
    opts.enc.step(&mut nets.enc.params, &enc_grads.expect("encoder gradients"));

    let utility = util.value.as_f64();
    let objective =
        utility - hp.lambda1 * pixel.unwrap_or(0.0) - hp.lambda2 * perceptual.unwrap_or(0.0);
    Ok(ProtectorStepLosses { utility, pixel, perceptual, objective })
}

/// Result of [`alternate_train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub nets: ProtectorNets<T>,
    pub history: TrainHistory,
}

/// Runs `total_alternations` rounds of decoder updates followed by
/// encoder/classifier updates. Minibatch order, initialization and every
/// other random choice derive from `cfg.seed`, each from its own stream.
pub fn alternate_train<T: Real>(
    spec: &ProtectorSpec,
    cfg: &TrainConfig,
    x1: &DatasetSplit,
    x2: &DatasetSplit,
    sink: &mut dyn CheckpointSink<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if x1.is_empty() || (cfg.dec_data == DecData::X2 && x2.is_empty()) {
        return Err(Error::Empty("training split"));
    }
    if x1.k_attributes != spec.k {
        return Err(Error::Arity { context: "attribute count", expected: spec.k, found: x1.k_attributes });
    }
    let mut nets = ProtectorNets::init(spec, &cfg.hp, cfg.seed)?;
    let mut opts = Optimizers::new(&nets, cfg)?;
    let mut history = TrainHistory::default();

    let private = x1.full_batch::<T>();
    let dec_images = match cfg.dec_data {
        DecData::X1 => private.images.clone(),
        DecData::X2 => x2.full_batch::<T>().images,
    };
    let mut enc_stream = BatchStream::new(private.images.batch(), cfg.batch_size, rng::derive(cfg.seed, "x1", 0));
    let mut dec_stream =
        BatchStream::new(dec_images.batch(), cfg.batch_size, rng::derive(cfg.seed, "dec-data", 0));

    for alt in 0..cfg.total_alternations {
        for _ in 0..cfg.dec_steps_per_alt {
            let idx = dec_stream.next().ok_or(Error::Empty("decoder data"))?;
            let l = adversary_update_step(&mut nets, &mut opts, &cfg.hp, &dec_images.gather(&idx))?;
            history.push(StepRecord {
                step: 0,
                phase: Phase::Adversary,
                utility: None,
                pixel: Some(l.pixel),
                perceptual: l.perceptual,
                gan_gen: l.gan_gen,
                gan_disc: l.gan_disc,
                objective: l.objective,
            })?;
        }
        for _ in 0..cfg.enc_steps_per_alt {
            let idx = enc_stream.next().ok_or(Error::Empty("private data"))?;
            let batch = Batch {
                images: private.images.gather(&idx),
                attributes: private.attributes.gather(&idx),
                identities: idx.iter().map(|&i| private.identities[i]).collect(),
            };
            let l = protector_update_step(&mut nets, &mut opts, &cfg.hp, &batch)?;
            history.push(StepRecord {
                step: 0,
                phase: Phase::Protector,
                utility: Some(l.utility),
                pixel: l.pixel,
                perceptual: l.perceptual,
                gan_gen: None,
                gan_disc: None,
                objective: l.objective,
            })?;
        }
        let done = alt + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_alternations {
            sink.save(done, &nets, &history)?;
        }
    }
    if !nets.enc.params.all_finite() || !nets.f.params.all_finite() {
        return Err(Error::Diverged { step: history.len(), quantity: "encoder parameters" });
    }
    sink.save(cfg.total_alternations, &nets, &history)?;
    Ok(TrainOutcome { nets, history })
}

/// Human-readable summary of the last recorded losses.
pub fn summarize(history: &TrainHistory) -> alloc::string::String {
    let last_p = history.protector().last();
    let last_a = history.adversary().last();
    format!(
        "steps={} utility={:?} protector_pixel={:?} decoder_pixel={:?}",
        history.len(),
        last_p.and_then(|r| r.utility),
        last_p.and_then(|r| r.pixel),
        last_a.and_then(|r| r.pixel),
    )
}
