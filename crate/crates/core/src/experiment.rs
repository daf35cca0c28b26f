//! End-to-end pipeline: split the data, train the protector, train the
//! private network C, attack the encoder and measure everything on T.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    feature_similarity, query_all, run_mi_attack, train_feature_attack, train_mi_attack,
    AttackConfig, EncoderEndpoint, MiAttack,
};
use crate::data::{split_dataset, BatchStream, Dataset, DatasetSplit, SplitMode, Splits};
use crate::error::{Error, Result};
use crate::losses::identity_cross_entropy_grad;
use crate::metrics::{face_similarity, lda_score, mean_mcc, psnr, ssim, MetricsReport, RunMeta};
use crate::nets::{
    mirror_decoder_spec, DiscriminatorSpec, EncoderSpec, Model, NetSpec, PerceptualSpec,
    PrivateNetSpec, LATENT_STAGE,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::{alternate_train, CheckpointSink, ProtectorSpec, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fractions of (X1, X2, T).
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub mode: SplitMode,
    /// Attribute columns to keep for the utility task; all when absent.
    #[serde(default)]
    pub attributes: Option<Vec<usize>>,
}

fn default_fractions() -> [f64; 3] {
    [0.4, 0.4, 0.2]
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fractions: default_fractions(), mode: SplitMode::default(), attributes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetsConfig {
    /// Encoder stage whose output is released.
    #[serde(default = "default_tap")]
    pub tap: String,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub classifier_hidden: usize,
    #[serde(default = "default_feature_dim")]
    pub private_feature_dim: usize,
}

fn default_tap() -> String {
    LATENT_STAGE.to_string()
}
fn default_latent() -> usize {
    64
}
fn default_hidden() -> usize {
    64
}
fn default_feature_dim() -> usize {
    64
}

impl Default for NetsConfig {
    fn default() -> Self {
        NetsConfig {
            tap: default_tap(),
            latent_dim: default_latent(),
            classifier_hidden: default_hidden(),
            private_feature_dim: default_feature_dim(),
        }
    }
}

/// Training of the identity network C used by the privacy metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivateTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub opt: AdamConfig,
}

impl Default for PrivateTrainConfig {
    fn default() -> Self {
        PrivateTrainConfig { steps: 1500, batch_size: 32, opt: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Rows per inference call.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_chunk() -> usize {
    256
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: default_threshold(), chunk: default_chunk() }
    }
}

/// Everything the pipeline needs besides the dataset itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub nets: NetsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub private: PrivateTrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.attack.validate()?;
        if self.private.steps == 0 || self.private.batch_size == 0 {
            return Err(Error::InvalidConfig("private network budget must be positive".into()));
        }
        self.private.opt.validate()?;
        if self.eval.chunk == 0 || !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::InvalidConfig("eval chunk must be positive and threshold in [0, 1]".into()));
        }
        if self.split.attributes.as_ref().is_some_and(|a| a.is_empty()) {
            return Err(Error::InvalidConfig("attribute selection is empty".into()));
        }
        Ok(())
    }

    /// Training settings with the seed derived from the global seed.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig { seed: rng::derive(self.seed, "train", self.train.seed), ..self.train.clone() }
    }

    pub fn effective_attack(&self) -> AttackConfig {
        AttackConfig { seed: rng::derive(self.seed, "attack", self.attack.seed), ..self.attack.clone() }
    }

    pub fn encoder_spec(&self, dataset: &Dataset) -> Result<EncoderSpec> {
        let mut e = EncoderSpec::desk(dataset.shape).with_tap(&self.nets.tap);
        e.latent_dim = self.nets.latent_dim;
        e.tap_shape()?;
        Ok(e)
    }

    pub fn protector_spec(&self, dataset: &Dataset) -> Result<ProtectorSpec> {
        Ok(ProtectorSpec {
            encoder: self.encoder_spec(dataset)?,
            classifier_hidden: self.nets.classifier_hidden,
            k: self.split.attributes.as_ref().map_or(dataset.k_attributes, Vec::len),
        })
    }

    pub fn private_spec(&self, dataset: &Dataset) -> PrivateNetSpec {
        let mut p = PrivateNetSpec::desk(dataset.shape, dataset.identity_count());
        p.feature_dim = self.nets.private_feature_dim;
        p
    }
}

/// Applies the attribute selection and splits the dataset.
pub fn prepare_splits(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Splits> {
    let selected;
    let data = match &cfg.split.attributes {
        Some(cols) => {
            selected = dataset.select_attributes(cols)?;
            &selected
        }
        None => dataset,
    };
    split_dataset(data, cfg.split.fractions, rng::derive(cfg.seed, "split", 0), cfg.split.mode)
}

/// Trains the identity classifier C on `data` by softmax cross entropy.
pub fn train_private_net(
    spec: &PrivateNetSpec,
    data: &DatasetSplit,
    cfg: &PrivateTrainConfig,
    seed: u64,
) -> Result<Model<f32>> {
    let mut c: Model<f32> = Model::build(NetSpec::Private(spec.clone()), rng::derive(seed, "private-net", 0))?;
    let mut opt = Adam::new(&c, cfg.opt)?;
    let all = data.full_batch::<f32>();
    let mut stream = BatchStream::new(data.len(), cfg.batch_size, rng::derive(seed, "private-batches", 0));
    for step in 0..cfg.steps {
        let idx = stream.next().ok_or(Error::Empty("private network data"))?;
        let labels: Vec<usize> = idx.iter().map(|&i| all.identities[i]).collect();
        let (value, grads) = c.net.gradient(&c.params, &all.images.gather(&idx), |logits| {
            let lg = identity_cross_entropy_grad(logits, &labels)?;
            Ok((lg.value, lg.grad))
        })?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, quantity: "private network loss" });
        }
        opt.step(&mut c.params, &grads);
    }
    Ok(c)
}

/// Trains the protector on X1 (and X2 when the decoder is assigned to it).
pub fn train_protector(
    dataset: &Dataset,
    splits: &Splits,
    cfg: &PipelineConfig,
    sink: &mut dyn CheckpointSink<f32>,
) -> Result<TrainOutcome<f32>> {
    let spec = cfg.protector_spec(dataset)?;
    alternate_train(&spec, &cfg.effective_train(), &splits.private, &splits.adversary, sink)
}

/// Attack artifacts and measurements for one encoder.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub attack: MiAttack<f32>,
    pub mapper: Model<f32>,
    /// Reconstructions of the test split, in test order.
    pub reconstructions: Tensor<f32>,
    /// Encoder outputs of the test split, flattened.
    pub test_features: Tensor<f32>,
    pub encoder_calls: u64,
    pub encoder_param_accesses: u64,
}

/// Attacks `enc` through a black-box endpoint and measures utility (with `f`)
/// and privacy on T. C must already be trained.
pub fn evaluate(
    dataset: &Dataset,
    splits: &Splits,
    cfg: &PipelineConfig,
    enc: Model<f32>,
    f: &Model<f32>,
    c: &Model<f32>,
) -> Result<Evaluation> {
    let attack_cfg = cfg.effective_attack();
    let chunk = cfg.eval.chunk;
    let enc_spec = match &enc.spec {
        NetSpec::Encoder(e) => e.clone(),
        _ => return Err(Error::InvalidConfig("evaluate needs an encoder".into())),
    };
    let endpoint = EncoderEndpoint::new(enc);
    let x2 = splits.adversary.full_batch::<f32>().images;
    let test = splits.test.full_batch::<f32>();

    let dec_spec = mirror_decoder_spec(&enc_spec, &enc_spec.tap)?;
    let disc_spec = DiscriminatorSpec::desk(dataset.shape);
    let g = if attack_cfg.mu2 > 0.0 {
        Some(Model::build(NetSpec::Perceptual(PerceptualSpec::desk(dataset.shape)), 0)?)
    } else {
        None
    };
    let attack = train_mi_attack(&endpoint, &x2, &dec_spec, &disc_spec, g.as_ref(), &attack_cfg)?;
    let reconstructions = run_mi_attack(&attack.dec, &endpoint, &test.images, chunk)?;
    let private_tap = cfg.private_spec(dataset).tap;
    let feature = train_feature_attack(&endpoint, c, &private_tap, &x2, &attack_cfg)?;

    let z = query_all(&endpoint, &test.images, chunk)?;
    let logits = f.forward_batched(&z, chunk)?;
    let scores = logits.map(|v| 1.0 / (1.0 + libm::expf(-v)));
    let (mcc, per_attr) = mean_mcc(&scores, &test.attributes, cfg.eval.threshold)?;
    let face = face_similarity(&test.images, &reconstructions, c, &private_tap)?;
    let feat = feature_similarity(&feature.mapper, &endpoint, c, &private_tap, &test.images, chunk)?;
    let test_features = z.flatten();
    let lda = lda_score(&test_features, &test.identities)?;

    let train = cfg.effective_train();
    let report = MetricsReport {
        mean_mcc: mcc,
        per_attribute_mcc: per_attr,
        face_sim: face,
        feature_sim: feat,
        ssim: ssim(&test.images, &reconstructions)?,
        psnr: psnr(&test.images, &reconstructions)?,
        s_w: lda.s_w,
        s_b: lda.s_b,
        lda_score: (!lda.unbounded).then_some(lda.score),
        meta: RunMeta {
            label: String::new(),
            config_hash: String::new(),
            seed: cfg.seed,
            tap: enc_spec.tap.clone(),
            train_hp: train.hp,
            attack_mu1: attack_cfg.mu1,
            attack_mu2: attack_cfg.mu2,
            train_alternations: train.total_alternations,
            attack_steps: attack_cfg.steps,
            mapper_steps: attack_cfg.mapper_steps,
            bb_queries: endpoint.calls(),
            eval_split: "test".to_string(),
        },
    };
    report.check_invariants()?;
    Ok(Evaluation {
        report,
        attack,
        mapper: feature.mapper,
        reconstructions,
        test_features,
        encoder_calls: endpoint.calls(),
        encoder_param_accesses: endpoint.param_accesses(),
    })
}

/// Everything produced by [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub splits: Splits,
    pub training: TrainOutcome<f32>,
    pub private_net: Model<f32>,
    pub evaluation: Evaluation,
}

/// Trains C on X2, the protector on X1, then attacks and evaluates on T.
pub fn run_pipeline(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    sink: &mut dyn CheckpointSink<f32>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let splits = prepare_splits(dataset, cfg)?;
    let training = train_protector(dataset, &splits, cfg, sink)?;
    let private_net = train_private_net(
        &cfg.private_spec(dataset),
        &splits.adversary,
        &cfg.private,
        rng::derive(cfg.seed, "private", 0),
    )?;
    let evaluation = evaluate(
        dataset,
        &splits,
        cfg,
        training.nets.enc.clone(),
        &training.nets.f,
        &private_net,
    )?;
    Ok(PipelineOutcome { splits, training, private_net, evaluation })
}
