use privshield_core::attacks::{
    feature_attack_loss, held_out_pixel_loss, run_mi_attack, train_feature_attack, train_mi_attack,
    AttackConfig, BlackBoxEncoder, EncoderEndpoint,
};
use privshield_core::data::{generate_synthetic, ImageShape, SynthConfig};
use privshield_core::nets::{
    mirror_decoder_spec, Activation, DiscriminatorSpec, EncoderSpec, Model, NetSpec, PerceptualSpec,
    PrivateNetSpec, LATENT_STAGE, PRIVATE_FEATURE_STAGE,
};
use privshield_core::{Error, Result, Tensor};

fn images(n_id: usize, per: usize, size: usize, channels: usize) -> Tensor<f32> {
    let ds = generate_synthetic(&SynthConfig {
        n_identities: n_id,
        samples_per_identity: per,
        k_attributes: 2,
        image_size: size,
        channels,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    privshield_core::data::DatasetSplit::from_dataset(privshield_core::data::SplitRole::Private, &ds)
        .full_batch::<f32>()
        .images
}

/// A single fully connected layer as wide as the image; set to the identity
/// by the caller.
fn linear_encoder(shape: ImageShape) -> EncoderSpec {
    EncoderSpec {
        input: shape,
        conv_stages: vec![],
        latent_dim: shape.len(),
        latent_activation: Activation::Identity,
        tap: LATENT_STAGE.to_string(),
        normalize_output: false,
    }
}

fn split(x: &Tensor<f32>, at: usize) -> (Tensor<f32>, Tensor<f32>) {
    let n = x.batch();
    (x.gather(&(0..at).collect::<Vec<_>>()), x.gather(&(at..n).collect::<Vec<_>>()))
}

#[test]
fn attack_inverts_a_linear_encoder_and_stays_black_box() {
    // more samples than pixels, so the inverse is pinned down everywhere
    let x = images(40, 30, 16, 1);
    let (train, held) = split(&x, 1000);
    let shape = ImageShape::square(16, 1);
    let spec = linear_encoder(shape);
    let mut enc: Model<f32> = Model::build(NetSpec::Encoder(spec.clone()), 1).unwrap();
    let d = shape.len();
    let [w, b] = &mut enc.params.params[..] else { panic!("one dense layer") };
    w.data.iter_mut().enumerate().for_each(|(i, v)| *v = f32::from(u8::from(i / d == i % d)));
    b.data.iter_mut().for_each(|v| *v = 0.0);
    let bb = EncoderEndpoint::new(enc);
    let dec_spec = mirror_decoder_spec(&spec, LATENT_STAGE).unwrap();
    let cfg = AttackConfig { steps: 500, batch_size: 16, ..AttackConfig::default() };
    let untrained = train_mi_attack(&bb, &train, &dec_spec, &DiscriminatorSpec::desk(shape), None,
        &AttackConfig { steps: 0, ..cfg.clone() }).unwrap();
    let before = held_out_pixel_loss(&untrained.dec, &bb, &held, 64).unwrap();
    let attack = train_mi_attack(&bb, &train, &dec_spec, &DiscriminatorSpec::desk(shape), None, &cfg).unwrap();
    let after = held_out_pixel_loss(&attack.dec, &bb, &held, 64).unwrap();
    assert!(after < 0.5 * before, "{after} vs {before}");
    assert!(attack.disc.is_none());
    assert!(bb.calls() > 0);
    assert_eq!(bb.param_accesses(), 0);
}

#[test]
fn reconstructions_are_bounded_shaped_and_deterministic() {
    let x = images(4, 6, 16, 3);
    let shape = ImageShape::square(16, 3);
    let spec = EncoderSpec::desk(shape);
    let bb = EncoderEndpoint::new(Model::<f32>::build(NetSpec::Encoder(spec.clone()), 2).unwrap());
    let dec_spec = mirror_decoder_spec(&spec, LATENT_STAGE).unwrap();
    let cfg = AttackConfig { steps: 20, batch_size: 8, ..AttackConfig::default() };
    let a = train_mi_attack(&bb, &x, &dec_spec, &DiscriminatorSpec::desk(shape), None, &cfg).unwrap();
    let r1 = run_mi_attack(&a.dec, &bb, &x, 5).unwrap();
    let r2 = run_mi_attack(&a.dec, &bb, &x, 7).unwrap();
    assert_eq!(r1.shape(), x.shape());
    assert_eq!(r1, r2);
    assert!(r1.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn perceptual_attack_builds_no_discriminator_and_gan_attack_does() {
    let x = images(3, 4, 16, 3);
    let shape = ImageShape::square(16, 3);
    let spec = EncoderSpec::desk(shape);
    let bb = EncoderEndpoint::new(Model::<f32>::build(NetSpec::Encoder(spec.clone()), 2).unwrap());
    let dec_spec = mirror_decoder_spec(&spec, LATENT_STAGE).unwrap();
    let g: Model<f32> = Model::build(NetSpec::Perceptual(PerceptualSpec::desk(shape)), 0).unwrap();
    let perc = AttackConfig { mu2: 1.0, steps: 3, batch_size: 4, ..AttackConfig::default() };
    let a = train_mi_attack(&bb, &x, &dec_spec, &DiscriminatorSpec::desk(shape), Some(&g), &perc).unwrap();
    assert!(a.disc.is_none());
    let gan = AttackConfig { mu1: 1.0, ..perc };
    let b = train_mi_attack(&bb, &x, &dec_spec, &DiscriminatorSpec::desk(shape), Some(&g), &gan).unwrap();
    assert!(b.disc.is_some());
    assert_eq!(bb.param_accesses(), 0);
}

#[test]
fn decoder_shape_mismatch_is_rejected() {
    let x = images(2, 2, 16, 3);
    let shape = ImageShape::square(16, 3);
    let spec = EncoderSpec::desk(shape);
    let bb = EncoderEndpoint::new(Model::<f32>::build(NetSpec::Encoder(spec.clone()), 2).unwrap());
    let wrong = mirror_decoder_spec(&spec, "conv2").unwrap();
    let err = train_mi_attack(&bb, &x, &wrong, &DiscriminatorSpec::desk(shape), None, &AttackConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert_eq!(bb.calls(), 0);
}

/// Encoder stand-in whose output ignores the input.
struct Constant {
    input: Vec<usize>,
    output: Vec<usize>,
}

impl BlackBoxEncoder<f32> for Constant {
    fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut shape = vec![x.batch()];
        shape.extend_from_slice(&self.output);
        Ok(Tensor::full(&shape, 0.5))
    }
    fn input_shape(&self) -> &[usize] {
        &self.input
    }
    fn output_shape(&self) -> &[usize] {
        &self.output
    }
}

#[test]
fn mapper_fits_a_constant_feature_target() {
    let x = images(3, 8, 16, 3);
    let shape = ImageShape::square(16, 3);
    // zero conv weights make C's features constant over the dataset
    let mut c: Model<f32> = Model::build(NetSpec::Private(PrivateNetSpec::desk(shape, 3)), 4).unwrap();
    for p in c.params.params.iter_mut().filter(|p| p.name.starts_with("conv1")) {
        p.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let bb = Constant { input: vec![3, 16, 16], output: vec![6] };
    let cfg = AttackConfig { mapper_steps: 400, batch_size: 8, ..AttackConfig::default() };
    let m = train_feature_attack(&bb, &c, PRIVATE_FEATURE_STAGE, &x, &cfg).unwrap();
    let loss = feature_attack_loss(&m.mapper, &bb, &c, PRIVATE_FEATURE_STAGE, &x, 16).unwrap();
    assert!(loss < 1e-3 * m.losses[0].max(1e-3), "{loss} from {}", m.losses[0]);
}

#[test]
fn mapper_improves_on_held_out_data() {
    let x = images(6, 10, 16, 3);
    let (train, held) = split(&x, 45);
    let shape = ImageShape::square(16, 3);
    let spec = EncoderSpec::desk(shape);
    let bb = EncoderEndpoint::new(Model::<f32>::build(NetSpec::Encoder(spec), 2).unwrap());
    let c: Model<f32> = Model::build(NetSpec::Private(PrivateNetSpec::desk(shape, 6)), 4).unwrap();
    let cfg = AttackConfig { mapper_steps: 300, batch_size: 8, ..AttackConfig::default() };
    let init = train_feature_attack(&bb, &c, PRIVATE_FEATURE_STAGE, &train, &AttackConfig { mapper_steps: 0, ..cfg.clone() }).unwrap();
    let fit = train_feature_attack(&bb, &c, PRIVATE_FEATURE_STAGE, &train, &cfg).unwrap();
    let l0 = feature_attack_loss(&init.mapper, &bb, &c, PRIVATE_FEATURE_STAGE, &held, 16).unwrap();
    let l1 = feature_attack_loss(&fit.mapper, &bb, &c, PRIVATE_FEATURE_STAGE, &held, 16).unwrap();
    assert!(l1 < l0, "{l1} vs {l0}");
    assert!(bb.calls() > 0);
    assert_eq!(bb.param_accesses(), 0);
}
