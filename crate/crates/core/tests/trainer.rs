use privshield_core::data::{generate_synthetic, split_dataset, Batch, SplitMode, Splits, SynthConfig};
use privshield_core::losses::{pixel_recon_loss, HyperParams};
use privshield_core::nets::{EncoderSpec, Model, NetSpec};
use privshield_core::optim::AdamConfig;
use privshield_core::trainer::{
    adversary_update_step, alternate_train, protector_update_step, CheckpointSink, NoCheckpoints,
    Optimizers, Phase, ProtectorNets, ProtectorSpec, TrainConfig, TrainHistory,
};
use privshield_core::Error;

fn small_splits() -> Splits {
    let ds = generate_synthetic(&SynthConfig {
        n_identities: 10,
        samples_per_identity: 12,
        k_attributes: 4,
        image_size: 16,
        channels: 3,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    split_dataset(&ds, [0.4, 0.4, 0.2], 1, SplitMode::Permutation).unwrap()
}

fn spec(splits: &Splits) -> ProtectorSpec {
    ProtectorSpec { encoder: EncoderSpec::desk(splits.private.shape), classifier_hidden: 16, k: 4 }
}

fn cfg(lambda1: f64, alternations: usize) -> TrainConfig {
    TrainConfig {
        hp: HyperParams { lambda1, ..Default::default() },
        batch_size: 8,
        total_alternations: alternations,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn adversary_step_freezes_encoder_and_classifier() {
    let s = small_splits();
    let c = cfg(1.0, 1);
    let mut nets = ProtectorNets::<f32>::init(&spec(&s), &c.hp, 1).unwrap();
    assert!(nets.disc.is_none(), "mu1 = 0 builds no discriminator");
    let mut opts = Optimizers::new(&nets, &c).unwrap();
    let (enc, f, dec) = (nets.enc.checksum(), nets.f.checksum(), nets.dec.checksum());
    let x = s.private.batch::<f32>(&[0, 1, 2, 3]).images;
    adversary_update_step(&mut nets, &mut opts, &c.hp, &x).unwrap();
    assert_eq!(nets.enc.checksum(), enc);
    assert_eq!(nets.f.checksum(), f);
    assert_ne!(nets.dec.checksum(), dec);
}

#[test]
fn adversary_step_with_gan_moves_discriminator() {
    let s = small_splits();
    let mut c = cfg(1.0, 1);
    c.hp.mu1 = 1.0;
    let mut nets = ProtectorNets::<f32>::init(&spec(&s), &c.hp, 1).unwrap();
    let mut opts = Optimizers::new(&nets, &c).unwrap();
    let d0 = nets.disc.as_ref().unwrap().checksum();
    let x = s.private.batch::<f32>(&[0, 1, 2, 3]).images;
    let l = adversary_update_step(&mut nets, &mut opts, &c.hp, &x).unwrap();
    assert!(l.gan_disc.is_some() && l.gan_gen.is_some());
    assert_ne!(nets.disc.as_ref().unwrap().checksum(), d0);
}

#[test]
fn protector_step_freezes_decoder() {
    let s = small_splits();
    let mut c = cfg(1.0, 1);
    c.hp.mu1 = 1.0;
    let mut nets = ProtectorNets::<f32>::init(&spec(&s), &c.hp, 1).unwrap();
    let mut opts = Optimizers::new(&nets, &c).unwrap();
    let (enc, f, dec) = (nets.enc.checksum(), nets.f.checksum(), nets.dec.checksum());
    let d = nets.disc.as_ref().unwrap().checksum();
    let b = s.private.batch::<f32>(&[0, 1, 2, 3]);
    let l = protector_update_step(&mut nets, &mut opts, &c.hp, &b).unwrap();
    assert!(l.pixel.is_some());
    assert_eq!(nets.dec.checksum(), dec);
    assert_eq!(nets.disc.as_ref().unwrap().checksum(), d);
    assert_ne!(nets.enc.checksum(), enc);
    assert_ne!(nets.f.checksum(), f);
}

#[test]
fn zero_alternations_return_initial_parameters() {
    let s = small_splits();
    let c = cfg(1.0, 0);
    let out = alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    let init = ProtectorNets::<f32>::init(&spec(&s), &c.hp, c.seed).unwrap();
    assert_eq!(out.nets.enc.checksum(), init.enc.checksum());
    assert_eq!(out.nets.f.checksum(), init.f.checksum());
    assert_eq!(out.nets.dec.checksum(), init.dec.checksum());
    assert!(out.history.is_empty());
}

#[test]
fn baseline_encoder_ignores_decoder_updates() {
    let s = small_splits();
    let with_dec = cfg(0.0, 12);
    let without = TrainConfig { dec_steps_per_alt: 0, ..with_dec.clone() };
    let a = alternate_train::<f32>(&spec(&s), &with_dec, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    let b = alternate_train::<f32>(&spec(&s), &without, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    assert_eq!(a.nets.enc.checksum(), b.nets.enc.checksum());
    assert_eq!(a.nets.f.checksum(), b.nets.f.checksum());
    assert_eq!(a.history.len(), 24);
    assert_eq!(b.history.len(), 12);
}

#[test]
fn history_is_complete_ordered_and_reproducible() {
    let s = small_splits();
    let mut c = cfg(1.0, 5);
    c.dec_steps_per_alt = 2;
    let a = alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    let b = alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    assert_eq!(a.history.len(), 15);
    assert!(a.history.records.iter().enumerate().all(|(i, r)| r.step == i));
    assert_eq!(a.history.adversary().count(), 10);
    assert_eq!(a.history.records[2].phase, Phase::Protector);
    assert_eq!(a.history, b.history);
    assert_eq!(a.nets.enc.checksum(), b.nets.enc.checksum());
    assert_eq!(a.nets.dec.checksum(), b.nets.dec.checksum());
}

#[derive(Default)]
struct Recorder(Vec<(usize, usize)>);

impl CheckpointSink<f32> for Recorder {
    fn save(&mut self, alt: usize, _: &ProtectorNets<f32>, h: &TrainHistory) -> privshield_core::Result<()> {
        self.0.push((alt, h.len()));
        Ok(())
    }
}

#[test]
fn checkpoints_follow_the_schedule() {
    let s = small_splits();
    let c = TrainConfig { checkpoint_every: 2, ..cfg(0.0, 5) };
    let mut rec = Recorder::default();
    alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut rec).unwrap();
    assert_eq!(rec.0, vec![(2, 4), (4, 8), (5, 10)]);
}

#[test]
fn divergence_is_reported_with_its_step() {
    let s = small_splits();
    let c = TrainConfig { enc_opt: AdamConfig::with_lr(1e30), ..cfg(1.0, 5) };
    let err = alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut NoCheckpoints)
        .unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
}

#[test]
fn decoder_learns_against_frozen_random_encoder() {
    let s = small_splits();
    let c = cfg(0.0, 1);
    let mut nets = ProtectorNets::<f32>::init(&spec(&s), &c.hp, 2).unwrap();
    let mut opts = Optimizers::new(&nets, &c).unwrap();
    let train = s.adversary.full_batch::<f32>().images;
    let held = s.test.full_batch::<f32>().images;
    let loss = |n: &ProtectorNets<f32>| {
        let xhat = n.dec.forward(&n.enc.forward(&held).unwrap()).unwrap();
        pixel_recon_loss(&xhat, &held).unwrap()
    };
    let before = loss(&nets);
    let enc = nets.enc.checksum();
    for step in 0..200 {
        let idx: Vec<usize> = (0..8).map(|i| (step * 8 + i) % train.batch()).collect();
        adversary_update_step(&mut nets, &mut opts, &c.hp, &train.gather(&idx)).unwrap();
    }
    assert!(loss(&nets) < before, "{} vs {before}", loss(&nets));
    assert_eq!(nets.enc.checksum(), enc);
}

#[test]
fn protector_step_ascends_reconstruction_loss() {
    let s = small_splits();
    let c = cfg(1.0, 1);
    let mut nets = ProtectorNets::<f32>::init(&spec(&s), &c.hp, 4).unwrap();
    let mut opts = Optimizers::new(&nets, &c).unwrap();
    let x1 = s.private.full_batch::<f32>();
    // make the decoder competent first
    for step in 0..300 {
        let idx: Vec<usize> = (0..8).map(|i| (step * 8 + i) % x1.images.batch()).collect();
        adversary_update_step(&mut nets, &mut opts, &c.hp, &x1.images.gather(&idx)).unwrap();
    }
    let state = nets.clone();
    let mut deltas = Vec::new();
    for trial in 0..60 {
        let mut n = state.clone();
        let mut o = Optimizers::new(&n, &c).unwrap();
        let idx: Vec<usize> = (0..8).map(|i| (trial * 5 + i * 3) % x1.images.batch()).collect();
        let b = Batch {
            images: x1.images.gather(&idx),
            attributes: x1.attributes.gather(&idx),
            identities: idx.iter().map(|&i| x1.identities[i]).collect(),
        };
        let pixel = |n: &ProtectorNets<f32>| {
            let xhat = n.dec.forward(&n.enc.forward(&b.images).unwrap()).unwrap();
            f64::from(pixel_recon_loss(&xhat, &b.images).unwrap())
        };
        let before = pixel(&n);
        protector_update_step(&mut n, &mut o, &c.hp, &b).unwrap();
        deltas.push(pixel(&n) - before);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!(mean >= 0.0, "mean change {mean}");
}

#[test]
fn perceptual_extractor_stays_frozen() {
    let s = small_splits();
    let mut c = cfg(1.0, 4);
    c.hp.lambda2 = 1.0;
    c.hp.mu2 = 1.0;
    let out = alternate_train::<f32>(&spec(&s), &c, &s.private, &s.adversary, &mut NoCheckpoints).unwrap();
    let g = out.nets.g.expect("perceptual extractor");
    let fresh: Model<f32> = Model::build(NetSpec::Perceptual(spec(&s).perceptual()), 123).unwrap();
    assert_eq!(g.checksum(), fresh.checksum());
    assert!(out.history.records.iter().all(|r| r.phase == Phase::Adversary || r.perceptual.is_some()));
}
