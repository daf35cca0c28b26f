//! Central finite-difference checks of every loss through every network.
//!
//! Each case differentiates one network's parameters (or, for the frozen
//! extractor g, its input) through a short chain of networks and a loss.

#![allow(dead_code)]

use privshield_core::data::ImageShape;
use privshield_core::losses::{
    feature_regression_grad, gan_discriminator_grad, gan_generator_grad,
    identity_cross_entropy_grad, perceptual_grad, pixel_recon_grad, utility_grad, LossGrad,
};
use privshield_core::nets::{
    mirror_decoder_spec, ClassifierSpec, DiscriminatorSpec, EncoderSpec, MapperSpec, Model,
    Activation, Layer, NetSpec, PerceptualSpec, PrivateNetSpec, Trace,
};
use privshield_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so gradients that vanish up to
/// rounding are not divided by zero. The floor grows with the loss value:
/// a central difference of a sum of thousands of terms carries a rounding
/// error of roughly `1e-13 * |loss| / EPS`.
pub const FLOOR: f64 = 1e-6;
pub const FLOOR_PER_LOSS: f64 = 1e-7;
pub const MIN_COORDS: usize = 20;

#[derive(Debug, Clone)]
pub struct PairResult {
    pub loss: &'static str,
    pub network: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl PairResult {
    pub fn ok(&self) -> bool {
        self.max_rel_err < TOL && self.coords >= MIN_COORDS
    }
}

#[derive(Clone, Copy)]
enum Target {
    Params(usize),
    Input,
}

type LossFn<'a> = Box<dyn Fn(&Tensor<f64>) -> LossGrad<f64> + 'a>;

fn forward(models: &[Model<f64>], x: &Tensor<f64>) -> (Vec<Trace<f64>>, Tensor<f64>) {
    let mut traces = Vec::new();
    let mut cur = x.clone();
    for m in models {
        let t = m.net.forward_traced(&m.params, &cur).unwrap();
        cur = t.output().clone();
        traces.push(t);
    }
    (traces, cur)
}

/// Which side of its kink every rectifier input lies on.
fn kink_pattern(models: &[Model<f64>], traces: &[Trace<f64>]) -> Vec<bool> {
    let mut out = Vec::new();
    for (m, t) in models.iter().zip(traces) {
        for (i, layer) in m.net.layers().iter().enumerate() {
            if matches!(layer, Layer::Act(Activation::Relu | Activation::LeakyRelu)) {
                out.extend(t.activations[i].data().iter().map(|&v| v > 0.0));
            }
        }
    }
    out
}

fn chain_value(
    models: &[Model<f64>],
    x: &Tensor<f64>,
    loss: &LossFn,
    loss_kinks: Option<&Model<f64>>,
) -> (f64, Vec<bool>) {
    let (traces, out) = forward(models, x);
    let mut kinks = kink_pattern(models, &traces);
    if let Some(inner) = loss_kinks {
        kinks.extend(model_kinks(inner, &out));
    }
    (loss(&out).value, kinks)
}

fn model_kinks(m: &Model<f64>, x: &Tensor<f64>) -> Vec<bool> {
    let t = m.net.forward_traced(&m.params, x).unwrap();
    kink_pattern(core::slice::from_ref(m), core::slice::from_ref(&t))
}

fn flatten(p: &privshield_core::nets::ModelParams<f64>) -> Vec<f64> {
    p.params.iter().flat_map(|a| a.data.iter().copied()).collect()
}

fn chain_grad(models: &[Model<f64>], x: &Tensor<f64>, loss: &LossFn, target: Target) -> Vec<f64> {
    let (traces, out) = forward(models, x);
    let mut g = loss(&out).grad;
    for i in (0..models.len()).rev() {
        let want = matches!(target, Target::Params(t) if t == i);
        let (gin, pg) = models[i].net.backward(&models[i].params, &traces[i], &g, want).unwrap();
        if want {
            return flatten(&pg.unwrap());
        }
        g = gin;
    }
    g.into_data()
}

fn rel(a: f64, n: f64, loss: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR).max(FLOOR_PER_LOSS * loss.abs())
}

struct Checker {
    rng: ChaCha8Rng,
    coords: usize,
    results: Vec<PairResult>,
}

impl Checker {
    fn check(
        &mut self,
        loss: &'static str,
        network: &str,
        models: &[Model<f64>],
        x: &Tensor<f64>,
        target: Target,
        value: &dyn Fn(&[Model<f64>], &Tensor<f64>) -> (f64, Vec<bool>),
        analytic: Vec<f64>,
    ) {
        let at = value(models, x).0;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut tries = 0;
        while checked < self.coords && tries < 50 * self.coords {
            tries += 1;
            let c = self.rng.gen_range(0..analytic.len());
            let mut ms = models.to_vec();
            let mut xs = x.clone();
            let nudge = |ms: &mut [Model<f64>], xs: &mut Tensor<f64>, d: f64| match target {
                Target::Params(t) => {
                    let (a, o) = ms[t].params.locate(c);
                    ms[t].params.params[a].data[o] += d;
                }
                Target::Input => xs.data_mut()[c] += d,
            };
            nudge(&mut ms, &mut xs, EPS);
            let (up, up_kinks) = value(&ms, &xs);
            nudge(&mut ms, &mut xs, -2.0 * EPS);
            let (down, down_kinks) = value(&ms, &xs);
            // the difference quotient straddles a rectifier kink
            if up_kinks != down_kinks {
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * EPS);
            worst = worst.max(rel(analytic[c], numeric, at));
        }
        self.results.push(PairResult {
            loss,
            network: network.to_string(),
            coords: checked,
            max_rel_err: worst,
        });
    }

    fn chain(
        &mut self,
        loss_name: &'static str,
        network: &str,
        models: &[Model<f64>],
        x: &Tensor<f64>,
        target: Target,
        loss: LossFn,
    ) {
        self.chain_through(loss_name, network, models, x, target, loss, None);
    }

    /// Like `chain`, with a network used inside the loss whose kinks also
    /// disqualify a coordinate.
    #[allow(clippy::too_many_arguments)]
    fn chain_through(
        &mut self,
        loss_name: &'static str,
        network: &str,
        models: &[Model<f64>],
        x: &Tensor<f64>,
        target: Target,
        loss: LossFn,
        inner: Option<&Model<f64>>,
    ) {
        let analytic = chain_grad(models, x, &loss, target);
        let value = |ms: &[Model<f64>], xs: &Tensor<f64>| chain_value(ms, xs, &loss, inner);
        self.check(loss_name, network, models, x, target, &value, analytic);
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn bits(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect()).unwrap()
}

/// Regression target close to `out`, which keeps loss values small enough
/// for the difference quotient not to drown in rounding error.
fn near(rng: &mut ChaCha8Rng, out: &Tensor<f64>) -> Tensor<f64> {
    out.map(|v| v + rng.gen_range(-0.3..0.3))
}

/// Runs the whole suite with `coords` random coordinates per pair.
pub fn run_suite(seed: u64, coords: usize) -> Vec<PairResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ImageShape::square(16, 3);
    let n = 3;
    let k = 4;
    let classes = 5;
    let build = |spec: NetSpec, s: u64| Model::<f64>::build(spec, s).unwrap();

    let enc_spec = EncoderSpec::desk(shape);
    let taps: Vec<String> = enc_spec.stage_names().iter().map(|s| s.to_string()).collect();
    let enc = build(NetSpec::Encoder(enc_spec.clone()), 1);
    let dec = build(NetSpec::Decoder(mirror_decoder_spec(&enc_spec, "fc").unwrap()), 2);
    let f = build(NetSpec::Classifier(ClassifierSpec { encoder: enc_spec.clone(), hidden: 12, k }), 3);
    let d = build(NetSpec::Discriminator(DiscriminatorSpec::desk(shape)), 4);
    let g = build(NetSpec::Perceptual(PerceptualSpec::desk(shape)), 0);
    let c = build(NetSpec::Private(PrivateNetSpec { feature_dim: 10, ..PrivateNetSpec::desk(shape, classes) }), 5);
    let m = build(NetSpec::Mapper(MapperSpec { input: vec![enc_spec.latent_dim], hidden: 12, output_dim: 10 }), 6);

    let x = uniform(&mut rng, &[n, 3, 16, 16], 0.0, 1.0);
    let x_other = uniform(&mut rng, &[n, 3, 16, 16], 0.0, 1.0);
    let z = uniform(&mut rng, &[n, enc_spec.latent_dim], -1.5, 1.5);
    let ids: Vec<usize> = (0..n).map(|i| i % classes).collect();

    let mut ck = Checker { rng: rng.clone(), coords, results: Vec::new() };

    // Every network with its input, the models to chain and the target.
    struct Host {
        name: String,
        models: Vec<Model<f64>>,
        input: Tensor<f64>,
        target: Target,
    }
    let mut hosts = vec![
        Host { name: "encoder".into(), models: vec![enc.clone()], input: x.clone(), target: Target::Params(0) },
        Host { name: "decoder".into(), models: vec![dec.clone()], input: z.clone(), target: Target::Params(0) },
        Host { name: "classifier".into(), models: vec![f.clone()], input: z.clone(), target: Target::Params(0) },
        Host { name: "discriminator".into(), models: vec![d.clone()], input: x.clone(), target: Target::Params(0) },
        Host { name: "perceptual(input)".into(), models: vec![g.clone()], input: x.clone(), target: Target::Input },
        Host { name: "private".into(), models: vec![c.clone()], input: x.clone(), target: Target::Params(0) },
        Host { name: "mapper".into(), models: vec![m.clone()], input: z.clone(), target: Target::Params(0) },
    ];
    for tap in &taps {
        let spec = enc_spec.clone().with_tap(tap);
        let e = build(NetSpec::Encoder(spec.clone()), 11);
        let dd = build(NetSpec::Decoder(mirror_decoder_spec(&spec, tap).unwrap()), 12);
        let ff = build(NetSpec::Classifier(ClassifierSpec { encoder: spec, hidden: 12, k }), 13);
        hosts.push(Host {
            name: format!("encoder@{tap}>decoder"),
            models: vec![e.clone(), dd],
            input: x.clone(),
            target: Target::Params(0),
        });
        hosts.push(Host {
            name: format!("encoder@{tap}>classifier"),
            models: vec![e, ff],
            input: x.clone(),
            target: Target::Params(0),
        });
    }

    // Losses that accept any real-valued output.
    for h in &hosts {
        let out = forward(&h.models, &h.input).1;
        let os = out.shape().to_vec();
        let t = near(&mut ck.rng, &out);
        ck.chain("pixel", &h.name, &h.models, &h.input, h.target,
            Box::new(move |o| pixel_recon_grad(o, &t).unwrap()));
        let t = near(&mut ck.rng, &out);
        ck.chain("feature_regression", &h.name, &h.models, &h.input, h.target,
            Box::new(move |o| feature_regression_grad(o, &t).unwrap()));
        let y = bits(&mut ck.rng, &os);
        ck.chain("utility", &h.name, &h.models, &h.input, h.target,
            Box::new(move |o| utility_grad(o, &y).unwrap()));
        let per: usize = os[1..].iter().product();
        if per >= 2 {
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 1) % per).collect();
            ck.chain("identity_cross_entropy", &h.name, &h.models, &h.input, h.target,
                Box::new(move |o| {
                    let flat = o.clone().flatten();
                    let lg = identity_cross_entropy_grad(&flat, &labels).unwrap();
                    LossGrad { value: lg.value, grad: lg.grad.reshape(o.shape()).unwrap() }
                }));
        }
    }
    let logits_ids = ids.clone();
    ck.chain("identity_cross_entropy", "private(ids)", &[c.clone()], &x, Target::Params(0),
        Box::new(move |o| identity_cross_entropy_grad(o, &logits_ids).unwrap()));

    // Image-valued losses: perceptual distance through g, and the GAN terms
    // through D.
    let image_hosts = [
        ("decoder", vec![dec.clone()], z.clone(), Target::Params(0)),
        ("encoder>decoder", vec![enc.clone(), dec.clone()], x.clone(), Target::Params(0)),
    ];
    for (name, models, input, target) in &image_hosts {
        let gg = g.clone();
        let xr = near(&mut ck.rng, &forward(models, input).1);
        ck.chain_through("perceptual", name, models, input, *target,
            Box::new(move |o| perceptual_grad(&gg, o, &xr).unwrap()), Some(&g));
        let mut with_d = models.clone();
        with_d.push(d.clone());
        ck.chain("gan_generator", &format!("{name}>discriminator"), &with_d, input, *target,
            Box::new(|o| gan_generator_grad(o)));
        let d_real = d.forward(&x_other).unwrap();
        ck.chain("gan_discriminator", &format!("{name}>discriminator"), &with_d, input, *target,
            Box::new(move |o| {
                let (value, _, g_fake) = gan_discriminator_grad(&d_real, o).unwrap();
                LossGrad { value, grad: g_fake }
            }));
    }
    {
        let gg = g.clone();
        let xr = x_other.clone();
        ck.chain_through("perceptual", "perceptual(input)", &[], &x, Target::Input,
            Box::new(move |o| perceptual_grad(&gg, o, &xr).unwrap()), Some(&g));
    }
    for tap in &taps {
        let spec = enc_spec.clone().with_tap(tap);
        let e = build(NetSpec::Encoder(spec.clone()), 21);
        let dd = build(NetSpec::Decoder(mirror_decoder_spec(&spec, tap).unwrap()), 22);
        let gg = g.clone();
        let xr = x.clone();
        ck.chain_through("perceptual", &format!("encoder@{tap}>decoder"), &[e, dd], &x, Target::Params(0),
            Box::new(move |o| perceptual_grad(&gg, o, &xr).unwrap()), Some(&g));
    }
    ck.chain("gan_generator", "discriminator", &[d.clone()], &x, Target::Params(0),
        Box::new(|o| gan_generator_grad(o)));

    // Discriminator parameters see both the real and the fake batch.
    {
        let fake = dec.forward(&z).unwrap();
        let real = x.clone();
        let tr = d.net.forward_traced(&d.params, &real).unwrap();
        let tf = d.net.forward_traced(&d.params, &fake).unwrap();
        let (_, gr, gf) = gan_discriminator_grad(tr.output(), tf.output()).unwrap();
        let (_, pr) = d.net.backward(&d.params, &tr, &gr, true).unwrap();
        let (_, pf) = d.net.backward(&d.params, &tf, &gf, true).unwrap();
        let analytic: Vec<f64> =
            flatten(&pr.unwrap()).iter().zip(flatten(&pf.unwrap())).map(|(a, b)| a + b).collect();
        let value = |ms: &[Model<f64>], xs: &Tensor<f64>| {
            let dr = ms[0].forward(&real).unwrap();
            let df = ms[0].forward(xs).unwrap();
            let mut kinks = model_kinks(&ms[0], &real);
            kinks.extend(model_kinks(&ms[0], xs));
            (gan_discriminator_grad(&dr, &df).unwrap().0, kinks)
        };
        ck.check("gan_discriminator", "discriminator", &[d.clone()], &fake, Target::Params(0), &value, analytic);
    }
    ck.results
}
