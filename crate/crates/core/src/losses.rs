//! Loss terms of the adversary and protector objectives.
//!
//! Each `*_grad` function returns the value together with its gradient with
//! respect to the first (predicted) argument, ready to be fed into
//! [`Network::backward`](crate::nets::Network::backward).
//!
//! Norm convention: reconstruction and perceptual distances are the
//! unnormalized squared Euclidean norm of each sample, averaged over the batch.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{perceptual_taps, Model};
use crate::real::Real;
use crate::tensor::Tensor;

/// Discriminator outputs are clamped to `[GAN_EPS, 1 - GAN_EPS]` inside logs.
pub const GAN_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

/// Protector weights (λ₁, λ₂) and adversary weights (μ₁, μ₂).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Weight of the negative pixel reconstruction loss.
    #[serde(default)]
    pub lambda1: f64,
    /// Weight of the negative perceptual loss.
    #[serde(default)]
    pub lambda2: f64,
    /// Weight of the GAN term for the decoder.
    #[serde(default)]
    pub mu1: f64,
    /// Weight of the perceptual term for the decoder.
    #[serde(default)]
    pub mu2: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("mu1", self.mu1), ("mu2", self.mu2)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn batch_scale<T: Real>(x: &Tensor<T>) -> T {
    T::one() / T::of_count(x.batch().max(1))
}

/// Mean over the batch of `||x̂ - x||²`.
pub fn pixel_recon_loss<T: Real>(xhat: &Tensor<T>, x: &Tensor<T>) -> Result<T> {
    Ok(pixel_recon_grad(xhat, x)?.value)
}

pub fn pixel_recon_grad<T: Real>(xhat: &Tensor<T>, x: &Tensor<T>) -> Result<LossGrad<T>> {
    xhat.expect_same_shape("pixel reconstruction loss", x)?;
    squared_distance(xhat, x)
}

fn squared_distance<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<LossGrad<T>> {
    let s = batch_scale(a);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(a.len());
    for (&p, &q) in a.data().iter().zip(b.data()) {
        let d = p - q;
        value = value + d * d;
        grad.push(two * d * s);
    }
    Ok(LossGrad { value: value * s, grad: Tensor::from_vec(a.shape(), grad)? })
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let eps = T::lit(GAN_EPS);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

/// Mean of `log(1 - D(X̂))`; minimized by the decoder.
pub fn gan_generator_loss<T: Real>(d_fake: &Tensor<T>) -> T {
    gan_generator_grad(d_fake).value
}

pub fn gan_generator_grad<T: Real>(d_fake: &Tensor<T>) -> LossGrad<T> {
    let s = batch_scale(d_fake);
    let mut value = T::zero();
    let grad = d_fake.map(|p| {
        let (c, clamped) = clamp_prob(p);
        value = value + (T::one() - c).ln();
        if clamped {
            T::zero()
        } else {
            -s / (T::one() - c)
        }
    });
    LossGrad { value: value * s, grad }
}

/// Mean of `log(1 - D(X)) + log(D(X̂))`; maximized by the discriminator.
/// The discriminator is thus trained to score reconstructions high and real
/// images low.
pub fn gan_discriminator_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<T> {
    Ok(gan_discriminator_grad(d_real, d_fake)?.0)
}

/// Value and gradients with respect to `(D(X), D(X̂))`.
pub fn gan_discriminator_grad<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    d_real.expect_same_shape("discriminator loss", d_fake)?;
    let s = batch_scale(d_real);
    let mut value = T::zero();
    let g_real = d_real.map(|p| {
        let (c, clamped) = clamp_prob(p);
        value = value + (T::one() - c).ln();
        if clamped {
            T::zero()
        } else {
            -s / (T::one() - c)
        }
    });
    let g_fake = d_fake.map(|p| {
        let (c, clamped) = clamp_prob(p);
        value = value + c.ln();
        if clamped {
            T::zero()
        } else {
            s / c
        }
    });
    Ok((value * s, g_real, g_fake))
}

/// Mean over the batch of summed squared distances between matching feature
/// maps.
pub fn perceptual_distance<T: Real>(feat_hat: &[Tensor<T>], feat: &[Tensor<T>]) -> Result<T> {
    Ok(perceptual_distance_grad(feat_hat, feat)?.0)
}

/// Value and per-tap gradients with respect to `feat_hat`.
pub fn perceptual_distance_grad<T: Real>(
    feat_hat: &[Tensor<T>],
    feat: &[Tensor<T>],
) -> Result<(T, Vec<Tensor<T>>)> {
    if feat_hat.len() != feat.len() {
        return Err(Error::Arity {
            context: "perceptual taps",
            expected: feat.len(),
            found: feat_hat.len(),
        });
    }
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(feat.len());
    for (a, b) in feat_hat.iter().zip(feat) {
        a.expect_same_shape("perceptual features", b)?;
        let lg = squared_distance(a, b)?;
        value = value + lg.value;
        grads.push(lg.grad);
    }
    Ok((value, grads))
}

/// Mean over the batch of `||g(X̂) - g(X)||²` summed over g's tapped stages.
pub fn perceptual_loss<T: Real>(g: &Model<T>, xhat: &Tensor<T>, x: &Tensor<T>) -> Result<T> {
    Ok(perceptual_grad(g, xhat, x)?.value)
}

/// Perceptual loss with its gradient with respect to `xhat`. g stays frozen.
pub fn perceptual_grad<T: Real>(g: &Model<T>, xhat: &Tensor<T>, x: &Tensor<T>) -> Result<LossGrad<T>> {
    xhat.expect_same_shape("perceptual loss", x)?;
    let taps = perceptual_taps(g)?;
    let target = g.net.forward_traced(&g.params, x)?;
    let trace = g.net.forward_traced(&g.params, xhat)?;
    let ends: Vec<usize> = taps.iter().map(|t| g.net.stage_end(t)).collect::<Result<_>>()?;
    let hat: Vec<Tensor<T>> = ends.iter().map(|&e| trace.activations[e].clone()).collect();
    let real: Vec<Tensor<T>> = ends.iter().map(|&e| target.activations[e].clone()).collect();
    let (value, grads) = perceptual_distance_grad(&hat, &real)?;
    let injections: Vec<(usize, &Tensor<T>)> = ends.iter().copied().zip(grads.iter()).collect();
    let (grad, _) = g.net.backward_multi(&g.params, &trace, &injections, false)?;
    Ok(LossGrad { value, grad })
}

/// Mean per-attribute binary cross entropy computed from logits.
pub fn utility_loss<T: Real>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    Ok(utility_grad(logits, labels)?.value)
}

pub fn utility_grad<T: Real>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<LossGrad<T>> {
    if logits.sample_len() != labels.sample_len() {
        return Err(Error::Arity {
            context: "utility loss",
            expected: labels.sample_len(),
            found: logits.sample_len(),
        });
    }
    logits.expect_same_shape("utility loss", labels)?;
    let s = T::one() / T::of_count(logits.len().max(1));
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.data().iter().zip(labels.data()) {
        // max(z, 0) - z*y + log(1 + exp(-|z|))
        value = value + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        let p = T::one() / (T::one() + (-z).exp());
        grad.push((p - y) * s);
    }
    Ok(LossGrad { value: value * s, grad: Tensor::from_vec(logits.shape(), grad)? })
}

/// `pixel + μ₁·gan_gen + μ₂·perc`; minimized over the decoder.
pub fn adversary_objective<T: Real>(hp: &HyperParams, pixel: T, gan_gen: T, perc: T) -> T {
    pixel + T::lit(hp.mu1) * gan_gen + T::lit(hp.mu2) * perc
}

/// `utility - λ₁·pixel - λ₂·perc`; minimized over encoder and classifier.
pub fn protector_objective<T: Real>(hp: &HyperParams, utility: T, pixel: T, perc: T) -> T {
    utility - T::lit(hp.lambda1) * pixel - T::lit(hp.lambda2) * perc
}

/// Softmax cross entropy over identity classes, averaged over the batch.
/// Trains the private network C.
pub fn identity_cross_entropy_grad<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossGrad<T>> {
    if logits.batch() != labels.len() {
        return Err(Error::Arity {
            context: "identity labels",
            expected: logits.batch(),
            found: labels.len(),
        });
    }
    let classes = logits.sample_len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Arity { context: "identity label range", expected: classes, found: bad + 1 });
    }
    let s = batch_scale(logits);
    let mut value = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.sample(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        value = value + z.ln() + m - row[label];
        let g = grad.sample_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - m).exp() / z;
            g[j] = (p - if j == label { T::one() } else { T::zero() }) * s;
        }
    }
    Ok(LossGrad { value: value * s, grad })
}

/// Mean over the batch of `||M(Z) - C(X)||²`, the feature-level attack loss.
pub fn feature_regression_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossGrad<T>> {
    pred.expect_same_shape("feature regression", target)?;
    squared_distance(pred, target)
}
