//! Adaptive-moment gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Model, ModelParams};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: beta1(), beta2: beta2(), eps: eps() }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    /// Fails for frozen networks, which have no trainable gradient.
    pub fn new(model: &Model<T>, cfg: AdamConfig) -> Result<Self> {
        if model.net.is_frozen() {
            return Err(Error::NotDifferentiable(model.net.name().into()));
        }
        cfg.validate()?;
        Ok(Adam { cfg, m: model.params.zeros_like(), v: model.params.zeros_like(), t: 0 })
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.t += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        let lr = T::lit(self.cfg.lr);
        let eps = T::lit(self.cfg.eps);
        for (((p, g), m), v) in params
            .params
            .iter_mut()
            .zip(&grads.params)
            .zip(self.m.params.iter_mut())
            .zip(self.v.params.iter_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] = p.data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
