use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::layers::Layer;
use super::params::{ModelParams, Param};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// A feed-forward stack of layers grouped into named stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Stage label for each layer.
    stages: Vec<String>,
    /// Per-sample activation shape after every layer.
    shapes: Vec<Vec<usize>>,
    /// Index into the parameter list for every parametric layer.
    param_index: Vec<Option<usize>>,
    frozen: bool,
}

/// Activations recorded by a forward pass: `[input, after layer 0, ...]`.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub activations: Vec<Tensor<T>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }
}

#[derive(Debug, Default)]
pub struct NetworkBuilder {
    layers: Vec<(String, Layer)>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, stage: &str, layer: Layer) -> Self {
        self.layers.push((stage.to_string(), layer));
        self
    }

    pub fn extend(mut self, other: NetworkBuilder) -> Self {
        self.layers.extend(other.layers);
        self
    }

    pub fn build(self, name: &str, input_shape: &[usize]) -> Result<Network> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = input_shape.to_vec();
        let mut param_index = Vec::with_capacity(self.layers.len());
        let mut next_param = 0;
        for (stage, layer) in &self.layers {
            current = layer.output_shape(&current).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "network `{name}` stage `{stage}`: layer {layer:?} cannot take input {current:?}"
                ))
            })?;
            if current.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "network `{name}` stage `{stage}` produces an empty activation"
                )));
            }
            shapes.push(current.clone());
            if layer.has_params() {
                param_index.push(Some(next_param));
                next_param += 1;
            } else {
                param_index.push(None);
            }
        }
        let (stages, layers) = self.layers.into_iter().unzip();
        Ok(Network {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            stages,
            shapes,
            param_index,
            frozen: false,
        })
    }
}

impl Network {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    /// Stage names in order, without repeats.
    pub fn stage_names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.stages {
            if out.last() != Some(&s.as_str()) {
                out.push(s);
            }
        }
        out
    }

    /// Number of layers up to and including the last layer of `stage`.
    pub fn stage_end(&self, stage: &str) -> Result<usize> {
        self.stages
            .iter()
            .rposition(|s| s == stage)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownStage(stage.to_string()))
    }

    /// Per-sample activation shape at the end of `stage`.
    pub fn stage_shape(&self, stage: &str) -> Result<&[usize]> {
        Ok(&self.shapes[self.stage_end(stage)? - 1])
    }

    /// Fan-in scaled uniform initialization: every weight and bias is drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<T: Real>(&self, seed: u64) -> ModelParams<T> {
        let mut r = rng::rng(rng::derive(seed, &self.name, 0));
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((wshape, bshape, fan_in)) = layer.param_shapes() else { continue };
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let stage = &self.stages[i];
            let same_stage = self.layers[..i]
                .iter()
                .zip(&self.stages)
                .filter(|(l, s)| l.has_params() && *s == stage)
                .count();
            let prefix = if same_stage == 0 { stage.clone() } else { format!("{stage}.{same_stage}") };
            for (suffix, shape) in [("weight", wshape), ("bias", bshape)] {
                let len = shape.iter().product();
                let data = (0..len).map(|_| T::lit(r.gen_range(-bound..bound))).collect();
                params.push(Param { name: format!("{prefix}.{suffix}"), shape, data });
            }
        }
        ModelParams { init_seed: seed, params }
    }

    fn layer_params<'a, T: Real>(
        &self,
        params: &'a ModelParams<T>,
        layer: usize,
    ) -> Option<(&'a [T], &'a [T])> {
        self.param_index[layer].map(|p| {
            (params.params[2 * p].data.as_slice(), params.params[2 * p + 1].data.as_slice())
        })
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.sample_shape() != self.input_shape.as_slice() {
            let mut expected = vec![x.batch()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Shape { context: "network input", expected, found: x.shape().to_vec() });
        }
        Ok(())
    }

    pub fn check_params<T: Real>(&self, params: &ModelParams<T>) -> Result<()> {
        let expected = self.param_index.iter().flatten().count() * 2;
        if params.params.len() != expected {
            return Err(Error::Params(format!(
                "network `{}` expects {expected} arrays, found {}",
                self.name,
                params.params.len()
            )));
        }
        Ok(())
    }

    /// Runs the first `end` layers.
    fn run<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, end: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.check_params(params)?;
        let mut cur = x.clone();
        for i in 0..end {
            cur = self.layers[i].forward(&cur, self.layer_params(params, i));
        }
        Ok(cur)
    }

    pub fn forward<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(params, x, self.layers.len())
    }

    /// Activations at the end of `stage`.
    pub fn forward_to<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        stage: &str,
    ) -> Result<Tensor<T>> {
        self.run(params, x, self.stage_end(stage)?)
    }

    pub fn forward_traced<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        self.check_params(params)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let next = self.layers[i].forward(&activations[i], self.layer_params(params, i));
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Back-propagates gradients injected at activation indices (`0` is the
    /// input, `i + 1` the output of layer `i`). Returns the input gradient and,
    /// when `want_params` is set, the parameter gradients.
    pub fn backward_multi<T: Real>(
        &self,
        params: &ModelParams<T>,
        trace: &Trace<T>,
        injections: &[(usize, &Tensor<T>)],
        want_params: bool,
    ) -> Result<(Tensor<T>, Option<ModelParams<T>>)> {
        if want_params && self.frozen {
            return Err(Error::NotDifferentiable(self.name.clone()));
        }
        let top = injections.iter().map(|(i, _)| *i).max().unwrap_or(0);
        let mut grads = want_params.then(|| params.zeros_like());
        let mut g = Tensor::zeros(trace.activations[top].shape());
        for i in (0..top).rev() {
            for (at, inj) in injections {
                if *at == i + 1 {
                    inj.expect_same_shape("injected gradient", &trace.activations[i + 1])?;
                    g.add_assign(inj);
                }
            }
            let pg = match (&mut grads, self.param_index[i]) {
                (Some(gs), Some(p)) => {
                    let (a, b) = gs.params.split_at_mut(2 * p + 1);
                    Some((a[2 * p].data.as_mut_slice(), b[0].data.as_mut_slice()))
                }
                _ => None,
            };
            g = self.layers[i].backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &g,
                self.layer_params(params, i),
                pg,
            );
        }
        for (at, inj) in injections {
            if *at == 0 {
                g.add_assign(inj);
            }
        }
        Ok((g, grads))
    }

    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        want_params: bool,
    ) -> Result<(Tensor<T>, Option<ModelParams<T>>)> {
        grad_out.expect_same_shape("output gradient", trace.output())?;
        self.backward_multi(params, trace, &[(self.layers.len(), grad_out)], want_params)
    }

    /// Value and parameter gradient of `loss(forward(x))`. `loss` returns the
    /// scalar and its gradient with respect to the network output.
    pub fn gradient<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        loss: impl FnOnce(&Tensor<T>) -> Result<(T, Tensor<T>)>,
    ) -> Result<(T, ModelParams<T>)> {
        if self.frozen {
            return Err(Error::NotDifferentiable(self.name.clone()));
        }
        let trace = self.forward_traced(params, x)?;
        let (value, grad_out) = loss(trace.output())?;
        let (_, grads) = self.backward(params, &trace, &grad_out, true)?;
        Ok((value, grads.expect("parameter gradients requested")))
    }
}
