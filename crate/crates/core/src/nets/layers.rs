//! Layer kernels. Every layer maps a batch tensor to a batch tensor and knows
//! how to push an output gradient back to its input and its parameters.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::real::{axpy, dot, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

/// Negative slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu => {
                if v > T::zero() {
                    v
                } else {
                    v * T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub hin: usize,
    pub win: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.hin + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.win + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Weight `[cout, cin * k * k]`, bias `[cout]`.
    Conv(ConvGeom),
    /// Weight `[dout, din]`, bias `[dout]`.
    Linear { din: usize, dout: usize },
    /// Nearest-neighbour resize of `[c, hin, win]` to `[c, hout, wout]`.
    Resize { channels: usize, hin: usize, win: usize, hout: usize, wout: usize },
    Act(Activation),
    Flatten,
    Reshape(Vec<usize>),
    /// Per-sample rescaling to Euclidean norm `sqrt(d)`.
    Normalize,
}

const NORM_DELTA: f64 = 1e-8;

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Linear { .. })
    }

    /// `(weight shape, bias shape, fan_in)` for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match self {
            Layer::Conv(g) => Some((vec![g.cout, g.patch_len()], vec![g.cout], g.patch_len())),
            Layer::Linear { din, dout } => Some((vec![*dout, *din], vec![*dout], *din)),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let len: usize = input.iter().product();
        match self {
            Layer::Conv(g) => {
                if input != [g.cin, g.hin, g.win] || g.hin + 2 * g.pad < g.kernel {
                    return None;
                }
                let (h, w) = g.out_hw();
                Some(vec![g.cout, h, w])
            }
            Layer::Linear { din, dout } => (input == [*din]).then(|| vec![*dout]),
            Layer::Resize { channels, hin, win, hout, wout } => {
                (input == [*channels, *hin, *win]).then(|| vec![*channels, *hout, *wout])
            }
            Layer::Act(_) | Layer::Normalize => Some(input.to_vec()),
            Layer::Flatten => Some(vec![len]),
            Layer::Reshape(s) => (s.iter().product::<usize>() == len).then(|| s.clone()),
        }
    }

    /// Forward pass. `params` is `Some((weight, bias))` for parametric layers.
    pub fn forward<T: Real>(&self, x: &Tensor<T>, params: Option<(&[T], &[T])>) -> Tensor<T> {
        let n = x.batch();
        match self {
            Layer::Conv(g) => {
                let (w, b) = params.expect("conv parameters");
                conv_forward(g, x, w, b)
            }
            Layer::Linear { din, dout } => {
                let (w, b) = params.expect("linear parameters");
                let mut out = Tensor::zeros(&[n, *dout]);
                for i in 0..n {
                    let xi = &x.data()[i * din..(i + 1) * din];
                    let yi = out.sample_mut(i);
                    for o in 0..*dout {
                        yi[o] = b[o] + dot(&w[o * din..(o + 1) * din], xi);
                    }
                }
                out
            }
            Layer::Resize { channels, hin, win, hout, wout } => {
                let mut out = Tensor::zeros(&[n, *channels, *hout, *wout]);
                let map = resize_map(*hin, *win, *hout, *wout);
                for i in 0..n {
                    let xi = x.sample(i);
                    let yi = out.sample_mut(i);
                    for c in 0..*channels {
                        let (src, dst) = (c * hin * win, c * hout * wout);
                        for (j, &m) in map.iter().enumerate() {
                            yi[dst + j] = xi[src + m];
                        }
                    }
                }
                out
            }
            Layer::Act(a) => x.map(|v| a.apply(v)),
            Layer::Normalize => {
                let mut out = x.clone();
                let d = x.sample_len();
                for i in 0..n {
                    let xi = out.sample_mut(i);
                    let s = T::of_count(d).sqrt() / norm(xi);
                    xi.iter_mut().for_each(|v| *v = *v * s);
                }
                out
            }
            Layer::Flatten => x.clone().flatten(),
            Layer::Reshape(s) => {
                let mut shape = vec![n];
                shape.extend_from_slice(s);
                x.clone().reshape(&shape).expect("reshape validated at build")
            }
        }
    }

    /// Backward pass given the layer input `x`, output `y` and output gradient.
    /// Returns the input gradient; accumulates parameter gradients into
    /// `param_grads` when given.
    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        grad_out: &Tensor<T>,
        params: Option<(&[T], &[T])>,
        param_grads: Option<(&mut [T], &mut [T])>,
    ) -> Tensor<T> {
        let n = x.batch();
        match self {
            Layer::Conv(g) => {
                let (w, _) = params.expect("conv parameters");
                conv_backward(g, x, grad_out, w, param_grads)
            }
            Layer::Linear { din, dout } => {
                let (w, _) = params.expect("linear parameters");
                let mut gx = Tensor::zeros(x.shape());
                let mut pg = param_grads;
                for i in 0..n {
                    let xi = &x.data()[i * din..(i + 1) * din];
                    let gy = grad_out.sample(i);
                    if let Some((gw, gb)) = pg.as_mut() {
                        for o in 0..*dout {
                            axpy(gy[o], xi, &mut gw[o * din..(o + 1) * din]);
                            gb[o] = gb[o] + gy[o];
                        }
                    }
                    let gxi = &mut gx.data_mut()[i * din..(i + 1) * din];
                    for o in 0..*dout {
                        axpy(gy[o], &w[o * din..(o + 1) * din], gxi);
                    }
                }
                gx
            }
            Layer::Resize { channels, hin, win, hout, wout } => {
                let mut gx = Tensor::zeros(x.shape());
                let map = resize_map(*hin, *win, *hout, *wout);
                for i in 0..n {
                    let gy = grad_out.sample(i);
                    let gxi = gx.sample_mut(i);
                    for c in 0..*channels {
                        let (src, dst) = (c * hin * win, c * hout * wout);
                        for (j, &m) in map.iter().enumerate() {
                            gxi[src + m] = gxi[src + m] + gy[dst + j];
                        }
                    }
                }
                gx
            }
            Layer::Act(a) => {
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(grad_out.data())
                    .map(|((&xv, &yv), &g)| g * a.derivative(xv, yv))
                    .collect();
                Tensor::from_vec(x.shape(), data).expect("same shape")
            }
            Layer::Normalize => {
                let mut gx = grad_out.clone();
                let d = x.sample_len();
                for i in 0..n {
                    let xi = x.sample(i);
                    let r = norm(xi);
                    let proj = dot(xi, grad_out.sample(i)) / (r * r);
                    let s = T::of_count(d).sqrt() / r;
                    for (g, &v) in gx.sample_mut(i).iter_mut().zip(xi) {
                        *g = s * (*g - v * proj);
                    }
                }
                gx
            }
            Layer::Flatten | Layer::Reshape(_) => {
                grad_out.clone().reshape(x.shape()).expect("same element count")
            }
        }
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    (dot(x, x) + T::lit(NORM_DELTA)).sqrt()
}

fn resize_map(hin: usize, win: usize, hout: usize, wout: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(hout * wout);
    for y in 0..hout {
        let sy = y * hin / hout;
        for x in 0..wout {
            map.push(sy * win + x * win / wout);
        }
    }
    map
}

/// Unfolds one `[cin, hin, win]` sample into `col[patch][pixel]`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let npix = oh * ow;
    let k = g.kernel;
    for c in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * npix..(row + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.hin
                            && (ix as usize) < g.win
                        {
                            x[(c * g.hin + iy as usize) * g.win + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], gx: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let npix = oh * ow;
    let k = g.kernel;
    for c in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * npix..(row + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.hin {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.win {
                            let at = (c * g.hin + iy as usize) * g.win + ix as usize;
                            gx[at] = gx[at] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &Tensor<T>, w: &[T], b: &[T]) -> Tensor<T> {
    let n = x.batch();
    let (oh, ow) = g.out_hw();
    let npix = oh * ow;
    let plen = g.patch_len();
    let mut out = Tensor::zeros(&[n, g.cout, oh, ow]);
    let mut col = vec![T::zero(); plen * npix];
    for i in 0..n {
        im2col(g, x.sample(i), &mut col);
        let yi = out.sample_mut(i);
        for co in 0..g.cout {
            let dst = &mut yi[co * npix..(co + 1) * npix];
            dst.iter_mut().for_each(|v| *v = b[co]);
            let wrow = &w[co * plen..(co + 1) * plen];
            for (p, &wv) in wrow.iter().enumerate() {
                axpy(wv, &col[p * npix..(p + 1) * npix], dst);
            }
        }
    }
    out
}

fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    w: &[T],
    mut param_grads: Option<(&mut [T], &mut [T])>,
) -> Tensor<T> {
    let n = x.batch();
    let (oh, ow) = g.out_hw();
    let npix = oh * ow;
    let plen = g.patch_len();
    let mut gx = Tensor::zeros(x.shape());
    let mut col = vec![T::zero(); plen * npix];
    let mut gcol = vec![T::zero(); plen * npix];
    for i in 0..n {
        let gy = grad_out.sample(i);
        if let Some((gw, gb)) = param_grads.as_mut() {
            im2col(g, x.sample(i), &mut col);
            for co in 0..g.cout {
                let gyc = &gy[co * npix..(co + 1) * npix];
                gb[co] = gb[co] + gyc.iter().copied().sum::<T>();
                let gwrow = &mut gw[co * plen..(co + 1) * plen];
                for (p, gwv) in gwrow.iter_mut().enumerate() {
                    *gwv = *gwv + dot(gyc, &col[p * npix..(p + 1) * npix]);
                }
            }
        }
        gcol.iter_mut().for_each(|v| *v = T::zero());
        for co in 0..g.cout {
            let gyc = &gy[co * npix..(co + 1) * npix];
            let wrow = &w[co * plen..(co + 1) * plen];
            for (p, &wv) in wrow.iter().enumerate() {
                axpy(wv, gyc, &mut gcol[p * npix..(p + 1) * npix]);
            }
        }
        col2im(g, &gcol, gx.sample_mut(i));
    }
    gx
}
