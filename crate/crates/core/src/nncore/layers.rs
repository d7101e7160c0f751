//! Sequential layer stacks with an activation tape.
//!
//! A stack is a list of [`LayerSpec`]s whose trainable weights live in a
//! [`ParamSet`] under `"{name}.w"` / `"{name}.b"`. [`forward_mlp`] records the
//! input of every layer; [`backward_mlp`] replays the tape in reverse and
//! accumulates parameter gradients.

use rand::Rng;

use super::params::ParamSet;
use super::tensor::{dot, matmul, matmul_a_bt, matmul_at_b_acc, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `[N, in] -> [N, out]`, weight stored `[in, out]`.
    Affine { name: String, in_dim: usize, out_dim: usize },
    Relu,
    Tanh,
    /// `[N, C, H, W] -> [N, O, Ho, Wo]`, valid padding, weight `[O, C, k, k]`.
    Conv2d { name: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    /// `[N, C, H, W] -> [N, C]`.
    GlobalMeanPool,
}

impl LayerSpec {
    pub fn affine(name: &str, in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Affine { name: name.to_string(), in_dim, out_dim }
    }

    pub fn conv(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d { name: name.to_string(), in_ch, out_ch, kernel, stride: 2 }
    }

    fn param_names(name: &str) -> (String, String) {
        (format!("{name}.w"), format!("{name}.b"))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng>(&self, params: &mut ParamSet<f32>, rng: &mut R) -> Result<()> {
        let (name, wshape, fan_in, fan_out, bias) = match self {
            LayerSpec::Affine { name, in_dim, out_dim } => {
                (name, vec![*in_dim, *out_dim], *in_dim, *out_dim, *out_dim)
            }
            LayerSpec::Conv2d { name, in_ch, out_ch, kernel, .. } => {
                let k2 = kernel * kernel;
                (name, vec![*out_ch, *in_ch, *kernel, *kernel], in_ch * k2, out_ch * k2, *out_ch)
            }
            _ => return Ok(()),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n: usize = wshape.iter().product();
        let w: Vec<f32> = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        let (wn, bn) = Self::param_names(name);
        params.insert(wn, Tensor::new(wshape, w)?)?;
        params.insert(bn, Tensor::zeros(&[bias]))?;
        Ok(())
    }
}

/// Initialize every trainable layer of a stack.
pub fn init_stack<R: Rng>(layers: &[LayerSpec], params: &mut ParamSet<f32>, rng: &mut R) -> Result<()> {
    layers.iter().try_for_each(|l| l.init_params(params, rng))
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S = f32> {
    layers: Vec<LayerSpec>,
    inputs: Vec<Tensor<S>>,
    output_shape: Vec<usize>,
}

impl<S: Scalar> Tape<S> {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize) -> Option<usize> {
    (size >= kernel).then(|| (size - kernel) / stride + 1)
}

/// Unfold one image `[C,H,W]` into columns `[C*k*k, Ho*Wo]`.
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, s: usize, ho: usize, wo: usize) -> Vec<S> {
    let p = ho * wo;
    let mut cols = vec![S::zero(); c * k * k * p];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..ho {
                    let src = &x[(ci * h + oy * s + ki) * w..];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        *d = src[ox * s + kj];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_acc<S: Scalar>(dx: &mut [S], cols: &[S], c: usize, h: usize, w: usize, k: usize, s: usize, ho: usize, wo: usize) {
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..ho {
                    let base = (ci * h + oy * s + ki) * w;
                    for ox in 0..wo {
                        dx[base + ox * s + kj] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

fn check_shape(cond: bool, layer: usize, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape { layer: Some(layer), msg: msg() })
    }
}

fn forward_layer<S: Scalar>(idx: usize, layer: &LayerSpec, params: &ParamSet<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    match layer {
        LayerSpec::Affine { name, in_dim, out_dim } => {
            check_shape(x.rank() == 2 && x.shape()[1] == *in_dim, idx, || {
                format!("affine {name} expects [N, {in_dim}], got {:?}", x.shape())
            })?;
            let (wn, bn) = LayerSpec::param_names(name);
            let w = params.value(&wn)?;
            let b = params.value(&bn)?;
            let n = x.shape()[0];
            let mut out = matmul(x.data(), w.data(), n, *in_dim, *out_dim);
            for row in out.chunks_mut(*out_dim) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            Tensor::new(vec![n, *out_dim], out)
        }
        LayerSpec::Relu => Ok(x.map(|v| if v > S::zero() { v } else { S::zero() })),
        LayerSpec::Tanh => Ok(x.map(|v| v.tanh())),
        LayerSpec::Conv2d { name, in_ch, out_ch, kernel, stride } => {
            let sh = x.shape();
            check_shape(sh.len() == 4 && sh[1] == *in_ch, idx, || {
                format!("conv {name} expects [N, {in_ch}, H, W], got {sh:?}")
            })?;
            let (n, h, w) = (sh[0], sh[2], sh[3]);
            let (ho, wo) = match (conv_out(h, *kernel, *stride), conv_out(w, *kernel, *stride)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Shape {
                        layer: Some(idx),
                        msg: format!("conv {name}: input {h}x{w} smaller than kernel {kernel}"),
                    })
                }
            };
            let (wn, bn) = LayerSpec::param_names(name);
            let wt = params.value(&wn)?.data();
            let bias = params.value(&bn)?.data();
            let r = in_ch * kernel * kernel;
            let p = ho * wo;
            let img = in_ch * h * w;
            let mut out = vec![S::zero(); n * out_ch * p];
            for ni in 0..n {
                let cols = im2col(&x.data()[ni * img..(ni + 1) * img], *in_ch, h, w, *kernel, *stride, ho, wo);
                let o_img = &mut out[ni * out_ch * p..(ni + 1) * out_ch * p];
                for o in 0..*out_ch {
                    let orow = &mut o_img[o * p..(o + 1) * p];
                    orow.iter_mut().for_each(|v| *v = bias[o]);
                    for ri in 0..r {
                        let wv = wt[o * r + ri];
                        for (ov, &cv) in orow.iter_mut().zip(&cols[ri * p..(ri + 1) * p]) {
                            *ov += wv * cv;
                        }
                    }
                }
            }
            Tensor::new(vec![n, *out_ch, ho, wo], out)
        }
        LayerSpec::GlobalMeanPool => {
            let sh = x.shape();
            check_shape(sh.len() == 4, idx, || format!("mean-pool expects rank 4, got {sh:?}"))?;
            let (n, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
            let inv = S::of(1.0 / hw as f64);
            let out = x.data().chunks(hw).map(|plane| plane.iter().copied().sum::<S>() * inv).collect();
            Tensor::new(vec![n, c], out)
        }
    }
}

/// Run a layer stack, recording what the backward pass needs.
pub fn forward_mlp<S: Scalar>(params: &ParamSet<S>, input: &Tensor<S>, layers: &[LayerSpec]) -> Result<(Tensor<S>, Tape<S>)> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        let y = forward_layer(i, layer, params, &x)?;
        inputs.push(x);
        x = y;
    }
    let tape = Tape { layers: layers.to_vec(), inputs, output_shape: x.shape().to_vec() };
    Ok((x, tape))
}

/// Inference-only forward pass (no tape).
pub fn infer<S: Scalar>(params: &ParamSet<S>, input: &Tensor<S>, layers: &[LayerSpec]) -> Result<Tensor<S>> {
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        x = forward_layer(i, layer, params, &x)?;
    }
    Ok(x)
}

fn backward_layer<S: Scalar>(
    idx: usize,
    layer: &LayerSpec,
    params: &mut ParamSet<S>,
    x: &Tensor<S>,
    dy: &Tensor<S>,
    need_dx: bool,
) -> Result<Option<Tensor<S>>> {
    match layer {
        LayerSpec::Affine { name, in_dim, out_dim } => {
            let (wn, bn) = LayerSpec::param_names(name);
            let n = x.shape()[0];
            check_shape(dy.shape() == [n, *out_dim], idx, || {
                format!("affine {name} upstream {:?} != [{n}, {out_dim}]", dy.shape())
            })?;
            matmul_at_b_acc(params.grad_mut(&wn)?.data_mut(), x.data(), dy.data(), n, *in_dim, *out_dim);
            let gb = params.grad_mut(&bn)?.data_mut();
            for row in dy.data().chunks(*out_dim) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if !need_dx {
                return Ok(None);
            }
            let w = params.value(&wn)?;
            let dx = matmul_a_bt(dy.data(), w.data(), n, *out_dim, *in_dim);
            Ok(Some(Tensor::new(vec![n, *in_dim], dx)?))
        }
        LayerSpec::Relu => {
            let data = x.data().iter().zip(dy.data()).map(|(&v, &d)| if v > S::zero() { d } else { S::zero() }).collect();
            Ok(Some(Tensor::new(x.shape().to_vec(), data)?))
        }
        LayerSpec::Tanh => {
            let data = x
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&v, &d)| {
                    let t = v.tanh();
                    d * (S::one() - t * t)
                })
                .collect();
            Ok(Some(Tensor::new(x.shape().to_vec(), data)?))
        }
        LayerSpec::Conv2d { name, in_ch, out_ch, kernel, stride } => {
            let sh = x.shape();
            let (n, h, w) = (sh[0], sh[2], sh[3]);
            let ho = (h - kernel) / stride + 1;
            let wo = (w - kernel) / stride + 1;
            check_shape(dy.shape() == [n, *out_ch, ho, wo], idx, || {
                format!("conv {name} upstream {:?} != [{n}, {out_ch}, {ho}, {wo}]", dy.shape())
            })?;
            let (wn, bn) = LayerSpec::param_names(name);
            let r = in_ch * kernel * kernel;
            let p = ho * wo;
            let img = in_ch * h * w;
            let wt = params.value(&wn)?.data().to_vec();
            let mut gw = vec![S::zero(); out_ch * r];
            let mut gb = vec![S::zero(); *out_ch];
            let mut dx = if need_dx { vec![S::zero(); x.len()] } else { Vec::new() };
            for ni in 0..n {
                let cols = im2col(&x.data()[ni * img..(ni + 1) * img], *in_ch, h, w, *kernel, *stride, ho, wo);
                let d_img = &dy.data()[ni * out_ch * p..(ni + 1) * out_ch * p];
                for o in 0..*out_ch {
                    let drow = &d_img[o * p..(o + 1) * p];
                    gb[o] += drow.iter().copied().sum::<S>();
                    for ri in 0..r {
                        gw[o * r + ri] += dot(drow, &cols[ri * p..(ri + 1) * p]);
                    }
                }
                if need_dx {
                    let mut dcols = vec![S::zero(); r * p];
                    for o in 0..*out_ch {
                        let drow = &d_img[o * p..(o + 1) * p];
                        for ri in 0..r {
                            let wv = wt[o * r + ri];
                            for (dc, &d) in dcols[ri * p..(ri + 1) * p].iter_mut().zip(drow) {
                                *dc += wv * d;
                            }
                        }
                    }
                    col2im_acc(&mut dx[ni * img..(ni + 1) * img], &dcols, *in_ch, h, w, *kernel, *stride, ho, wo);
                }
            }
            for (g, v) in params.grad_mut(&wn)?.data_mut().iter_mut().zip(gw) {
                *g += v;
            }
            for (g, v) in params.grad_mut(&bn)?.data_mut().iter_mut().zip(gb) {
                *g += v;
            }
            if need_dx {
                Ok(Some(Tensor::new(sh.to_vec(), dx)?))
            } else {
                Ok(None)
            }
        }
        LayerSpec::GlobalMeanPool => {
            let sh = x.shape();
            let hw = sh[2] * sh[3];
            check_shape(dy.shape() == [sh[0], sh[1]], idx, || {
                format!("mean-pool upstream {:?} != [{}, {}]", dy.shape(), sh[0], sh[1])
            })?;
            let inv = S::of(1.0 / hw as f64);
            let mut dx = Vec::with_capacity(x.len());
            for &d in dy.data() {
                dx.extend(std::iter::repeat_n(d * inv, hw));
            }
            Ok(Some(Tensor::new(sh.to_vec(), dx)?))
        }
    }
}

fn backward_impl<S: Scalar>(params: &mut ParamSet<S>, tape: &Tape<S>, upstream: &Tensor<S>, need_input_grad: bool) -> Result<Option<Tensor<S>>> {
    if upstream.shape() != tape.output_shape.as_slice() {
        return Err(Error::Shape {
            layer: Some(tape.layers.len().saturating_sub(1)),
            msg: format!("upstream {:?} does not match output {:?}", upstream.shape(), tape.output_shape),
        });
    }
    let mut grad = upstream.clone();
    for (i, (layer, x)) in tape.layers.iter().zip(&tape.inputs).enumerate().rev() {
        // The first trainable layer needs no input gradient unless the caller asks.
        let need_dx = need_input_grad || i > 0;
        match backward_layer(i, layer, params, x, &grad, need_dx)? {
            Some(g) => grad = g,
            None => return Ok(None),
        }
    }
    Ok(Some(grad))
}

/// Accumulate parameter gradients and return the gradient w.r.t. the input.
pub fn backward_mlp<S: Scalar>(params: &mut ParamSet<S>, tape: &Tape<S>, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    backward_impl(params, tape, upstream, true).map(|g| g.expect("input gradient requested"))
}

/// Like [`backward_mlp`] but skips the input gradient of the first layer.
pub fn backward_params<S: Scalar>(params: &mut ParamSet<S>, tape: &Tape<S>, upstream: &Tensor<S>) -> Result<()> {
    backward_impl(params, tape, upstream, false).map(|_| ())
}
