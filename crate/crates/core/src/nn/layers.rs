use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::gemm::matmul;
use super::optim::Grads;
use super::tensor::Tensor;
use crate::rng::Rng;

/// 2-D convolution with square kernels, zero padding and a bias per output
/// channel. Weights are stored `[out, in·k·k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Fully connected layer, weights stored `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv2d(Conv2d),
    Linear(Linear),
    Relu,
    LeakyRelu(f32),
    Sigmoid,
    /// Nearest-neighbour ×2 upsampling.
    Upsample2x,
    /// Mean over spatial positions: `[N, C, H, W] -> [N, C]`.
    GlobalAvgPool,
    Flatten,
    /// Reshapes each row to the given per-sample shape.
    Reshape(Vec<usize>),
}

fn uniform_init(rng: &mut Rng, n: usize, bound: f64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_in(-bound, bound) as f32).collect()
}

impl Conv2d {
    /// He-uniform initialization.
    pub fn new(rng: &mut Rng, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: uniform_init(rng, out_channels * fan_in, libm::sqrt(6.0 / fan_in as f64)),
            bias: vec![0.0; out_channels],
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let plane = oh * ow;
        for c in 0..self.in_channels {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *o = if ix < 0 || ix >= w as isize { 0.0 } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f32]) {
        let k = self.kernel;
        let plane = oh * ow;
        for c in 0..self.in_channels {
            let dst = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Linear {
    pub fn new(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs, libm::sqrt(6.0 / inputs as f64)),
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-style bound, used for output heads.
    pub fn new_head(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs, libm::sqrt(6.0 / (inputs + outputs) as f64)),
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let n = x.rows();
        assert_eq!(x.row_len(), self.inputs, "linear layer input width");
        let mut out = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            out.extend_from_slice(&self.bias);
        }
        matmul(n, self.inputs, self.outputs, &x.data, false, &self.weight, true, &mut out, 1.0, 1.0);
        Tensor::from_vec(&[n, self.outputs], out)
    }
}

/// Per-layer state saved by the forward pass.
#[derive(Clone, Debug)]
enum Cache {
    Conv { cols: Vec<f32>, in_shape: Vec<usize>, out_hw: (usize, usize) },
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
}

/// Saved activations of one forward pass through a [`Sequential`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A chain of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    /// Parameter slices in a fixed order (per layer: weight, then bias).
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv2d(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::Linear(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv2d(c) => {
                    out.push(c.weight.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                Layer::Linear(c) => {
                    out.push(c.weight.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads::zeros_like(&self.params())
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = forward_layer(l, cur, None);
        }
        cur
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, Tape) {
        let mut tape = Tape { caches: Vec::with_capacity(self.layers.len()) };
        let mut cur = x.clone();
        for l in &self.layers {
            cur = forward_layer(l, cur, Some(&mut tape.caches));
        }
        (cur, tape)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input when `want_input_grad` is set
    /// (otherwise an empty tensor).
    pub fn backward(&self, tape: &Tape, grad_out: Tensor, grads: &mut Grads, want_input_grad: bool) -> Tensor {
        let mut slot = grads.len();
        let mut g = grad_out;
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let need_input = want_input_grad || idx > 0;
            match layer {
                Layer::Conv2d(conv) => {
                    slot -= 2;
                    g = conv_backward(conv, cache, &g, grads, slot, need_input);
                }
                Layer::Linear(lin) => {
                    slot -= 2;
                    g = linear_backward(lin, cache, &g, grads, slot, need_input);
                }
                other => g = activation_backward(other, cache, g),
            }
            if !need_input {
                return Tensor::zeros(&[0]);
            }
        }
        g
    }
}

fn forward_layer(layer: &Layer, x: Tensor, caches: Option<&mut Vec<Cache>>) -> Tensor {
    match layer {
        Layer::Conv2d(conv) => {
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            assert_eq!(c, conv.in_channels, "conv input channels");
            let (oh, ow) = conv.out_size(h, w);
            let plane = oh * ow;
            let ckk = c * conv.kernel * conv.kernel;
            let mut out = vec![0f32; n * conv.out_channels * plane];
            let keep = caches.is_some();
            let mut all_cols = if keep { vec![0f32; n * ckk * plane] } else { Vec::new() };
            let mut scratch = if keep { Vec::new() } else { vec![0f32; ckk * plane] };
            for i in 0..n {
                let cols: &mut [f32] =
                    if keep { &mut all_cols[i * ckk * plane..(i + 1) * ckk * plane] } else { &mut scratch };
                conv.im2col(&x.data[i * c * h * w..(i + 1) * c * h * w], h, w, oh, ow, cols);
                let o = &mut out[i * conv.out_channels * plane..(i + 1) * conv.out_channels * plane];
                for (oc, chunk) in o.chunks_exact_mut(plane).enumerate() {
                    chunk.fill(conv.bias[oc]);
                }
                matmul(conv.out_channels, ckk, plane, &conv.weight, false, cols, false, o, 1.0, 1.0);
            }
            if let Some(c) = caches {
                c.push(Cache::Conv { cols: all_cols, in_shape: x.shape.clone(), out_hw: (oh, ow) });
            }
            Tensor::from_vec(&[n, conv.out_channels, oh, ow], out)
        }
        Layer::Linear(lin) => {
            let y = lin.apply(&x);
            if let Some(c) = caches {
                c.push(Cache::Input(x));
            }
            y
        }
        Layer::Relu => {
            let mut y = x;
            for v in &mut y.data {
                *v = v.max(0.0);
            }
            if let Some(c) = caches {
                c.push(Cache::Output(y.clone()));
            }
            y
        }
        Layer::LeakyRelu(slope) => {
            let y_data = x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
            let y = Tensor::from_vec(&x.shape, y_data);
            if let Some(c) = caches {
                c.push(Cache::Input(x));
            }
            y
        }
        Layer::Sigmoid => {
            let mut y = x;
            for v in &mut y.data {
                *v = 1.0 / (1.0 + libm::expf(-*v));
            }
            if let Some(c) = caches {
                c.push(Cache::Output(y.clone()));
            }
            y
        }
        Layer::Upsample2x => {
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let mut out = vec![0f32; n * c * 4 * h * w];
            for p in 0..n * c {
                let src = &x.data[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                    }
                }
            }
            if let Some(cache) = caches {
                cache.push(Cache::Shape(x.shape.clone()));
            }
            Tensor::from_vec(&[n, c, 2 * h, 2 * w], out)
        }
        Layer::GlobalAvgPool => {
            let (n, c) = (x.shape[0], x.shape[1]);
            let plane: usize = x.shape[2..].iter().product();
            let inv = 1.0 / plane as f32;
            let out = x.data.chunks_exact(plane).map(|p| p.iter().sum::<f32>() * inv).collect();
            if let Some(cache) = caches {
                cache.push(Cache::Shape(x.shape.clone()));
            }
            Tensor::from_vec(&[n, c], out)
        }
        Layer::Flatten => {
            let shape = x.shape.clone();
            let n = x.rows();
            let w = x.row_len();
            if let Some(cache) = caches {
                cache.push(Cache::Shape(shape));
            }
            x.reshape(&[n, w])
        }
        Layer::Reshape(per_sample) => {
            let shape = x.shape.clone();
            let mut new_shape = vec![x.rows()];
            new_shape.extend_from_slice(per_sample);
            if let Some(cache) = caches {
                cache.push(Cache::Shape(shape));
            }
            x.reshape(&new_shape)
        }
    }
}

fn conv_backward(conv: &Conv2d, cache: &Cache, g: &Tensor, grads: &mut Grads, slot: usize, need_input: bool) -> Tensor {
    let Cache::Conv { cols, in_shape, out_hw: (oh, ow) } = cache else { unreachable!("conv cache") };
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let plane = oh * ow;
    let ckk = c * conv.kernel * conv.kernel;
    let oc = conv.out_channels;
    let mut dx = if need_input { vec![0f32; n * c * h * w] } else { Vec::new() };
    let mut dcols = if need_input { vec![0f32; ckk * plane] } else { Vec::new() };
    for i in 0..n {
        let gi = &g.data[i * oc * plane..(i + 1) * oc * plane];
        let ci = &cols[i * ckk * plane..(i + 1) * ckk * plane];
        matmul(oc, plane, ckk, gi, false, ci, true, &mut grads.0[slot], 1.0, 1.0);
        for (o, chunk) in gi.chunks_exact(plane).enumerate() {
            grads.0[slot + 1][o] += chunk.iter().sum::<f32>();
        }
        if need_input {
            matmul(ckk, oc, plane, &conv.weight, true, gi, false, &mut dcols, 1.0, 0.0);
            conv.col2im(&dcols, h, w, *oh, *ow, &mut dx[i * c * h * w..(i + 1) * c * h * w]);
        }
    }
    if need_input {
        Tensor::from_vec(in_shape, dx)
    } else {
        Tensor::zeros(&[0])
    }
}

fn linear_backward(lin: &Linear, cache: &Cache, g: &Tensor, grads: &mut Grads, slot: usize, need_input: bool) -> Tensor {
    let Cache::Input(x) = cache else { unreachable!("linear cache") };
    let n = x.rows();
    matmul(lin.outputs, n, lin.inputs, &g.data, true, &x.data, false, &mut grads.0[slot], 1.0, 1.0);
    for row in g.data.chunks_exact(lin.outputs) {
        for (b, v) in grads.0[slot + 1].iter_mut().zip(row) {
            *b += v;
        }
    }
    if !need_input {
        return Tensor::zeros(&[0]);
    }
    let mut dx = vec![0f32; n * lin.inputs];
    matmul(n, lin.outputs, lin.inputs, &g.data, false, &lin.weight, false, &mut dx, 1.0, 0.0);
    Tensor::from_vec(&x.shape, dx)
}

fn activation_backward(layer: &Layer, cache: &Cache, mut g: Tensor) -> Tensor {
    match (layer, cache) {
        (Layer::Relu, Cache::Output(y)) => {
            for (gv, yv) in g.data.iter_mut().zip(&y.data) {
                if *yv <= 0.0 {
                    *gv = 0.0;
                }
            }
            g
        }
        (Layer::LeakyRelu(slope), Cache::Input(x)) => {
            for (gv, xv) in g.data.iter_mut().zip(&x.data) {
                if *xv <= 0.0 {
                    *gv *= slope;
                }
            }
            g
        }
        (Layer::Sigmoid, Cache::Output(y)) => {
            for (gv, yv) in g.data.iter_mut().zip(&y.data) {
                *gv *= yv * (1.0 - yv);
            }
            g
        }
        (Layer::Upsample2x, Cache::Shape(s)) => {
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let mut dx = vec![0f32; n * c * h * w];
            for p in 0..n * c {
                let src = &g.data[p * 4 * h * w..(p + 1) * 4 * h * w];
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
                    }
                }
            }
            Tensor::from_vec(s, dx)
        }
        (Layer::GlobalAvgPool, Cache::Shape(s)) => {
            let plane: usize = s[2..].iter().product();
            let inv = 1.0 / plane as f32;
            let mut dx = Vec::with_capacity(s.iter().product());
            for v in &g.data {
                dx.extend(core::iter::repeat_n(v * inv, plane));
            }
            Tensor::from_vec(s, dx)
        }
        (Layer::Flatten | Layer::Reshape(_), Cache::Shape(s)) => g.reshape(s),
        _ => unreachable!("cache does not match layer"),
    }
}
