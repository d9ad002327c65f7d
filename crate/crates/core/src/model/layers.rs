//! Small dense building blocks for the reference networks. Feature maps are
//! `(channels, height, width)`; token sequences are `(tokens, features)`.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, self_attention, AttentionMode, AttentionSite};
use crate::error::Result;

fn uniform(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = (3.0 / fan_in as f64).sqrt();
    rng.random_range(-bound..bound)
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || uniform(rng, input)),
            bias: Array1::from_shape_simple_fn(output, || uniform(rng, input) * 0.1),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn forward_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }
}

/// Same-padded square convolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv2d {
    weight: Array4<f64>,
    bias: Array1<f64>,
}

impl Conv2d {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize, kernel: usize) -> Self {
        let fan_in = input * kernel * kernel;
        Self {
            weight: Array4::from_shape_simple_fn((output, input, kernel, kernel), || uniform(rng, fan_in)),
            bias: Array1::from_shape_simple_fn(output, || uniform(rng, fan_in) * 0.1),
        }
    }

    /// Scaled initialization, for output projections that start near zero.
    pub fn new_scaled(rng: &mut ChaCha8Rng, input: usize, output: usize, kernel: usize, gain: f64) -> Self {
        let mut conv = Self::new(rng, input, output, kernel);
        conv.weight *= gain;
        conv.bias *= gain;
        conv
    }

    pub fn zero(&mut self) {
        self.weight.fill(0.0);
        self.bias.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.params().all(|&v| v == 0.0)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, k, _) = self.weight.dim();
        let (_, h, w) = x.dim();
        let pad = (k / 2) as isize;
        let mut out = Array3::zeros((out_c, h, w));
        for o in 0..out_c {
            out.index_axis_mut(Axis(0), o).fill(self.bias[o]);
        }
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (oy0, oy1) = (0.max(-dy) as usize, (h as isize).min(h as isize - dy) as usize);
            if oy0 >= oy1 {
                continue;
            }
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (ox0, ox1) = (0.max(-dx) as usize, (w as isize).min(w as isize - dx) as usize);
                if ox0 >= ox1 {
                    continue;
                }
                let iy0 = (oy0 as isize + dy) as usize;
                let ix0 = (ox0 as isize + dx) as usize;
                let (ny, nx) = (oy1 - oy0, ox1 - ox0);
                for i in 0..in_c {
                    let src = x.slice(s![i, iy0..iy0 + ny, ix0..ix0 + nx]);
                    for o in 0..out_c {
                        let wv = self.weight[[o, i, ky, kx]];
                        if wv != 0.0 {
                            out.slice_mut(s![o, oy0..oy1, ox0..ox1]).scaled_add(wv, &src);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }
}

/// `(C, h, w)` → `(h·w, C)`.
pub fn to_tokens(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.to_shape((c, h * w)).expect("contiguous").t().to_owned()
}

/// `(h·w, C)` → `(C, h, w)`.
pub fn from_tokens(t: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = t.dim().1;
    t.t().as_standard_layout().to_owned().into_shape_with_order((c, h, w)).expect("token count matches")
}

/// Average pooling by 2 with partial windows at odd edges.
pub fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    avg_pool(x, 2)
}

pub fn avg_pool(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    Array3::from_shape_fn((c, oh, ow), |(ch, y, xx)| {
        let ys = y * factor..((y + 1) * factor).min(h);
        let xs = xx * factor..((xx + 1) * factor).min(w);
        let window = x.slice(s![ch, ys, xs]);
        window.sum() / window.len() as f64
    })
}

pub fn upsample_nearest_to(x: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (c, ih, iw) = x.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, xx)| x[[ch, y * ih / h, xx * iw / w]])
}

/// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
pub fn upsample_bilinear(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h * factor, w * factor);
    let coord = |o: usize, n: usize| {
        let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        (i0, (i0 + 1).min(n - 1), src - i0 as f64)
    };
    let ys: Vec<_> = (0..oh).map(|y| coord(y, h)).collect();
    let xs: Vec<_> = (0..ow).map(|x| coord(x, w)).collect();
    Array3::from_shape_fn((c, oh, ow), |(ch, y, xx)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[xx];
        let top = x[[ch, y0, x0]] * (1.0 - fx) + x[[ch, y0, x1]] * fx;
        let bottom = x[[ch, y1, x0]] * (1.0 - fx) + x[[ch, y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("spatial dims agree")
}

/// Sinusoidal timestep features.
pub fn timestep_features(timestep: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    Array1::from_shape_fn(dim, |i| {
        let j = i % half;
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let arg = timestep as f64 * freq;
        if i < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Multi-head self-attention whose mode can be switched to cross-frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelfAttentionLayer {
    id: String,
    heads: usize,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    to_out: Linear,
    #[serde(skip)]
    mode: AttentionMode,
}

impl SelfAttentionLayer {
    pub fn new(rng: &mut ChaCha8Rng, id: String, features: usize, heads: usize) -> Self {
        Self {
            id,
            heads,
            to_q: Linear::new(rng, features, features),
            to_k: Linear::new(rng, features, features),
            to_v: Linear::new(rng, features, features),
            to_out: Linear::new(rng, features, features),
            mode: AttentionMode::SelfAttention,
        }
    }

    pub fn set_id(&mut self, id: String) {
        self.id = id;
    }

    /// Attends over a batch of frames; each entry is `(tokens, features)`.
    pub fn forward(&self, frames: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let stack = |lin: &Linear| -> Array3<f64> {
            let views: Vec<Array2<f64>> = frames.iter().map(|f| lin.forward(f)).collect();
            let views: Vec<_> = views.iter().map(|v| v.view()).collect();
            ndarray::stack(Axis(0), &views).expect("frames share token shape")
        };
        let (q, k, v) = (stack(&self.to_q), stack(&self.to_k), stack(&self.to_v));
        let attended = multi_head_attention(&q, &k, &v, self.heads, self.mode, &self.id)?;
        Ok(attended
            .outer_iter()
            .map(|f| self.to_out.forward(&f.to_owned()))
            .collect())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.to_q
            .params()
            .chain(self.to_k.params())
            .chain(self.to_v.params())
            .chain(self.to_out.params())
    }
}

impl AttentionSite for SelfAttentionLayer {
    fn layer_id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> AttentionMode {
        self.mode
    }

    fn set_mode(&mut self, mode: AttentionMode) {
        self.mode = mode;
    }
}

/// Attention from image tokens to text tokens. Never patched.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossAttentionLayer {
    heads: usize,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    to_out: Linear,
}

impl CrossAttentionLayer {
    pub fn new(rng: &mut ChaCha8Rng, features: usize, context_dim: usize, heads: usize) -> Self {
        Self {
            heads,
            to_q: Linear::new(rng, features, features),
            to_k: Linear::new(rng, context_dim, features),
            to_v: Linear::new(rng, context_dim, features),
            to_out: Linear::new(rng, features, features),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, context: &Array2<f64>) -> Array2<f64> {
        let (q, k, v) = (self.to_q.forward(x), self.to_k.forward(context), self.to_v.forward(context));
        let width = q.dim().1;
        let hd = width / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Array2::zeros(q.dim());
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            out.slice_mut(cols)
                .assign(&self_attention(q.slice(cols), k.slice(cols), v.slice(cols), scale));
        }
        self.to_out.forward(&out)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.to_q
            .params()
            .chain(self.to_k.params())
            .chain(self.to_v.params())
            .chain(self.to_out.params())
    }
}

/// Convolution + timestep bias + SiLU, then self- and text-attention with
/// residual connections.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnBlock {
    conv: Conv2d,
    time: Linear,
    pub(crate) attn: SelfAttentionLayer,
    xattn: CrossAttentionLayer,
}

impl AttnBlock {
    pub fn new(
        rng: &mut ChaCha8Rng,
        id: String,
        input: usize,
        output: usize,
        time_dim: usize,
        context_dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(rng, input, output, 3),
            time: Linear::new(rng, time_dim, output),
            attn: SelfAttentionLayer::new(rng, id, output, heads),
            xattn: CrossAttentionLayer::new(rng, output, context_dim, heads),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, xs: &[Array3<f64>], temb: &Array1<f64>, context: &Array2<f64>) -> Result<Vec<Array3<f64>>> {
        let bias = self.time.forward_vec(temb);
        let mut dims = Vec::with_capacity(xs.len());
        let tokens: Vec<Array2<f64>> = xs
            .iter()
            .map(|x| {
                let mut h = self.conv.forward(x);
                for (c, mut plane) in h.outer_iter_mut().enumerate() {
                    plane.mapv_inplace(|v| silu(v + bias[c]));
                }
                let (_, hh, ww) = h.dim();
                dims.push((hh, ww));
                to_tokens(&h)
            })
            .collect();
        let attended = self.attn.forward(&tokens)?;
        Ok(tokens
            .into_iter()
            .zip(attended)
            .zip(dims)
            .map(|((t, a), (hh, ww))| {
                let t = t + a;
                let t = &t + &self.xattn.forward(&t, context);
                from_tokens(&t, hh, ww)
            })
            .collect())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.conv
            .params()
            .chain(self.time.params())
            .chain(self.attn.params())
            .chain(self.xattn.params())
    }
}

/// Convolution + optional timestep bias + SiLU.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvBlock {
    conv: Conv2d,
    time: Linear,
}

impl ConvBlock {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize, time_dim: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, input, output, 3),
            time: Linear::new(rng, time_dim, output),
        }
    }

    pub fn forward(&self, x: &Array3<f64>, temb: &Array1<f64>) -> Array3<f64> {
        let bias = self.time.forward_vec(temb);
        let mut h = self.conv.forward(x);
        for (c, mut plane) in h.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|v| silu(v + bias[c]));
        }
        h
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.conv.params().chain(self.time.params())
    }
}
