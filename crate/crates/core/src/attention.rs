//! Cross-frame attention anchored on the first frame.
//!
//! Frame `f`'s queries attend to the keys and values of frame 1 instead of
//! its own, which keeps appearance and identity fixed across the clip.
//! Frames are the leading axis; frame 1 is index 0.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTensors {
    pub q: Array3<f64>,
    pub k: Array3<f64>,
    pub v: Array3<f64>,
    pub scale: f64,
}

impl AttentionTensors {
    /// Uses the conventional `1/√d` scale.
    pub fn new(q: Array3<f64>, k: Array3<f64>, v: Array3<f64>) -> Result<Self> {
        let d = q.dim().2;
        Self::with_scale(q, k, v, 1.0 / (d.max(1) as f64).sqrt())
    }

    pub fn with_scale(q: Array3<f64>, k: Array3<f64>, v: Array3<f64>, scale: f64) -> Result<Self> {
        if q.dim() != k.dim() || q.dim() != v.dim() {
            return Err(Error::DimensionMismatch(format!(
                "q {:?}, k {:?}, v {:?}",
                q.dim(),
                k.dim(),
                v.dim()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("attention scale {scale} must be positive")));
        }
        Ok(Self { q, k, v, scale })
    }

    pub fn frames(&self) -> usize {
        self.q.dim().0
    }
}

/// Keys and values of frame 1 for one layer invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstFrameContext {
    pub k1: Array2<f64>,
    pub v1: Array2<f64>,
    pub layer_id: String,
}

/// Copies frame 1's keys and values out of the batch.
pub fn cache_first_frame(tensors: &AttentionTensors, layer_id: impl Into<String>) -> Result<FirstFrameContext> {
    if tensors.frames() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(FirstFrameContext {
        k1: tensors.k.index_axis(Axis(0), 0).to_owned(),
        v1: tensors.v.index_axis(Axis(0), 0).to_owned(),
        layer_id: layer_id.into(),
    })
}

/// Row-wise softmax of `q·kᵀ·scale`, max-subtracted.
pub fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let mut logits = q.dot(&k.t()) * scale;
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

/// Standard single-frame attention.
pub fn self_attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    attention_weights(q, k, scale).dot(&v)
}

/// `output[f] = softmax(q[f]·k1ᵀ·scale)·v1` for every frame `f`.
pub fn cross_frame_attend(tensors: &AttentionTensors, context: &FirstFrameContext) -> Result<Array3<f64>> {
    let (n, t, d) = tensors.q.dim();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if context.k1.dim().1 != d || context.v1.dim() != context.k1.dim() || context.k1.dim().0 != t {
        return Err(Error::DimensionMismatch(format!(
            "batch tokens×dim {:?} vs context k1 {:?}, v1 {:?}",
            (t, d),
            context.k1.dim(),
            context.v1.dim()
        )));
    }
    let mut out = Array3::zeros((n, t, d));
    for (f, mut slot) in out.outer_iter_mut().enumerate() {
        let q = tensors.q.index_axis(Axis(0), f);
        slot.assign(&self_attention(q, context.k1.view(), context.v1.view(), tensors.scale));
    }
    Ok(out)
}

/// Which self-attention sites get cross-frame behaviour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchScope {
    #[default]
    MainDenoiser,
    MainPlusControlBranch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    SelfAttention,
    CrossFrame,
}

/// A self-attention layer that can be switched to cross-frame mode.
pub trait AttentionSite {
    fn layer_id(&self) -> &str;
    fn mode(&self) -> AttentionMode;
    fn set_mode(&mut self, mode: AttentionMode);
}

/// Anything that can enumerate its self-attention sites. Text cross-attention
/// layers are not sites.
pub trait AttentionSites {
    fn self_attention_sites(&mut self) -> Vec<&mut dyn AttentionSite>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchReport {
    pub scope: PatchScope,
    pub sites: Vec<String>,
    pub count: usize,
}

/// Multi-head attention over a frame batch. `q`, `k`, `v` are
/// `(frames, tokens, heads·head_dim)`; heads are split off and attended
/// independently, with frame-1 caching per head in cross-frame mode.
pub fn multi_head_attention(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    heads: usize,
    mode: AttentionMode,
    layer_id: &str,
) -> Result<Array3<f64>> {
    let (n, t, width) = q.dim();
    if heads == 0 || width % heads != 0 {
        return Err(Error::DimensionMismatch(format!("{width} features over {heads} heads")));
    }
    let hd = width / heads;
    let mut out = Array3::zeros((n, t, width));
    for h in 0..heads {
        let cols = ndarray::s![.., .., h * hd..(h + 1) * hd];
        let tensors = AttentionTensors::new(
            q.slice(cols).to_owned(),
            k.slice(cols).to_owned(),
            v.slice(cols).to_owned(),
        )?;
        let head_out = match mode {
            AttentionMode::CrossFrame => {
                let ctx = cache_first_frame(&tensors, format!("{layer_id}/head{h}"))?;
                cross_frame_attend(&tensors, &ctx)?
            }
            AttentionMode::SelfAttention => {
                let mut o = Array3::zeros((n, t, hd));
                for f in 0..n {
                    o.index_axis_mut(Axis(0), f).assign(&self_attention(
                        tensors.q.index_axis(Axis(0), f),
                        tensors.k.index_axis(Axis(0), f),
                        tensors.v.index_axis(Axis(0), f),
                        tensors.scale,
                    ));
                }
                o
            }
        };
        out.slice_mut(cols).assign(&head_out);
    }
    Ok(out)
}
