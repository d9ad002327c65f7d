//! Model capabilities the pipeline depends on, and the seeded reference
//! implementation behind `toy:<seed>` identifiers.
//!
//! The pipeline only sees four capabilities: a text encoder, a noise
//! predictor with residual-injection ports, a control branch, and a latent
//! decoder. Anything implementing these traits can be dropped in.

pub mod layers;
mod toy;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::attention::{AttentionMode, AttentionSites, PatchReport, PatchScope};
use crate::error::{Error, Result};
use crate::latent::LatentGrid;
use crate::raster::BinaryRaster;

pub use toy::{ToyConfig, ToyControlNet, ToyDecoder, ToyModels, ToyTextEncoder, ToyUnet};

/// Additive residuals from the control branch for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStack {
    pub down: Vec<Array3<f64>>,
    pub mid: Array3<f64>,
}

impl ResidualStack {
    pub fn scaled(mut self, factor: f64) -> Self {
        for r in &mut self.down {
            *r *= factor;
        }
        self.mid *= factor;
        self
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Array3<f64>> {
        self.down.iter().chain(std::iter::once(&self.mid))
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

pub trait TextEncoder: Send {
    /// Token window, including begin/end markers.
    fn context_length(&self) -> usize;
    /// Content tokens only, without markers or padding.
    fn tokenize(&self, text: &str) -> Vec<u32>;
    /// Embeds at most `context_length() - 2` content tokens into a
    /// `(context_length, dim)` matrix.
    fn embed(&self, tokens: &[u32]) -> Array2<f64>;
}

pub trait NoisePredictor: AttentionSites + Send {
    fn latent_channels(&self) -> usize;
    /// Predicts noise for a batch of frames at one timestep. When present,
    /// `residuals[f]` is added to frame `f`'s skip connections and mid block.
    fn predict(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        context: &Array2<f64>,
        residuals: Option<&[ResidualStack]>,
    ) -> Result<Vec<Array3<f64>>>;
    /// SHA-256 over every weight, in a fixed order.
    fn weights_fingerprint(&self) -> [u8; 32];
}

pub trait ControlBranch: AttentionSites + Send {
    /// One unscaled residual stack per frame; `controls[f]` must be 8× the
    /// latent resolution.
    fn residuals(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        context: &Array2<f64>,
        controls: &[&BinaryRaster],
    ) -> Result<Vec<ResidualStack>>;
    /// Zeroes every output projection, turning the branch into a no-op.
    fn zero_output_projections(&mut self);
}

pub trait LatentDecoder: Send {
    /// `(C, h, w)` latent to an `(8h, 8w, 3)` image.
    fn decode(&self, latent: &LatentGrid) -> Array3<f64>;
}

pub struct ModelBundle {
    pub id: String,
    pub text_encoder: Box<dyn TextEncoder>,
    pub denoiser: Box<dyn NoisePredictor>,
    pub control: Box<dyn ControlBranch>,
    pub decoder: Box<dyn LatentDecoder>,
}

impl std::fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBundle").field("id", &self.id).finish_non_exhaustive()
    }
}

/// Routes every self-attention site in `scope` through cross-frame attention
/// and resets the rest to plain self-attention.
pub fn patch_model(models: &mut ModelBundle, scope: PatchScope) -> Result<PatchReport> {
    let mut sites = Vec::new();
    for site in models.denoiser.self_attention_sites() {
        site.set_mode(AttentionMode::CrossFrame);
        sites.push(site.layer_id().to_string());
    }
    let control_mode = match scope {
        PatchScope::MainDenoiser => AttentionMode::SelfAttention,
        PatchScope::MainPlusControlBranch => AttentionMode::CrossFrame,
    };
    for site in models.control.self_attention_sites() {
        site.set_mode(control_mode);
        if control_mode == AttentionMode::CrossFrame {
            sites.push(site.layer_id().to_string());
        }
    }
    if sites.is_empty() {
        return Err(Error::NoAttentionSites);
    }
    Ok(PatchReport {
        scope,
        count: sites.len(),
        sites,
    })
}

/// Restores plain self-attention everywhere.
pub fn unpatch_model(models: &mut ModelBundle) {
    for site in models.denoiser.self_attention_sites() {
        site.set_mode(AttentionMode::SelfAttention);
    }
    for site in models.control.self_attention_sites() {
        site.set_mode(AttentionMode::SelfAttention);
    }
}

/// Where a model identifier points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    Toy(u64),
    File(PathBuf),
}

/// Checks that `id` names a loadable model without building it.
/// `toy:<seed>` selects the seeded reference networks; any other id is
/// looked up as `<model_dir>/<id>.json`.
pub fn resolve_model_id(id: &str, model_dir: Option<&Path>) -> Result<ModelSource> {
    if let Some(seed) = id.strip_prefix("toy:") {
        return seed
            .parse()
            .map(ModelSource::Toy)
            .map_err(|_| Error::UnknownModel(format!("{id} (seed must be an unsigned integer)")));
    }
    let dir = model_dir.ok_or_else(|| Error::UnknownModel(format!("{id} (no model directory configured)")))?;
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(Error::UnknownModel(id.to_string()));
    }
    let path = dir.join(format!("{id}.json"));
    if !path.is_file() {
        return Err(Error::UnknownModel(format!("{id} (not found in {})", dir.display())));
    }
    Ok(ModelSource::File(path))
}

pub fn load_models(id: &str, model_dir: Option<&Path>) -> Result<ModelBundle> {
    let models = match resolve_model_id(id, model_dir)? {
        ModelSource::Toy(seed) => ToyModels::from_seed(seed),
        ModelSource::File(path) => ToyModels::load(&path)?,
    };
    Ok(models.into_bundle(id))
}

/// One recorded call into the control branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlCall {
    pub timestep: usize,
    /// Position of the frame in the batch.
    pub frame: usize,
    pub control: BinaryRaster,
    pub latent: LatentGrid,
}

pub type ControlLog = Arc<Mutex<Vec<ControlCall>>>;

/// Wraps a control branch and records which control image and latent each
/// frame's residuals were computed from.
pub struct SpyControl {
    inner: Box<dyn ControlBranch>,
    log: ControlLog,
}

impl SpyControl {
    pub fn wrap(inner: Box<dyn ControlBranch>) -> (Self, ControlLog) {
        let log = ControlLog::default();
        (
            Self {
                inner,
                log: log.clone(),
            },
            log,
        )
    }
}

impl AttentionSites for SpyControl {
    fn self_attention_sites(&mut self) -> Vec<&mut dyn crate::attention::AttentionSite> {
        self.inner.self_attention_sites()
    }
}

impl ControlBranch for SpyControl {
    fn residuals(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        context: &Array2<f64>,
        controls: &[&BinaryRaster],
    ) -> Result<Vec<ResidualStack>> {
        {
            let mut log = self.log.lock().expect("spy log poisoned");
            for (frame, (latent, control)) in latents.iter().zip(controls).enumerate() {
                log.push(ControlCall {
                    timestep,
                    frame,
                    control: (*control).clone(),
                    latent: latent.clone(),
                });
            }
        }
        self.inner.residuals(latents, timestep, context, controls)
    }

    fn zero_output_projections(&mut self) {
        self.inner.zero_output_projections();
    }
}
