//! Seeded reference networks with the same interfaces as full-size latent
//! diffusion components, small enough to run on a CPU in tests.
//!
//! The denoiser is a three-stage U-Net (two attention blocks per stage, a
//! mid block, and a concatenating up path). The control branch is a copy of
//! its encoder half fed with the control image through a hint encoder, with
//! a 1×1 output projection per residual site.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::layers::{
    avg_pool, avg_pool2, concat_channels, silu, timestep_features, upsample_bilinear, upsample_nearest_to, AttnBlock,
    Conv2d, ConvBlock, Linear,
};
use super::{ControlBranch, LatentDecoder, ModelBundle, NoisePredictor, ResidualStack, TextEncoder};
use crate::attention::{AttentionSite, AttentionSites};
use crate::error::{Error, Result};
use crate::latent::{LatentGrid, LATENT_SCALE};
use crate::raster::BinaryRaster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub latent_channels: usize,
    /// Channel width of each of the three stages.
    pub widths: [usize; 3],
    pub heads: usize,
    pub time_dim: usize,
    pub context_length: usize,
    pub context_dim: usize,
    pub vocab: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            widths: [8, 16, 16],
            heads: 2,
            time_dim: 32,
            context_length: 77,
            context_dim: 16,
            vocab: 4096,
        }
    }
}

const TIME_FEATURES: usize = 16;
const BLOCKS_PER_STAGE: usize = 2;
const PAD_TOKEN: u32 = 0;
const BOS_TOKEN: u32 = 1;
const EOS_TOKEN: u32 = 2;
const FIRST_WORD_TOKEN: u32 = 3;
const MAX_PIECE: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyTextEncoder {
    context_length: usize,
    vocab: usize,
    token_embedding: Array2<f64>,
    position_embedding: Array2<f64>,
    proj: Linear,
}

impl ToyTextEncoder {
    fn new(rng: &mut ChaCha8Rng, cfg: &ToyConfig) -> Self {
        use rand::Rng;
        let d = cfg.context_dim;
        Self {
            context_length: cfg.context_length,
            vocab: cfg.vocab,
            token_embedding: Array2::from_shape_simple_fn((cfg.vocab, d), || rng.random_range(-1.0..1.0)),
            position_embedding: Array2::from_shape_simple_fn((cfg.context_length, d), || rng.random_range(-0.1..0.1)),
            proj: Linear::new(rng, d, d),
        }
    }
}

/// FNV-1a, so token ids are stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl TextEncoder for ToyTextEncoder {
    fn context_length(&self) -> usize {
        self.context_length
    }

    /// Lower-cased words and punctuation marks, with long words split into
    /// pieces of at most eight characters, hashed into the vocabulary.
    fn tokenize(&self, text: &str) -> Vec<u32> {
        let buckets = (self.vocab as u64) - u64::from(FIRST_WORD_TOKEN);
        let lower = text.to_lowercase();
        let mut pieces: Vec<String> = Vec::new();
        for word in lower.split_whitespace() {
            let mut current = String::new();
            for ch in word.chars() {
                if ch.is_alphanumeric() {
                    current.push(ch);
                    if current.chars().count() == MAX_PIECE {
                        pieces.push(std::mem::take(&mut current));
                    }
                } else {
                    if !current.is_empty() {
                        pieces.push(std::mem::take(&mut current));
                    }
                    pieces.push(ch.to_string());
                }
            }
            if !current.is_empty() {
                pieces.push(current);
            }
        }
        pieces
            .iter()
            .map(|p| FIRST_WORD_TOKEN + (fnv1a(p.as_bytes()) % buckets) as u32)
            .collect()
    }

    fn embed(&self, tokens: &[u32]) -> Array2<f64> {
        let n = self.context_length;
        let mut ids = Vec::with_capacity(n);
        ids.push(BOS_TOKEN);
        ids.extend(tokens.iter().take(n - 2).copied());
        ids.push(EOS_TOKEN);
        ids.resize(n, PAD_TOKEN);
        let mut x = Array2::zeros((n, self.token_embedding.dim().1));
        for (i, &id) in ids.iter().enumerate() {
            let row = &self.token_embedding.row(id as usize) + &self.position_embedding.row(i);
            x.row_mut(i).assign(&row);
        }
        self.proj.forward(&x).mapv(f64::tanh)
    }
}

/// Encoder half shared by the denoiser and its control copy.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Encoder {
    time_mlp: Linear,
    conv_in: Conv2d,
    blocks: Vec<AttnBlock>,
    mid: ConvBlock,
}

struct EncoderOutput {
    skips: Vec<Vec<Array3<f64>>>,
    mid: Vec<Array3<f64>>,
}

impl Encoder {
    fn new(rng: &mut ChaCha8Rng, cfg: &ToyConfig, prefix: &str) -> Self {
        let mut blocks = Vec::new();
        let mut input = cfg.widths[0];
        for (stage, &width) in cfg.widths.iter().enumerate() {
            for b in 0..BLOCKS_PER_STAGE {
                let id = format!("{prefix}down.{stage}.{b}.attn1");
                blocks.push(AttnBlock::new(rng, id, input, width, cfg.time_dim, cfg.context_dim, cfg.heads));
                input = width;
            }
        }
        Self {
            time_mlp: Linear::new(rng, TIME_FEATURES, cfg.time_dim),
            conv_in: Conv2d::new(rng, cfg.latent_channels, cfg.widths[0], 3),
            blocks,
            mid: ConvBlock::new(rng, input, input, cfg.time_dim),
        }
    }

    fn time_embedding(&self, timestep: usize) -> Array1<f64> {
        self.time_mlp.forward_vec(&timestep_features(timestep, TIME_FEATURES)).mapv(silu)
    }

    fn forward(
        &self,
        mut h: Vec<Array3<f64>>,
        temb: &Array1<f64>,
        context: &Array2<f64>,
    ) -> Result<EncoderOutput> {
        let mut skips = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 && i % BLOCKS_PER_STAGE == 0 {
                h = h.iter().map(avg_pool2).collect();
            }
            h = block.forward(&h, temb, context)?;
            skips.push(h.clone());
        }
        let mid = h.iter().map(|x| self.mid.forward(x, temb)).collect();
        Ok(EncoderOutput { skips, mid })
    }

    fn sites(&mut self) -> Vec<&mut dyn AttentionSite> {
        self.blocks.iter_mut().map(|b| &mut b.attn as &mut dyn AttentionSite).collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.time_mlp
            .params()
            .chain(self.conv_in.params())
            .chain(self.blocks.iter().flat_map(|b| b.params()))
            .chain(self.mid.params())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyUnet {
    config: ToyConfig,
    encoder: Encoder,
    up: Vec<ConvBlock>,
    conv_out: Conv2d,
}

impl ToyUnet {
    fn new(rng: &mut ChaCha8Rng, cfg: &ToyConfig) -> Self {
        let encoder = Encoder::new(rng, cfg, "unet.");
        let skip_widths: Vec<usize> = encoder.blocks.iter().map(AttnBlock::out_channels).collect();
        let mut current = *skip_widths.last().expect("at least one block");
        let mut up = Vec::new();
        for &skip in skip_widths.iter().rev() {
            up.push(ConvBlock::new(rng, current + skip, skip, cfg.time_dim));
            current = skip;
        }
        Self {
            config: *cfg,
            encoder,
            up,
            conv_out: Conv2d::new_scaled(rng, current, cfg.latent_channels, 3, 0.5),
        }
    }
}

impl AttentionSites for ToyUnet {
    fn self_attention_sites(&mut self) -> Vec<&mut dyn AttentionSite> {
        self.encoder.sites()
    }
}

impl NoisePredictor for ToyUnet {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn predict(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        context: &Array2<f64>,
        residuals: Option<&[ResidualStack]>,
    ) -> Result<Vec<Array3<f64>>> {
        if let Some(res) = residuals {
            if res.len() != latents.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} residual stacks for {} frames",
                    res.len(),
                    latents.len()
                )));
            }
        }
        for l in latents {
            if l.shape().0 != self.config.latent_channels {
                return Err(Error::DimensionMismatch(format!(
                    "latent has {} channels, model expects {}",
                    l.shape().0,
                    self.config.latent_channels
                )));
            }
        }
        let temb = self.encoder.time_embedding(timestep);
        let h: Vec<Array3<f64>> = latents.iter().map(|l| self.encoder.conv_in.forward(l.values())).collect();
        let EncoderOutput { mut skips, mut mid } = self.encoder.forward(h, &temb, context)?;

        if let Some(res) = residuals {
            for (f, stack) in res.iter().enumerate() {
                if stack.down.len() != skips.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} down residuals for {} skip sites",
                        stack.down.len(),
                        skips.len()
                    )));
                }
                for (site, r) in stack.down.iter().enumerate() {
                    add_checked(&mut skips[site][f], r)?;
                }
                add_checked(&mut mid[f], &stack.mid)?;
            }
        }

        let mut out = Vec::with_capacity(latents.len());
        for (f, mut h) in mid.into_iter().enumerate() {
            for (block, skip) in self.up.iter().zip(skips.iter().rev()) {
                let skip = &skip[f];
                let (_, sh, sw) = skip.dim();
                if h.dim().1 != sh || h.dim().2 != sw {
                    h = upsample_nearest_to(&h, sh, sw);
                }
                h = block.forward(&concat_channels(&h, skip), &temb);
            }
            out.push(self.conv_out.forward(&h));
        }
        Ok(out)
    }

    fn weights_fingerprint(&self) -> [u8; 32] {
        let params = self
            .encoder
            .params()
            .chain(self.up.iter().flat_map(|b| b.params()))
            .chain(self.conv_out.params());
        fingerprint(params)
    }
}

fn add_checked(target: &mut Array3<f64>, residual: &Array3<f64>) -> Result<()> {
    if target.dim() != residual.dim() {
        return Err(Error::DimensionMismatch(format!(
            "residual {:?} does not fit feature map {:?}",
            residual.dim(),
            target.dim()
        )));
    }
    *target += residual;
    Ok(())
}

fn fingerprint<'a>(params: impl Iterator<Item = &'a f64>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    hasher.finalize().into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyControlNet {
    hint: Vec<Conv2d>,
    hint_out: Conv2d,
    encoder: Encoder,
    down_out: Vec<Conv2d>,
    mid_out: Conv2d,
}

impl ToyControlNet {
    /// A trainable copy of the denoiser's encoder. Output projections get a
    /// small seeded initialization so the untrained branch still steers.
    fn new(rng: &mut ChaCha8Rng, cfg: &ToyConfig, unet: &ToyUnet) -> Self {
        let mut encoder = unet.encoder.clone();
        for (i, block) in encoder.blocks.iter_mut().enumerate() {
            let (stage, b) = (i / BLOCKS_PER_STAGE, i % BLOCKS_PER_STAGE);
            block.attn.set_id(format!("control.down.{stage}.{b}.attn1"));
        }
        let hint_width = cfg.widths[0];
        let down_out = encoder
            .blocks
            .iter()
            .map(|b| Conv2d::new_scaled(rng, b.out_channels(), b.out_channels(), 1, 0.5))
            .collect();
        let mid_width = cfg.widths[2];
        Self {
            hint: vec![Conv2d::new(rng, 1, hint_width, 3), Conv2d::new(rng, hint_width, hint_width, 3)],
            hint_out: Conv2d::new_scaled(rng, hint_width, hint_width, 1, 1.0),
            encoder,
            down_out,
            mid_out: Conv2d::new_scaled(rng, mid_width, mid_width, 1, 0.5),
        }
    }

    /// True when every output projection is zero.
    pub fn outputs_are_zero(&self) -> bool {
        self.down_out.iter().all(Conv2d::is_zero) && self.mid_out.is_zero()
    }

    fn hint_features(&self, control: &BinaryRaster, latent_hw: (usize, usize)) -> Result<Array3<f64>> {
        let expected = (latent_hw.0 * LATENT_SCALE, latent_hw.1 * LATENT_SCALE);
        if control.resolution() != expected {
            return Err(Error::ResolutionMismatch {
                expected,
                found: control.resolution(),
            });
        }
        let (h, w) = control.resolution();
        let image = Array3::from_shape_fn((1, h, w), |(_, y, x)| f64::from(control.cells()[y * w + x]));
        let mut x = avg_pool(&image, LATENT_SCALE);
        for conv in &self.hint {
            x = conv.forward(&x).mapv(silu);
        }
        Ok(self.hint_out.forward(&x))
    }
}

impl AttentionSites for ToyControlNet {
    fn self_attention_sites(&mut self) -> Vec<&mut dyn AttentionSite> {
        self.encoder.sites()
    }
}

impl ControlBranch for ToyControlNet {
    fn residuals(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        context: &Array2<f64>,
        controls: &[&BinaryRaster],
    ) -> Result<Vec<ResidualStack>> {
        if latents.len() != controls.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} control images for {} frames",
                controls.len(),
                latents.len()
            )));
        }
        let temb = self.encoder.time_embedding(timestep);
        let mut h = Vec::with_capacity(latents.len());
        for (latent, control) in latents.iter().zip(controls) {
            let (_, lh, lw) = latent.shape();
            let hint = self.hint_features(control, (lh, lw))?;
            h.push(self.encoder.conv_in.forward(latent.values()) + hint);
        }
        let EncoderOutput { skips, mid } = self.encoder.forward(h, &temb, context)?;
        Ok((0..latents.len())
            .map(|f| ResidualStack {
                down: skips.iter().zip(&self.down_out).map(|(site, proj)| proj.forward(&site[f])).collect(),
                mid: self.mid_out.forward(&mid[f]),
            })
            .collect())
    }

    fn zero_output_projections(&mut self) {
        for conv in &mut self.down_out {
            conv.zero();
        }
        self.mid_out.zero();
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyDecoder {
    conv_in: Conv2d,
    conv_out: Conv2d,
}

impl ToyDecoder {
    fn new(rng: &mut ChaCha8Rng, cfg: &ToyConfig) -> Self {
        Self {
            conv_in: Conv2d::new(rng, cfg.latent_channels, 16, 3),
            conv_out: Conv2d::new(rng, 16, 3, 1),
        }
    }
}

impl LatentDecoder for ToyDecoder {
    fn decode(&self, latent: &LatentGrid) -> Array3<f64> {
        let h = self.conv_in.forward(latent.values()).mapv(silu);
        let up = upsample_bilinear(&h, LATENT_SCALE);
        let rgb = self.conv_out.forward(&up).mapv(|v| 0.5 + 0.5 * v.tanh());
        // (3, H, W) -> (H, W, 3)
        rgb.permuted_axes([1, 2, 0]).as_standard_layout().to_owned()
    }
}

/// The full seeded model set. Serializable, so a set can be saved under a
/// weights id and reloaded from a model directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyModels {
    pub config: ToyConfig,
    pub text_encoder: ToyTextEncoder,
    pub unet: ToyUnet,
    pub control: ToyControlNet,
    pub decoder: ToyDecoder,
}

impl ToyModels {
    pub fn from_seed(seed: u64) -> Self {
        Self::with_config(seed, ToyConfig::default())
    }

    pub fn with_config(seed: u64, config: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text_encoder = ToyTextEncoder::new(&mut rng, &config);
        let unet = ToyUnet::new(&mut rng, &config);
        let control = ToyControlNet::new(&mut rng, &config, &unet);
        let decoder = ToyDecoder::new(&mut rng, &config);
        Self {
            config,
            text_encoder,
            unet,
            control,
            decoder,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }

    pub fn into_bundle(self, id: &str) -> ModelBundle {
        ModelBundle {
            id: id.to_string(),
            text_encoder: Box::new(self.text_encoder),
            denoiser: Box::new(self.unet),
            control: Box::new(self.control),
            decoder: Box::new(self.decoder),
        }
    }
}
