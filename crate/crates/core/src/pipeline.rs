//! Generation orchestration: tween the keyframes into a control video,
//! sample and motion-warp the initial latents, then run guided DDIM with
//! per-frame control residuals and cross-frame attention.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{Duration, Instant};

use crate::attention::{PatchReport, PatchScope};
use crate::error::{Error, Result};
use crate::latent::{apply_motion, infer_direction, sample_base_latent, FrameLatents, LatentGrid, MotionParams, LATENT_SCALE};
use crate::model::{load_models, patch_model, unpatch_model, ModelBundle, ResidualStack};
use crate::raster::BinaryRaster;
use crate::schedule::{DdimConfig, DdimScheduler};
use crate::sketch::SketchSequence;
use crate::tween::{interpolate_sequence, ControlSequence, DEFAULT_BAND};

pub const DEFAULT_STEPS: usize = 20;
pub const DEFAULT_GUIDANCE: f64 = 7.5;
pub const DEFAULT_CONTROL_SCALE: f64 = 1.0;
pub const DEFAULT_FRAME_RATE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSetting {
    /// Derived from the control sequence, see [`infer_direction`].
    Auto,
    Fixed(MotionParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub total_frames: usize,
    /// `(H, W)` in pixels, both multiples of 8.
    pub resolution: (usize, usize),
    pub steps: usize,
    pub guidance_scale: f64,
    /// Multiplier on every control residual, in `[0, 2]`.
    pub control_scale: f64,
    pub seed: u64,
    pub band: f64,
    pub motion: MotionSetting,
    /// `None` leaves self-attention unpatched.
    pub cross_frame: Option<PatchScope>,
    pub frame_rate: f64,
    /// Reject over-long prompts instead of truncating them.
    pub strict_tokens: bool,
}

impl GenerationConfig {
    pub fn new(total_frames: usize, resolution: (usize, usize)) -> Self {
        Self {
            total_frames,
            resolution,
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE,
            control_scale: DEFAULT_CONTROL_SCALE,
            seed: 0,
            band: DEFAULT_BAND,
            motion: MotionSetting::Auto,
            cross_frame: Some(PatchScope::MainDenoiser),
            frame_rate: DEFAULT_FRAME_RATE,
            strict_tokens: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % LATENT_SCALE != 0 || w % LATENT_SCALE != 0 {
            return Err(Error::InvalidConfig(format!("resolution {h}x{w} must be positive multiples of 8")));
        }
        if self.total_frames == 0 {
            return Err(Error::InvalidFrameCount);
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!("guidance_scale {} must be >= 0", self.guidance_scale)));
        }
        if !(0.0..=2.0).contains(&self.control_scale) {
            return Err(Error::InvalidConfig(format!("control_scale {} must be in [0, 2]", self.control_scale)));
        }
        if !(self.band.is_finite() && self.band >= 0.0) {
            return Err(Error::InvalidBand(self.band));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("frame_rate {} must be positive", self.frame_rate)));
        }
        Ok(())
    }

    pub fn latent_shape(&self, channels: usize) -> (usize, usize, usize) {
        (channels, self.resolution.0 / LATENT_SCALE, self.resolution.1 / LATENT_SCALE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub negative_prompt: String,
    pub keyframes: SketchSequence,
    pub config: GenerationConfig,
}

impl GenerationRequest {
    pub fn new(
        prompt: impl Into<String>,
        negative_prompt: impl Into<String>,
        keyframes: SketchSequence,
        config: GenerationConfig,
    ) -> Result<Self> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        config.validate()?;
        if keyframes.resolution() != config.resolution {
            return Err(Error::ResolutionMismatch {
                expected: config.resolution,
                found: keyframes.resolution(),
            });
        }
        if keyframes.total_frames() != config.total_frames {
            return Err(Error::InvalidConfig(format!(
                "keyframes describe {} frames, config asks for {}",
                keyframes.total_frames(),
                config.total_frames
            )));
        }
        Ok(Self {
            prompt,
            negative_prompt: negative_prompt.into(),
            keyframes,
            config,
        })
    }
}

/// Conditional and unconditional text embeddings of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbeddings {
    pub cond: Array2<f64>,
    pub uncond: Array2<f64>,
    /// Set when the prompt was cut to fit the encoder window.
    pub truncated: bool,
}

/// Control residuals for one frame under each guidance branch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResiduals {
    pub cond: ResidualStack,
    pub uncond: ResidualStack,
}

/// Decoded frames, each `(H, W, 3)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrames {
    pub frames: Vec<Array3<f64>>,
    pub frame_rate: f64,
}

impl VideoFrames {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// 8-bit interleaved RGB for frame `i`.
    pub fn rgb8(&self, i: usize) -> Vec<u8> {
        self.frames[i].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepProgress {
    pub step: usize,
    pub total_steps: usize,
    pub timestep: usize,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub control: ControlSequence,
    pub motion: MotionParams,
    pub patch: Option<PatchReport>,
    pub video: VideoFrames,
    pub timings: Timings,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub tween_ms: f64,
    pub denoise_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
}

pub struct Pipeline {
    models: ModelBundle,
    ddim: DdimConfig,
}

impl Pipeline {
    pub fn new(models: ModelBundle) -> Self {
        Self {
            models,
            ddim: DdimConfig::default(),
        }
    }

    pub fn from_model_id(id: &str, model_dir: Option<&Path>) -> Result<Self> {
        Ok(Self::new(load_models(id, model_dir)?))
    }

    pub fn models(&self) -> &ModelBundle {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut ModelBundle {
        &mut self.models
    }

    pub fn scheduler(&self, steps: usize) -> Result<DdimScheduler> {
        DdimScheduler::new(steps, self.ddim)
    }

    pub fn encode_prompt(&self, prompt: &str, negative_prompt: &str, strict: bool) -> Result<PromptEmbeddings> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let enc = &self.models.text_encoder;
        let limit = enc.context_length() - 2;
        let mut truncated = false;
        let mut tokens_for = |text: &str| -> Result<Vec<u32>> {
            let mut tokens = enc.tokenize(text);
            if tokens.len() > limit {
                if strict {
                    return Err(Error::TokenLimitExceeded {
                        tokens: tokens.len(),
                        limit,
                    });
                }
                log::warn!("prompt has {} tokens; truncating to {limit}", tokens.len());
                tokens.truncate(limit);
                truncated = true;
            }
            Ok(tokens)
        };
        let cond = tokens_for(prompt)?;
        let uncond = tokens_for(negative_prompt)?;
        Ok(PromptEmbeddings {
            cond: enc.embed(&cond),
            uncond: enc.embed(&uncond),
            truncated,
        })
    }

    /// Residuals for a single frame, scaled by `control_scale`.
    pub fn control_residuals(
        &self,
        latent: &LatentGrid,
        timestep: usize,
        embedding: &Array2<f64>,
        control_image: &BinaryRaster,
        control_scale: f64,
    ) -> Result<ResidualStack> {
        let mut stacks = self.control_residuals_batch(
            std::slice::from_ref(latent),
            timestep,
            embedding,
            &[control_image],
            control_scale,
        )?;
        Ok(stacks.remove(0))
    }

    fn control_residuals_batch(
        &self,
        latents: &[LatentGrid],
        timestep: usize,
        embedding: &Array2<f64>,
        controls: &[&BinaryRaster],
        control_scale: f64,
    ) -> Result<Vec<ResidualStack>> {
        for (latent, control) in latents.iter().zip(controls) {
            let (_, h, w) = latent.shape();
            let expected = (h * LATENT_SCALE, w * LATENT_SCALE);
            if control.resolution() != expected {
                return Err(Error::ResolutionMismatch {
                    expected,
                    found: control.resolution(),
                });
            }
        }
        let stacks = self.models.control.residuals(latents, timestep, embedding, controls)?;
        Ok(stacks.into_iter().map(|s| s.scaled(control_scale)).collect())
    }

    /// One guided DDIM update of every frame:
    /// `eps = eps_uncond + g·(eps_cond − eps_uncond)`, then the eta = 0 step.
    pub fn denoise_step(
        &self,
        scheduler: &DdimScheduler,
        latents: &FrameLatents,
        timestep: usize,
        embeddings: &PromptEmbeddings,
        residuals: Option<&[FrameResiduals]>,
        guidance_scale: f64,
    ) -> Result<FrameLatents> {
        if !scheduler.timesteps().contains(&timestep) {
            return Err(Error::ScheduleExhausted { timestep });
        }
        if let Some(res) = residuals {
            if res.len() != latents.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} residual sets for {} frames",
                    res.len(),
                    latents.len()
                )));
            }
        }
        let (uncond_res, cond_res): (Option<Vec<ResidualStack>>, Option<Vec<ResidualStack>>) = match residuals {
            Some(res) => (
                Some(res.iter().map(|r| r.uncond.clone()).collect()),
                Some(res.iter().map(|r| r.cond.clone()).collect()),
            ),
            None => (None, None),
        };
        let denoiser = &self.models.denoiser;
        let eps_uncond = denoiser.predict(&latents.frames, timestep, &embeddings.uncond, uncond_res.as_deref())?;
        let eps_cond = denoiser.predict(&latents.frames, timestep, &embeddings.cond, cond_res.as_deref())?;
        let frames = latents
            .frames
            .iter()
            .zip(eps_uncond.iter().zip(&eps_cond))
            .map(|(x, (eu, ec))| {
                let eps = eu + &((ec - eu) * guidance_scale);
                guided_update(scheduler, x, &eps, timestep)
            })
            .collect::<Result<_>>()?;
        Ok(FrameLatents { frames })
    }

    /// Decodes and clamps each frame to `[0, 1]`.
    pub fn decode(&self, latents: &FrameLatents, frame_rate: f64) -> VideoFrames {
        let frames = latents
            .frames
            .iter()
            .map(|l| self.models.decoder.decode(l).mapv(|v| v.clamp(0.0, 1.0)))
            .collect();
        VideoFrames { frames, frame_rate }
    }

    pub fn generate(&mut self, request: &GenerationRequest) -> Result<VideoFrames> {
        Ok(self.run(request, |_| {})?.video)
    }

    /// Full pipeline with a per-step progress callback.
    pub fn run(
        &mut self,
        request: &GenerationRequest,
        mut on_step: impl FnMut(StepProgress),
    ) -> Result<GenerationOutput> {
        let cfg = &request.config;
        cfg.validate()?;
        let started = Instant::now();

        let control = interpolate_sequence(&request.keyframes, cfg.band)?;
        let tween_ms = ms(started.elapsed());

        let motion = match cfg.motion {
            MotionSetting::Auto => infer_direction(&control),
            MotionSetting::Fixed(p) => p,
        };
        let shape = cfg.latent_shape(self.models.denoiser.latent_channels());
        let base = sample_base_latent(cfg.seed, shape)?;
        let mut latents = apply_motion(&base, cfg.total_frames, &motion)?;

        let patch = match cfg.cross_frame {
            Some(scope) => Some(patch_model(&mut self.models, scope)?),
            None => {
                unpatch_model(&mut self.models);
                None
            }
        };

        let embeddings = self.encode_prompt(&request.prompt, &request.negative_prompt, cfg.strict_tokens)?;
        let scheduler = self.scheduler(cfg.steps)?;
        let controls: Vec<&BinaryRaster> = control.frames().iter().collect();
        let denoise_start = Instant::now();
        for (step, &t) in scheduler.timesteps().iter().enumerate() {
            let with_context = |e: Error| e.at_step(step, t);
            let cond = self
                .control_residuals_batch(&latents.frames, t, &embeddings.cond, &controls, cfg.control_scale)
                .map_err(with_context)?;
            let uncond = self
                .control_residuals_batch(&latents.frames, t, &embeddings.uncond, &controls, cfg.control_scale)
                .map_err(with_context)?;
            let residuals: Vec<FrameResiduals> = cond
                .into_iter()
                .zip(uncond)
                .map(|(cond, uncond)| FrameResiduals { cond, uncond })
                .collect();
            latents = self
                .denoise_step(&scheduler, &latents, t, &embeddings, Some(&residuals), cfg.guidance_scale)
                .map_err(with_context)?;
            on_step(StepProgress {
                step: step + 1,
                total_steps: scheduler.timesteps().len(),
                timestep: t,
                elapsed: started.elapsed(),
            });
        }
        let denoise_ms = ms(denoise_start.elapsed());

        let decode_start = Instant::now();
        let video = self.decode(&latents, cfg.frame_rate);
        let decode_ms = ms(decode_start.elapsed());

        Ok(GenerationOutput {
            control,
            motion,
            patch,
            video,
            timings: Timings {
                tween_ms,
                denoise_ms,
                decode_ms,
                total_ms: ms(started.elapsed()),
            },
        })
    }

    /// Plain text-to-image generation of every frame on its own, from the
    /// same shared (motion-warped) initial latents and without control.
    pub fn generate_per_frame_baseline(&mut self, request: &GenerationRequest) -> Result<VideoFrames> {
        let cfg = &request.config;
        cfg.validate()?;
        let motion = match cfg.motion {
            MotionSetting::Auto => infer_direction(&interpolate_sequence(&request.keyframes, cfg.band)?),
            MotionSetting::Fixed(p) => p,
        };
        let shape = cfg.latent_shape(self.models.denoiser.latent_channels());
        let base = sample_base_latent(cfg.seed, shape)?;
        let initial = apply_motion(&base, cfg.total_frames, &motion)?;
        unpatch_model(&mut self.models);
        let embeddings = self.encode_prompt(&request.prompt, &request.negative_prompt, cfg.strict_tokens)?;
        let scheduler = self.scheduler(cfg.steps)?;

        let mut decoded = Vec::with_capacity(initial.len());
        for (f, latent) in initial.frames.into_iter().enumerate() {
            let mut single = FrameLatents { frames: vec![latent] };
            for &t in scheduler.timesteps() {
                single = self
                    .denoise_step(&scheduler, &single, t, &embeddings, None, cfg.guidance_scale)
                    .map_err(|e| e.at_frame(f))?;
            }
            decoded.extend(self.decode(&single, cfg.frame_rate).frames);
        }
        Ok(VideoFrames {
            frames: decoded,
            frame_rate: cfg.frame_rate,
        })
    }
}

fn guided_update(scheduler: &DdimScheduler, x: &LatentGrid, eps: &Array3<f64>, timestep: usize) -> Result<LatentGrid> {
    let sample = x.values();
    if sample.dim() != eps.dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise {:?} vs latent {:?}",
            eps.dim(),
            sample.dim()
        )));
    }
    let a_t = scheduler.alpha_cumprod(timestep);
    let a_prev = scheduler.alpha_cumprod_prev(timestep);
    let mut out = sample.clone();
    out.zip_mut_with(eps, |xv, &e| *xv = DdimScheduler::step_value(a_t, a_prev, e, *xv));
    Ok(LatentGrid::new_unchecked(out))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
