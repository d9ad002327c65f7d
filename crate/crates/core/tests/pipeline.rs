use stf_core::latent::{apply_motion, sample_base_latent};
use stf_core::model::{SpyControl, ToyModels};
use stf_core::pipeline::PromptEmbeddings;
use stf_core::scenes::walking_trio;
use stf_core::{
    Error, GenerationConfig, GenerationRequest, MotionParams, MotionSetting, Pipeline, RequestDocument,
};

const PROMPT: &str = "A man walking on the beach in front of the ocean";

fn toy_pipeline(seed: u64) -> Pipeline {
    Pipeline::new(ToyModels::from_seed(seed).into_bundle(&format!("toy:{seed}")))
}

fn request(frames: usize, res: usize, steps: usize) -> GenerationRequest {
    let mut cfg = GenerationConfig::new(frames, (res, res));
    cfg.steps = steps;
    cfg.seed = 3;
    let seq = if frames >= 3 {
        walking_trio(frames, (res, res)).unwrap()
    } else {
        let one = walking_trio(3, (res, res)).unwrap().keyframes()[0].clone();
        stf_core::validate_sequence(vec![one], frames).unwrap()
    };
    GenerationRequest::new(PROMPT, "", seq, cfg).unwrap()
}

fn max_abs_diff(a: &stf_core::VideoFrames, b: &stf_core::VideoFrames) -> f64 {
    a.frames
        .iter()
        .zip(&b.frames)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn guidance_extremes_select_one_branch() {
    let p = toy_pipeline(1);
    let emb = p.encode_prompt(PROMPT, "blurry", false).unwrap();
    let sched = p.scheduler(4).unwrap();
    let t = sched.timesteps()[1];
    let base = sample_base_latent(5, (4, 4, 4)).unwrap();
    let latents = apply_motion(&base, 2, &MotionParams::disabled()).unwrap();

    let only = |e: &ndarray::Array2<f64>| PromptEmbeddings {
        cond: e.clone(),
        uncond: e.clone(),
        truncated: false,
    };
    let cond_only = p.denoise_step(&sched, &latents, t, &only(&emb.cond), None, 3.0).unwrap();
    let uncond_only = p.denoise_step(&sched, &latents, t, &only(&emb.uncond), None, 3.0).unwrap();
    let g1 = p.denoise_step(&sched, &latents, t, &emb, None, 1.0).unwrap();
    let g0 = p.denoise_step(&sched, &latents, t, &emb, None, 0.0).unwrap();
    for f in 0..2 {
        let d1 = (g1.frames[f].values() - cond_only.frames[f].values()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        let d0 = (g0.frames[f].values() - uncond_only.frames[f].values()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(d1 < 1e-12 && d0 < 1e-12, "{d1} {d0}");
    }
}

#[test]
fn denoise_step_rejects_foreign_timestep() {
    let p = toy_pipeline(1);
    let emb = p.encode_prompt(PROMPT, "", false).unwrap();
    let sched = p.scheduler(4).unwrap();
    let latents = apply_motion(&sample_base_latent(0, (4, 2, 2)).unwrap(), 1, &MotionParams::disabled()).unwrap();
    let err = p.denoise_step(&sched, &latents, 7, &emb, None, 1.0).unwrap_err();
    assert!(matches!(err, Error::ScheduleExhausted { timestep: 7 }));
}

#[test]
fn control_scale_zero_gives_zero_residuals() {
    let p = toy_pipeline(2);
    let req = request(3, 32, 1);
    let emb = p.encode_prompt(PROMPT, "", false).unwrap();
    let latent = sample_base_latent(0, (4, 4, 4)).unwrap();
    let control = req.keyframes.keyframes()[0].grid();
    let r = p.control_residuals(&latent, 1, &emb.cond, control, 0.0).unwrap();
    assert!(r.is_all_zero());
    let r = p.control_residuals(&latent, 1, &emb.cond, control, 1.0).unwrap();
    assert!(!r.is_all_zero());
    let wrong = sample_base_latent(0, (4, 8, 8)).unwrap();
    assert!(matches!(
        p.control_residuals(&wrong, 1, &emb.cond, control, 1.0),
        Err(Error::ResolutionMismatch { .. })
    ));
}

#[test]
fn strict_prompt_limit() {
    let p = toy_pipeline(0);
    let long = "word ".repeat(2000);
    assert!(matches!(p.encode_prompt(&long, "", true), Err(Error::TokenLimitExceeded { .. })));
    let emb = p.encode_prompt(&long, "", false).unwrap();
    assert!(emb.truncated);
    assert_eq!(emb.cond.dim(), emb.uncond.dim());
    assert!(matches!(p.encode_prompt("  ", "", false), Err(Error::EmptyPrompt)));
}

#[test]
fn single_frame_degenerates_to_one_image() {
    let mut p = toy_pipeline(4);
    let out = p.generate(&request(1, 32, 2)).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out.frames[0].dim(), (32, 32, 3));
}

#[test]
fn generate_is_deterministic_and_leaves_weights_untouched() {
    let mut p = toy_pipeline(7);
    let before = p.models().denoiser.weights_fingerprint();
    let req = request(4, 32, 3);
    let a = p.generate(&req).unwrap();
    let b = p.generate(&req).unwrap();
    assert_eq!(a, b);
    assert_eq!(p.models().denoiser.weights_fingerprint(), before);
    assert!(a.frames.iter().all(|f| f.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn zeroed_control_without_patching_matches_per_frame_generation() {
    let mut p = toy_pipeline(5);
    p.models_mut().control.zero_output_projections();
    let mut req = request(4, 32, 3);
    req.config.cross_frame = None;
    req.config.motion = MotionSetting::Fixed(MotionParams::new(0.5, (1.0, 0.0)).unwrap());
    let video = p.generate(&req).unwrap();
    let baseline = p.generate_per_frame_baseline(&req).unwrap();
    assert!(max_abs_diff(&video, &baseline) <= 1e-5);
}

#[test]
fn spy_sees_matching_control_frame_each_step() {
    let mut models = ToyModels::from_seed(7).into_bundle("toy:7");
    let (spy, log) = SpyControl::wrap(models.control);
    models.control = Box::new(spy);
    let mut p = Pipeline::new(models);
    let req = request(4, 32, 3);
    let out = p.run(&req, |_| {}).unwrap();
    let calls = log.lock().unwrap();
    let timesteps = p.scheduler(3).unwrap().timesteps().to_vec();
    // Two guidance branches per step, one call per frame in each.
    assert_eq!(calls.len(), timesteps.len() * 2 * 4);
    for (i, call) in calls.iter().enumerate() {
        assert_eq!(call.timestep, timesteps[i / 8]);
        assert_eq!(&call.control, &out.control.frames()[call.frame]);
    }
}

#[test]
fn progress_reports_every_step() {
    let mut p = toy_pipeline(1);
    let mut seen = Vec::new();
    p.run(&request(3, 32, 4), |s| seen.push((s.step, s.total_steps))).unwrap();
    assert_eq!(seen, vec![(1, 4), (2, 4), (3, 4), (4, 4)]);
}

#[test]
fn out_of_range_control_scale_is_rejected() {
    let mut p = toy_pipeline(1);
    let mut req = request(3, 32, 2);
    req.config.control_scale = 5.0;
    assert!(matches!(p.generate(&req), Err(Error::InvalidConfig(_))));
}

#[test]
fn request_documents_resolve_to_the_same_generation() {
    let json = r#"{
        "prompt": "A man walking on the beach in front of the ocean",
        "total_frames": 3, "resolution": [32, 32], "steps": 2, "seed": 3, "model": "toy:7",
        "keyframes": [
            {"frame_index": 0, "strokes": [{"points": [[0.2, 0.2], [0.2, 0.8]], "width": 2}]},
            {"frame_index": 2, "strokes": [{"points": [[0.7, 0.2], [0.7, 0.8]], "width": 2}]}
        ]}"#;
    let doc = RequestDocument::from_json(json.as_bytes()).unwrap();
    let req = doc.resolve().unwrap();
    let mut p = Pipeline::from_model_id(&doc.model, None).unwrap();
    let a = p.generate(&req).unwrap();
    let b = Pipeline::from_model_id("toy:7", None).unwrap().generate(&req).unwrap();
    assert_eq!(a, b);
}

#[test]
fn serialized_weights_load_by_id() {
    let dir = tempfile::tempdir().unwrap();
    ToyModels::from_seed(11).save(&dir.path().join("local-weights.json")).unwrap();
    let from_file = stf_core::load_models("local-weights", Some(dir.path())).unwrap();
    let seeded = stf_core::load_models("toy:11", None).unwrap();
    assert_eq!(from_file.denoiser.weights_fingerprint(), seeded.denoiser.weights_fingerprint());
    assert!(matches!(stf_core::load_models("missing", Some(dir.path())), Err(Error::UnknownModel(_))));
    assert!(matches!(stf_core::load_models("toy:x", None), Err(Error::UnknownModel(_))));
}
