//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! runtime budget. Exits non-zero if any criterion fails.
//!
//! Oracles here are written independently of the library code they check:
//! brute-force distance transforms, dense softmax loops, a per-frame DDIM
//! loop built directly on the model traits, and pixel-centroid measurements.

use base64::Engine;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use stf_core::attention::{cache_first_frame, cross_frame_attend, self_attention, AttentionTensors};
use stf_core::latent::{motion_offset, sample_base_latent, warp, LatentGrid, MotionParams};
use stf_core::model::{SpyControl, ToyModels};
use stf_core::schedule::{DdimConfig, DdimScheduler};
use stf_core::scenes::{stick_figure, walking_trio};
use stf_core::sketch::{rasterize_stroke_set, validate_sequence, KeyframeSketch, Stroke};
use stf_core::tween::{distance_transform_raster, interpolate_sequence};
use stf_core::{BinaryRaster, GenerationConfig, GenerationRequest, MotionSetting, Pipeline};

const PROMPT: &str = "A man walking on the beach in front of the ocean";

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Id, name, runtime limit in seconds, check.
type Criterion = (&'static str, &'static str, f64, fn() -> Outcome);

fn main() {
    // `cargo test -- --list` and friends probe test binaries; answer politely.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 9] = [
        ("A1", "endpoint fidelity", 5.0, a1_endpoint_fidelity),
        ("A2", "stick-figure motion", 5.0, a2_stick_figure_motion),
        ("A3", "distance transform oracle", 30.0, a3_distance_transform),
        ("A4", "cross-frame attention oracle", 10.0, a4_cross_frame_attention),
        ("A5", "zero-control neutrality", 60.0, a5_zero_control_neutrality),
        ("A6", "warp invariants", 5.0, a6_warp_invariants),
        ("A7", "end-to-end toy pipeline", 60.0, a7_end_to_end),
        ("A8", "service round trip", 120.0, a8_service_round_trip),
        ("A9", "CLI/service parity", 120.0, a9_cli_service_parity),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(detail) if secs >= limit => Err(format!("{detail}; took {secs:.2}s, over the {limit}s budget")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("{id} PASS {name} ({secs:.2}s < {limit}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name} ({secs:.2}s, budget {limit}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    (0..rng.random_range(1..=3))
        .map(|_| Stroke {
            points: (0..rng.random_range(2..=4))
                .map(|_| [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)])
                .collect(),
            width: rng.random_range(1.0..3.0),
        })
        .collect()
}

fn translated(strokes: &[Stroke], dx: f64, dy: f64) -> Vec<Stroke> {
    strokes
        .iter()
        .map(|s| Stroke {
            points: s.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            width: s.width,
        })
        .collect()
}

fn a1_endpoint_fidelity() -> Outcome {
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = rng.random_range(1..=16usize);
        let count = rng.random_range(1..=5usize.min(total));
        let mut indices = rand::seq::index::sample(&mut rng, total, count).into_vec();
        indices.sort_unstable();
        let shape = random_shape(&mut rng);
        let keyframes: Vec<KeyframeSketch> = indices
            .iter()
            .map(|&i| {
                let moved = translated(&shape, rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
                KeyframeSketch::new(rasterize_stroke_set(&moved, (64, 64)).unwrap(), i).unwrap()
            })
            .collect();
        let seq = validate_sequence(keyframes.clone(), total).map_err(|e| format!("seed {seed}: {e}"))?;
        let control = interpolate_sequence(&seq, 1.0).map_err(|e| format!("seed {seed}: {e}"))?;
        check(control.len() == total, || format!("seed {seed}: {} frames, expected {total}", control.len()))?;
        for kf in &keyframes {
            let out = &control.frames()[kf.frame_index()];
            let iou = out.iou(kf.grid());
            check(iou == 1.0 && out == kf.grid(), || {
                format!("seed {seed}: frame {} IoU {iou}", kf.frame_index())
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} keyframes over 20 seeds, IoU exactly 1"))
}

fn column_centroid(grid: &BinaryRaster) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if grid.get(r, c) {
                sum += c as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn a2_stick_figure_motion() -> Outcome {
    let res = (128, 128);
    let keyframes: Vec<KeyframeSketch> = [(0, 0.2), (4, 0.5), (8, 0.8)]
        .into_iter()
        .map(|(i, x)| KeyframeSketch::new(rasterize_stroke_set(&stick_figure(x, 3.0), res).unwrap(), i).unwrap())
        .collect();
    let seq = validate_sequence(keyframes.clone(), 9).map_err(|e| e.to_string())?;
    let control = interpolate_sequence(&seq, 1.0).map_err(|e| e.to_string())?;
    check(control.len() == 9, || format!("{} frames", control.len()))?;
    let xs: Vec<f64> = control
        .frames()
        .iter()
        .enumerate()
        .map(|(k, f)| column_centroid(f).ok_or_else(|| format!("frame {k} is empty")))
        .collect::<Result<_, _>>()?;
    check(xs.windows(2).all(|w| w[1] > w[0]), || format!("centroid columns not increasing: {xs:?}"))?;
    let expected = column_centroid(keyframes[2].grid()).unwrap() - column_centroid(keyframes[0].grid()).unwrap();
    let total = xs[8] - xs[0];
    let rel = (total - expected).abs() / expected;
    check(rel <= 0.10, || format!("displacement {total:.2} vs keyframes {expected:.2}"))?;
    Ok(format!("columns {:.1} .. {:.1}, displacement error {:.1}%", xs[0], xs[8], rel * 100.0))
}

fn brute_force_distance(grid: &BinaryRaster) -> Vec<f64> {
    let strokes: Vec<(i64, i64)> = (0..grid.height())
        .flat_map(|r| (0..grid.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| grid.get(r, c))
        .map(|(r, c)| (r as i64, c as i64))
        .collect();
    let mut out = Vec::with_capacity(grid.height() * grid.width());
    for r in 0..grid.height() as i64 {
        for c in 0..grid.width() as i64 {
            let best = strokes
                .iter()
                .map(|&(sr, sc)| (sr - r).pow(2) + (sc - c).pow(2))
                .min()
                .unwrap();
            out.push((best as f64).sqrt());
        }
    }
    out
}

fn a3_distance_transform() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..50 {
        let density = rng.random_range(0.002..0.3);
        let mut grid = BinaryRaster::from_fn(32, 32, |_, _| rng.random_bool(density));
        if grid.is_empty() {
            grid.set(rng.random_range(0..32), rng.random_range(0..32), true);
        }
        let field = distance_transform_raster(&grid).map_err(|e| e.to_string())?;
        let oracle = brute_force_distance(&grid);
        if let Some(p) = field.values().iter().zip(&oracle).position(|(a, b)| a != b) {
            return Err(format!("sketch {i}: pixel {p} is {} vs oracle {}", field.values()[p], oracle[p]));
        }
    }
    Ok("50 random 32x32 sketches, exact equality".into())
}

fn dense_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len()).map(|d| e.iter().zip(v).map(|(w, vj)| w / z * vj[d]).sum()).collect()
        })
        .collect()
}

fn rows(a: &Array3<f64>, f: usize) -> Vec<Vec<f64>> {
    a.index_axis(ndarray::Axis(0), f).rows().into_iter().map(|r| r.to_vec()).collect()
}

fn a4_cross_frame_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let (n, t, d) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=8));
        let mut rand3 = || Array3::from_shape_simple_fn((n, t, d), || rng.random_range(-3.0..3.0));
        let tensors = AttentionTensors::new(rand3(), rand3(), rand3()).map_err(|e| e.to_string())?;
        let ctx = cache_first_frame(&tensors, "site").map_err(|e| e.to_string())?;
        let out = cross_frame_attend(&tensors, &ctx).map_err(|e| e.to_string())?;
        let (k1, v1) = (rows(&tensors.k, 0), rows(&tensors.v, 0));
        for f in 0..n {
            let oracle = dense_attention(&rows(&tensors.q, f), &k1, &v1, tensors.scale);
            for (row, orow) in rows(&out, f).iter().zip(&oracle) {
                for (a, b) in row.iter().zip(orow) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        check(worst <= 1e-6, || format!("case {case}: max abs diff {worst:e}"))?;
    }

    // Identical frames: every output equals frame 1's ordinary self-attention.
    let mut identical_worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, t, d) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=8));
        let mut one = || ndarray::Array2::from_shape_simple_fn((t, d), || rng.random_range(-3.0..3.0));
        let (q, k, v) = (one(), one(), one());
        let stack = |m: &ndarray::Array2<f64>| {
            ndarray::stack(ndarray::Axis(0), &vec![m.view(); n]).unwrap()
        };
        let tensors = AttentionTensors::new(stack(&q), stack(&k), stack(&v)).map_err(|e| e.to_string())?;
        let ctx = cache_first_frame(&tensors, "site").map_err(|e| e.to_string())?;
        let out = cross_frame_attend(&tensors, &ctx).map_err(|e| e.to_string())?;
        let reference = self_attention(q.view(), k.view(), v.view(), tensors.scale);
        for f in 0..n {
            let diff = (&out.index_axis(ndarray::Axis(0), f) - &reference).mapv(f64::abs);
            identical_worst = identical_worst.max(diff.fold(0.0, |a: f64, &b| a.max(b)));
        }
    }
    check(identical_worst <= 1e-6, || format!("identical frames differ by {identical_worst:e}"))?;
    Ok(format!("200 random batches, max diff {worst:.1e}; identical frames {identical_worst:.1e}"))
}

/// Text-to-image for each frame on its own, written against the model
/// traits with no pipeline code involved.
fn per_frame_oracle(seed: u64, request: &GenerationRequest, motion: &MotionParams) -> Vec<Array3<f64>> {
    let bundle = ToyModels::from_seed(seed).into_bundle("oracle");
    let cfg = &request.config;
    let enc = &bundle.text_encoder;
    let cond = enc.embed(&enc.tokenize(&request.prompt));
    let uncond = enc.embed(&enc.tokenize(&request.negative_prompt));
    let sched = DdimScheduler::new(cfg.steps, DdimConfig::default()).unwrap();
    let shape = (bundle.denoiser.latent_channels(), cfg.resolution.0 / 8, cfg.resolution.1 / 8);
    let base = sample_base_latent(cfg.seed, shape).unwrap();
    (1..=cfg.total_frames)
        .map(|k| {
            let mut x = warp(&base, motion_offset(k, motion).unwrap()).into_inner();
            for &t in sched.timesteps() {
                let frame = [LatentGrid::new(x.clone()).unwrap()];
                let eu = bundle.denoiser.predict(&frame, t, &uncond, None).unwrap().remove(0);
                let ec = bundle.denoiser.predict(&frame, t, &cond, None).unwrap().remove(0);
                let (a_t, a_prev) = (sched.alpha_cumprod(t), sched.alpha_cumprod_prev(t));
                ndarray::Zip::from(&mut x).and(&eu).and(&ec).for_each(|x, &u, &c| {
                    let eps = u + cfg.guidance_scale * (c - u);
                    let x0 = (*x - (1.0 - a_t).sqrt() * eps) / a_t.sqrt();
                    *x = a_prev.sqrt() * x0 + (1.0 - a_prev).sqrt() * eps;
                });
            }
            bundle.decoder.decode(&LatentGrid::new(x).unwrap()).mapv(|v| v.clamp(0.0, 1.0))
        })
        .collect()
}

fn a7_request() -> GenerationRequest {
    let mut cfg = GenerationConfig::new(4, (64, 64));
    cfg.steps = 5;
    cfg.seed = 7;
    GenerationRequest::new(PROMPT, "", walking_trio(4, (64, 64)).unwrap(), cfg).unwrap()
}

fn a5_zero_control_neutrality() -> Outcome {
    let model_seed = 7;
    let mut request = a7_request();
    request.config.cross_frame = None;
    let motion = MotionParams::new(0.75, (1.0, 0.0)).unwrap();
    request.config.motion = MotionSetting::Fixed(motion);

    let mut bundle = ToyModels::from_seed(model_seed).into_bundle("toy:7");
    bundle.control.zero_output_projections();
    let mut pipeline = Pipeline::new(bundle);
    let video = pipeline.generate(&request).map_err(|e| e.to_string())?;
    let oracle = per_frame_oracle(model_seed, &request, &motion);
    check(video.len() == oracle.len(), || "frame count differs".into())?;
    let diff = video
        .frames
        .iter()
        .zip(&oracle)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    check(diff <= 1e-5, || format!("max abs diff {diff:e}"))?;

    // The same request with live control must differ, or the check above is vacuous.
    let mut live = Pipeline::from_model_id("toy:7", None).map_err(|e| e.to_string())?;
    let controlled = live.generate(&request).map_err(|e| e.to_string())?;
    let live_diff = controlled
        .frames
        .iter()
        .zip(&oracle)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    check(live_diff > 1e-3, || format!("live control changed nothing ({live_diff:e})"))?;
    Ok(format!("max abs diff {diff:.1e} (live control moves output by {live_diff:.2})"))
}

fn a6_warp_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..40 {
        let (c, h, w) = (rng.random_range(1..=4), rng.random_range(4..=16), rng.random_range(4..=16));
        let x = sample_base_latent(case, (c, h, w)).unwrap();
        check(warp(&x, (0.0, 0.0)) == x, || format!("case {case}: zero offset is not the identity"))?;

        let (dx, dy) = (rng.random_range(-3i64..=3), rng.random_range(-3i64..=3));
        let shifted = warp(&x, (dx as f64, dy as f64));
        for ch in 0..c {
            for yy in 0..h as i64 {
                for xx in 0..w as i64 {
                    let (sy, sx) = (yy - dy, xx - dx);
                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                        continue;
                    }
                    let got = shifted.values()[[ch, yy as usize, xx as usize]];
                    let want = x.values()[[ch, sy as usize, sx as usize]];
                    check(got == want, || format!("case {case}: shift ({dx},{dy}) at ({xx},{yy}) gave {got} not {want}"))?;
                }
            }
        }

        let twice = warp(&warp(&x, (1.0, 0.0)), (2.0, 0.0));
        let once = warp(&x, (3.0, 0.0));
        for ch in 0..c {
            for yy in 0..h {
                for xx in 3..w {
                    check(twice.values()[[ch, yy, xx]] == once.values()[[ch, yy, xx]], || {
                        format!("case {case}: composition differs at ({xx},{yy})")
                    })?;
                }
            }
        }
    }
    Ok("40 random latents: identity, integer shifts and composition exact".into())
}

fn a7_end_to_end() -> Outcome {
    let request = a7_request();
    let mut bundle = stf_core::load_models("toy:7", None).map_err(|e| e.to_string())?;
    let (spy, log) = SpyControl::wrap(bundle.control);
    bundle.control = Box::new(spy);
    let mut pipeline = Pipeline::new(bundle);
    let out = pipeline.run(&request, |_| {}).map_err(|e| e.to_string())?;
    let video = &out.video;
    check(video.len() == 4, || format!("{} frames", video.len()))?;
    for (i, f) in video.frames.iter().enumerate() {
        check(f.dim() == (64, 64, 3), || format!("frame {i} has shape {:?}", f.dim()))?;
        check(f.iter().all(|v| (0.0..=1.0).contains(v)), || format!("frame {i} leaves [0, 1]"))?;
    }
    let rerun = pipeline.generate(&request).map_err(|e| e.to_string())?;
    check(&rerun == video, || "rerun is not bit-identical".into())?;

    let timesteps = DdimScheduler::new(5, DdimConfig::default()).unwrap().timesteps().to_vec();
    let calls = log.lock().unwrap();
    // First run only; the rerun logged the same again.
    let first_run = &calls[..calls.len() / 2];
    for &t in &timesteps {
        for k in 0..4 {
            let at_t: Vec<_> = first_run.iter().filter(|c| c.timestep == t && c.frame == k).collect();
            check(!at_t.is_empty(), || format!("no control call for frame {k} at t={t}"))?;
            check(at_t.iter().all(|c| c.control == out.control.frames()[k]), || {
                format!("frame {k} at t={t} saw another frame's control image")
            })?;
        }
    }
    check(first_run.iter().all(|c| timesteps.contains(&c.timestep)), || "control called off-schedule".into())?;
    Ok(format!("4x64x64x3 in [0,1], rerun identical, {} spy calls bound", first_run.len()))
}

struct Service {
    child: Child,
    base: String,
}

impl Service {
    fn start(data_dir: &Path) -> Result<Self, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_stf"))
            .args(["serve", "--addr", "127.0.0.1:0", "--data-dir"])
            .arg(data_dir)
            .env_remove("STF_MODEL_DIR")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| format!("unexpected banner `{line}`"))?
            .to_string();
        Ok(Self { child, base })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap()
}

fn submit(client: &reqwest::blocking::Client, svc: &Service, doc: &Value) -> Result<String, String> {
    let res = client.post(svc.url("/jobs")).json(doc).send().map_err(|e| e.to_string())?;
    let status = res.status();
    let body: Value = res.json().map_err(|e| e.to_string())?;
    check(status.as_u16() == 202, || format!("submit returned {status}: {body}"))?;
    Ok(body["job_id"].as_str().unwrap().to_string())
}

fn status_of(client: &reqwest::blocking::Client, svc: &Service, id: &str) -> Result<Value, String> {
    client
        .get(svc.url(&format!("/jobs/{id}")))
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())
}

fn a7_document(keyframes: Vec<Value>) -> Value {
    json!({
        "prompt": PROMPT,
        "total_frames": 4,
        "resolution": [64, 64],
        "steps": 5,
        "seed": 7,
        "model": "toy:7",
        "keyframes": keyframes,
    })
}

fn stroke_keyframes(total: usize) -> Vec<Value> {
    let last = total - 1;
    [(0, 0.2), (last / 2, 0.5), (last, 0.8)]
        .into_iter()
        .map(|(i, x)| json!({"frame_index": i, "strokes": stick_figure(x, 1.5)}))
        .collect()
}

fn a8_service_round_trip() -> Outcome {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let client = http();
    let svc = Service::start(data.path())?;

    // A slower job ahead in the queue keeps the A7 job visibly queued first.
    let mut blocker = a7_document(stroke_keyframes(6));
    blocker["total_frames"] = json!(6);
    blocker["resolution"] = json!([128, 128]);
    blocker["steps"] = json!(15);
    let blocker_id = submit(&client, &svc, &blocker)?;
    let id = submit(&client, &svc, &a7_document(stroke_keyframes(4)))?;

    let mut seen: Vec<String> = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let blocker_state = status_of(&client, &svc, &blocker_id)?["status"].as_str().unwrap_or("").to_string();
        let rec = status_of(&client, &svc, &id)?;
        let s = rec["status"].as_str().unwrap_or("?").to_string();
        check(!(s == "running" && blocker_state == "running"), || "two jobs running at once".into())?;
        if seen.last() != Some(&s) {
            seen.push(s.clone());
        }
        if s == "done" || s == "failed" {
            check(s == "done", || format!("job failed: {}", rec["error_message"]))?;
            break;
        }
        check(Instant::now() < deadline, || format!("job stuck; statuses {seen:?}"))?;
        std::thread::sleep(Duration::from_millis(2));
    }
    check(seen == ["queued", "running", "done"], || format!("observed transitions {seen:?}"))?;

    let video = client
        .get(svc.url(&format!("/jobs/{id}/video")))
        .send()
        .and_then(|r| r.bytes())
        .map_err(|e| e.to_string())?;
    let magic_ok = video.starts_with(b"GIF87a") || video.starts_with(b"GIF89a") || (video.len() > 8 && &video[4..8] == b"ftyp");
    check(!video.is_empty() && magic_ok, || format!("video has {} bytes without GIF/MP4 magic", video.len()))?;

    // Kill while a long job runs; the restart sweep must fail it and still run the one queued behind it.
    let mut long = a7_document(stroke_keyframes(9));
    long["total_frames"] = json!(9);
    long["resolution"] = json!([256, 256]);
    long["steps"] = json!(200);
    let long_id = submit(&client, &svc, &long)?;
    let after_id = submit(&client, &svc, &a7_document(stroke_keyframes(4)))?;
    let deadline = Instant::now() + Duration::from_secs(30);
    while status_of(&client, &svc, &long_id)?["status"] != "running" {
        check(Instant::now() < deadline, || "long job never started".into())?;
        std::thread::sleep(Duration::from_millis(5));
    }
    svc.kill();

    let svc = Service::start(data.path())?;
    let rec = status_of(&client, &svc, &long_id)?;
    check(rec["status"] == "failed", || format!("orphaned job is {}", rec["status"]))?;
    let note = rec["error_message"].as_str().unwrap_or("");
    check(note.contains("restart"), || format!("sweep note `{note}`"))?;
    let res = client.get(svc.url(&format!("/jobs/{long_id}/video"))).send().map_err(|e| e.to_string())?;
    check(res.status().as_u16() == 409, || format!("video of failed job returned {}", res.status()))?;
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let s = status_of(&client, &svc, &after_id)?["status"].clone();
        if s == "done" {
            break;
        }
        check(s != "failed" && Instant::now() < deadline, || format!("requeued job ended {s}"))?;
        std::thread::sleep(Duration::from_millis(20));
    }
    let first = status_of(&client, &svc, &id)?;
    check(first["status"] == "done", || "finished job changed after restart".into())?;
    Ok(format!(
        "observed {}, {}-byte GIF, orphan swept to failed, queued job resumed",
        seen.join("->"),
        video.len()
    ))
}

fn a9_cli_service_parity() -> Outcome {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kf_dir = work.path().join("kf");
    let st = Command::new(env!("CARGO_BIN_EXE_stf"))
        .args(["sketches", "--frames", "9", "--resolution", "64x64", "--out"])
        .arg(&kf_dir)
        .stdout(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    check(st.success(), || "sketch export failed".into())?;
    let paths: Vec<(usize, PathBuf)> = [0, 4, 8].map(|i| (i, kf_dir.join(format!("keyframe_{i:04}.png")))).to_vec();

    let cli_out = work.path().join("cli");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stf"));
    cmd.args(["generate", "--prompt", PROMPT, "--frames", "9", "--resolution", "64x64", "--steps", "4"])
        .args(["--seed", "11", "--model", "toy:7", "--motion", "auto", "--out"])
        .arg(&cli_out)
        .env_remove("STF_MODEL_DIR")
        .stderr(Stdio::null());
    for (i, p) in &paths {
        cmd.arg("--keyframe").arg(format!("{i}:{}", p.display()));
    }
    check(cmd.status().map_err(|e| e.to_string())?.success(), || "CLI generate failed".into())?;

    let b64 = base64::engine::general_purpose::STANDARD;
    let keyframes: Vec<Value> = paths
        .iter()
        .map(|(i, p)| json!({"frame_index": i, "png_base64": b64.encode(std::fs::read(p).unwrap())}))
        .collect();
    let doc = json!({
        "prompt": PROMPT, "total_frames": 9, "resolution": [64, 64], "steps": 4, "seed": 11,
        "model": "toy:7", "motion": "auto", "keyframes": keyframes,
    });
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let client = http();
    let svc = Service::start(data.path())?;
    let id = submit(&client, &svc, &doc)?;
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let rec = status_of(&client, &svc, &id)?;
        if rec["status"] == "done" {
            break;
        }
        check(rec["status"] != "failed" && Instant::now() < deadline, || format!("service job: {rec}"))?;
        std::thread::sleep(Duration::from_millis(20));
    }

    let job_frames = data.path().join("jobs").join(&id).join("frames");
    for k in 0..9 {
        let name = format!("frame_{k:04}.png");
        let a = std::fs::read(cli_out.join("frames").join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(job_frames.join(&name)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{name} differs between CLI and service"))?;
    }
    let video = client
        .get(svc.url(&format!("/jobs/{id}/video")))
        .send()
        .and_then(|r| r.bytes())
        .map_err(|e| e.to_string())?;
    let cli_video = std::fs::read(cli_out.join("video.gif")).map_err(|e| e.to_string())?;
    check(video.as_ref() == cli_video.as_slice(), || "videos differ".into())?;
    Ok("9 frame PNGs and the GIF are byte-identical".into())
}
