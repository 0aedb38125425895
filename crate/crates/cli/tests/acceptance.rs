// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line each with its wall time against the budget, and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speaking_images::animation::{animate_chunks, expected_frames, AnimationOptions, PortraitAnimator};
use speaking_images::backend::BackendError;
use speaking_images::backends::mock::{MockAnimator, MockDetector, MockTts, MockVlm};
use speaking_images::backends::BackendSet;
use speaking_images::codec::{decode_artifact_name, decode_with_extension, encode_artifact_name, ArtifactName};
use speaking_images::compositor::{compose_video, insert_region};
use speaking_images::container::read_mp4;
use speaking_images::dataset::{load_dataset_manifest, metadata_for};
use speaking_images::evaluation::{
    benchmark_detectors, fid_score, frechet_distance, load_embedding_fixtures, match_detections, psnr, AnnotatedImage,
    ConfusionCounts, GaussianSummary,
};
use speaking_images::face::{clamp_box, crop_face, square_box, DetectorCapabilities, FaceDetector, RawDetection};
use speaking_images::image::ImageBuffer;
use speaking_images::manifest::{NarrationStatus, RunManifest};
use speaking_images::model::{ArtworkMetadata, AssetKind, BoundingBox, Gender};
use speaking_images::narration::{
    classify_answer, count_sentences, enforce_length, narrate, strip_note, NarrationConfig, NarrationRequest, PromptMode,
    PromptSpec, VisionLanguageModel,
};
use speaking_images::pipeline::{resume, run_pipeline, PipelineConfig};
use speaking_images::voicing::{chunk_audio_aligned, AudioSegment, SpeechSynthesizer, VoiceChoice};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, f64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn run_criterion(id: u32, title: &str, budget_s: f64, body: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed().as_secs_f64();
    let (ok, detail) = match result {
        Ok(d) if elapsed < budget_s => (true, d),
        Ok(d) => (false, format!("{d}; over time budget")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {id} {} {title}: {detail} [{elapsed:.2}s / {budget_s}s]",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "geometry oracle", 5.0, geometry),
        (2, "artifact name codec round-trip", 2.0, codec),
        (3, "compositor purity", 30.0, compositor),
        (4, "metric oracles", 10.0, metrics),
        (5, "detection benchmark harness", 10.0, detection),
        (6, "narration curation", 2.0, narration),
        (7, "duration policy", 5.0, duration),
        (8, "end-to-end determinism", 60.0, end_to_end),
        (9, "resume correctness", 30.0, resume_correctness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, title, budget, body) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.to_string() == *f || title.contains(f.as_str())) {
            continue;
        }
        if !run_criterion(id, title, budget, body) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

fn floor_div(a: i64, b: i64) -> i64 {
    (a as f64 / b as f64).floor() as i64
}

/// Straight transcription of the squaring loop body, with `//` as floor
/// division.
fn square_trace(x: i64, y: i64, w: i64, h: i64) -> (i64, i64, i64, i64) {
    let size = if w > h { w } else { h };
    let x_center = x + floor_div(w, 2);
    let y_center = y + floor_div(h, 2);
    let x = x_center - floor_div(size, 2);
    let y = y_center - floor_div(size, 2);
    let (w, h) = (size, size);
    (x, y, w, h)
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let b = BoundingBox::new(
            rng.random_range(-2_000..2_000),
            rng.random_range(-2_000..2_000),
            rng.random_range(1..1_500),
            rng.random_range(1..1_500),
        );
        let s = square_box(b);
        ensure!(s.w == b.w.max(b.h) && s.h == s.w, "case {i}: side of {b} is {}x{}", s.w, s.h);
        let (x, y, w, h) = square_trace(b.x, b.y, b.w, b.h);
        ensure!(s == BoundingBox::new(x, y, w, h), "case {i}: {b} squared to {s}, trace gives ({x},{y},{w},{h})");

        let (iw, ih) = (rng.random_range(1..1_200), rng.random_range(1..1_200));
        let c = clamp_box(s, iw, ih);
        ensure!(c.is_inside(iw, ih), "case {i}: {c} not inside {iw}x{ih}");
        ensure!(c.is_square(), "case {i}: {c} not square");
        ensure!(clamp_box(c, iw, ih) == c, "case {i}: clamp not idempotent on {c}");
    }
    Ok("10000 boxes: side, trace, containment and idempotence hold".into())
}

fn random_stem(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '9', '_', '_', '-', '.', ' ', 'é', '_', 'q'];
    let n = rng.random_range(1..24);
    let mut s: String = (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect();
    if rng.random_bool(0.3) {
        // Stems that themselves look like encoded names.
        s.push_str(&format!("_{}_{}_{}_{}_{}_male", rng.random_range(0..9), 4, 4, -1, 0));
    }
    s
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut underscored = 0;
    for i in 0..10_000 {
        let a = ArtifactName {
            stem: random_stem(&mut rng),
            face_id: rng.random_range(0..1_000),
            w: rng.random_range(1..5_000),
            h: rng.random_range(1..5_000),
            x: rng.random_range(-5_000..5_000),
            y: rng.random_range(-5_000..5_000),
            gender: if rng.random_bool(0.5) { Gender::Female } else { Gender::Male },
        };
        underscored += usize::from(a.stem.contains('_'));
        let ext = ["mp4", "png", "wav"][i % 3];
        let name = encode_artifact_name(&a, ext);
        let back = decode_artifact_name(&name).map_err(|e| format!("case {i}: {name}: {e}"))?;
        ensure!(back == a, "case {i}: {name} decoded to {back:?}");
        let (_, e) = decode_with_extension(&name).map_err(|e| e.to_string())?;
        ensure!(e == ext, "case {i}: extension {e}");
    }
    Ok(format!("10000 names ({underscored} with underscores in the stem), 0 failures"))
}

fn compositor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let animator = MockAnimator::default();
    for case in 0..100 {
        let (w, h) = (rng.random_range(8..72), rng.random_range(8..72));
        let channels = if case % 10 == 0 { 1 } else { 3 };
        let seed: u8 = rng.random();
        let base = ImageBuffer::from_fn(w, h, channels, |x, y, c| {
            (x as u8).wrapping_mul(31) ^ (y as u8).wrapping_mul(17) ^ (c as u8).wrapping_mul(91) ^ seed
        });
        let side = rng.random_range(1..=w.min(h)) as i64;
        let bbox = BoundingBox::new(
            rng.random_range(0..=(w as i64 - side)),
            rng.random_range(0..=(h as i64 - side)),
            side,
            side,
        );
        let crop = crop_face(&base, bbox).map_err(|e| e.to_string())?;
        let frames = rng.random_range(1..8);
        let audio = AudioSegment::silence(16_000, frames as f64 / 25.0);
        let anim = animator.animate(&crop, &audio, 25.0).map_err(|e| e.to_string())?;
        let video = compose_video(&base, &anim, bbox).map_err(|e| e.to_string())?;
        ensure!(video.len() == anim.len(), "case {case}: {} frames for {}", video.len(), anim.len());
        for (k, f) in video.frames.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let inside = (x as i64) >= bbox.x
                        && (x as i64) < bbox.right()
                        && (y as i64) >= bbox.y
                        && (y as i64) < bbox.bottom();
                    if !inside && f.pixel(x, y) != base.pixel(x, y) {
                        return Err(format!("case {case}: frame {k} differs at ({x},{y}) outside {bbox}"));
                    }
                }
            }
        }
        let pasted = insert_region(&base, &crop, bbox).map_err(|e| e.to_string())?;
        ensure!(pasted == base, "case {case}: paste-back of the crop changed the base");
    }
    Ok("100 cases: outside-box pixels exact, paste-back identity".into())
}

fn diag(mean: &[f64], var: &[f64]) -> GaussianSummary {
    GaussianSummary {
        mean: DVector::from_column_slice(mean),
        covariance: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
    }
}

fn metrics() -> Outcome {
    let black = ImageBuffer::filled(8, 8, 3, 0);
    let white = ImageBuffer::filled(8, 8, 3, 255);
    let one = ImageBuffer::filled(8, 8, 3, 1);
    let p0 = psnr(&black, &white, 255.0).map_err(|e| e.to_string())?;
    ensure!(p0.abs() < 1e-12, "all-0 vs all-255 gave {p0}");
    let p1 = psnr(&black, &one, 255.0).map_err(|e| e.to_string())?;
    ensure!((p1 - 48.1308).abs() <= 1e-4, "MSE 1 gave {p1}");
    let pinf = psnr(&white, &white, 255.0).map_err(|e| e.to_string())?;
    ensure!(pinf == f64::INFINITY, "identical gave {pinf}");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let d = rng.random_range(1..9);
        let m1: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m2: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..9.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..9.0)).collect();
        let (g1, g2) = (diag(&m1, &v1), diag(&m2, &v2));
        let closed: f64 = (0..d)
            .map(|i| (m1[i] - m2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2))
            .sum();
        let fd = frechet_distance(&g1, &g2).map_err(|e| e.to_string())?;
        let rev = frechet_distance(&g2, &g1).map_err(|e| e.to_string())?;
        let same = frechet_distance(&g1, &g1).map_err(|e| e.to_string())?;
        ensure!((fd - closed).abs() <= 1e-6, "case {case}: {fd} vs closed form {closed}");
        ensure!((fd - rev).abs() <= 1e-6, "case {case}: asymmetric {fd} / {rev}");
        ensure!(same.abs() <= 1e-6, "case {case}: self distance {same}");
    }

    let sets = load_embedding_fixtures(&core_fixtures().join("frechet_fixtures.json")).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for (key, want) in [("paper_fid", 293.67), ("paper_fvd", 295.806)] {
        let s = sets.get(key).ok_or_else(|| format!("fixture {key} missing"))?;
        let got = fid_score(&s.real, &s.generated).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 0.01, "{key}: {got} vs {want}");
        scores.push(format!("{key}={got:.4}"));
    }
    Ok(format!("psnr 0/{p1:.4}/inf, 200 diagonal cases, {}", scores.join(" ")))
}

/// Returns scripted boxes per image stem.
struct ScriptedDetector(HashMap<String, Vec<BoundingBox>>);

impl FaceDetector for ScriptedDetector {
    fn name(&self) -> &str {
        "scripted"
    }
    fn capabilities(&self) -> DetectorCapabilities {
        DetectorCapabilities::default()
    }
    fn detect(&self, _: &ImageBuffer, source: &Path) -> Result<Vec<RawDetection>, BackendError> {
        let stem = source.file_stem().unwrap().to_string_lossy();
        Ok(self.0[stem.as_ref()]
            .iter()
            .map(|&bbox| RawDetection {
                bbox,
                gender_label: None,
                confidence: 0.9,
                yaw_degrees: None,
            })
            .collect())
    }
}

struct Failing;

impl FaceDetector for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn capabilities(&self) -> DetectorCapabilities {
        DetectorCapabilities::default()
    }
    fn detect(&self, _: &ImageBuffer, _: &Path) -> Result<Vec<RawDetection>, BackendError> {
        Err(BackendError::new("failing", "model weights missing"))
    }
}

fn detection() -> Outcome {
    let face = BoundingBox::new(10, 10, 20, 20);
    let elsewhere = BoundingBox::new(40, 40, 10, 10);
    // (stem, truth, prediction)
    let plan: Vec<(&str, Vec<BoundingBox>, Vec<BoundingBox>)> = vec![
        ("exact1", vec![face], vec![face]),
        ("exact2", vec![face], vec![face]),
        ("exact3", vec![face], vec![face]),
        ("spurious1", vec![face], vec![face, elsewhere]),
        ("spurious2", vec![face], vec![face, elsewhere]),
        ("noface1", vec![], vec![]),
        ("noface2", vec![], vec![]),
        ("noface_fp", vec![], vec![elsewhere]),
        ("missed", vec![face], vec![]),
    ];
    let corpus: Vec<AnnotatedImage> = plan
        .iter()
        .map(|(stem, truth, _)| AnnotatedImage {
            stem: stem.to_string(),
            path: PathBuf::from(format!("{stem}.png")),
            image: ImageBuffer::filled(64, 64, 3, 0),
            truth: truth.clone(),
        })
        .collect();
    let scripted = ScriptedDetector(plan.iter().map(|(s, _, p)| (s.to_string(), p.clone())).collect());
    let report = benchmark_detectors(&[&scripted, &Failing], &corpus, 0.5);
    let want = ConfusionCounts {
        tp: 5,
        fp: 3,
        fn_: 1,
        tn: 2,
    };
    ensure!(report.results.get("scripted") == Some(&want), "counts {:?}", report.results);
    ensure!(report.failures.contains_key("failing"), "failure not recorded: {:?}", report.failures);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rand_box = |rng: &mut ChaCha8Rng| {
        BoundingBox::new(
            rng.random_range(0..50),
            rng.random_range(0..50),
            rng.random_range(1..30),
            rng.random_range(1..30),
        )
    };
    for case in 0..1_000 {
        let truth: Vec<_> = (0..rng.random_range(0..6)).map(|_| rand_box(&mut rng)).collect();
        let mut pred: Vec<_> = (0..rng.random_range(0..6)).map(|_| rand_box(&mut rng)).collect();
        // Some predictions are near copies of the truth.
        for t in &truth {
            if rng.random_bool(0.5) {
                pred.push(BoundingBox::new(t.x + rng.random_range(0..3), t.y, t.w, t.h));
            }
        }
        let threshold = rng.random_range(0.05..=1.0);
        let c = match_detections(&pred, &truth, threshold);
        ensure!(c.tp + c.fn_ == truth.len() as u64, "case {case}: tp+fn {c:?} vs {} truths", truth.len());
        ensure!(c.tp + c.fp == pred.len() as u64, "case {case}: tp+fp {c:?} vs {} predictions", pred.len());
        ensure!(c.tn == u64::from(truth.is_empty() && pred.is_empty()), "case {case}: tn {c:?}");
    }
    Ok("9-image corpus tp=5 fp=3 fn=1 tn=2, failure isolated, 1000 random instances balanced".into())
}

/// Records every prompt it answers.
struct Recording {
    inner: MockVlm,
    prompts: Mutex<Vec<String>>,
}

impl VisionLanguageModel for Recording {
    fn name(&self) -> &str {
        "recording"
    }
    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.describe(request)
    }
}

fn lady() -> ArtworkMetadata {
    ArtworkMetadata {
        author: "Leonardo da Vinci".into(),
        title: "Lady with an Ermine".into(),
        year: 1489,
        source_file: "ladyermine.jpg".into(),
    }
}

fn narration() -> Outcome {
    let quoted = [
        "I cannot do that",
        "I am not able to provide information about an artwork called Ritratto di Dora Maar.",
        "I do not have access to a database that contains detailed information about this painting.",
    ];
    for q in quoted {
        ensure!(classify_answer(q) == NarrationStatus::Refusal, "not a refusal: {q}");
    }
    ensure!(
        classify_answer("I am a lady holding an ermine. The ermine is white.") == NarrationStatus::Usable,
        "plain description misclassified"
    );

    let raw = "I am the lady with the ermine. I was painted in Milan.\n\nNote: I apologize, but I am unable to provide the requested information as I am a large language model.";
    let (body, note) = strip_note(raw);
    ensure!(body == "I am the lady with the ermine. I was painted in Milan.", "body `{body}`");
    ensure!(note.as_deref().is_some_and(|n| n.starts_with("Note:")), "note {note:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..500 {
        let k = rng.random_range(1..8);
        let sentences: Vec<String> = (0..k)
            .map(|_| {
                let words: Vec<String> = (0..rng.random_range(1..12))
                    .map(|_| (0..rng.random_range(5..9)).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
                    .collect();
                format!("{}{}", words.join(" "), ['.', '!', '?'][rng.random_range(0..3)])
            })
            .collect();
        let text = sentences.join(" ");
        let capped = enforce_length(&text, 2);
        let want = sentences[..k.min(2)].join(" ");
        ensure!(capped == want, "case {case}: `{capped}` vs `{want}`");
        ensure!(count_sentences(&capped) == k.min(2), "case {case}: {} sentences", count_sentences(&capped));
    }

    let vlm = Recording {
        inner: MockVlm::from_json(
            r#"{"*": {"detailed": ["I cannot do that."],
                      "simple": ["I am the lady. I hold an ermine. I smile at someone."]}}"#,
        )
        .map_err(|e| e.to_string())?,
        prompts: Mutex::new(Vec::new()),
    };
    let spec = PromptSpec {
        mode: PromptMode::Detailed,
        gender: Gender::Female,
        metadata: Some(lady()),
    };
    let r = narrate(&vlm, Path::new("ladyermine.jpg"), &spec, &NarrationConfig::default()).map_err(|e| e.to_string())?;
    let prompts = vlm.prompts.lock().unwrap().clone();
    ensure!(prompts.len() == 2, "{} prompts", prompts.len());
    ensure!(prompts[0].contains("Lady with an Ermine made by Leonardo da Vinci in 1489"), "first prompt `{}`", prompts[0]);
    ensure!(prompts[1].contains("the artwork in the first person"), "second prompt `{}`", prompts[1]);
    ensure!(r.status == NarrationStatus::Usable && r.mode == PromptMode::Simple && r.attempts == 2, "{r:?}");
    ensure!(r.curated_text == "I am the lady. I hold an ermine.", "curated `{}`", r.curated_text);
    Ok("3 quoted refusals, note stripped, 500 random texts capped, detailed->simple fallback traced".into())
}

fn duration() -> Outcome {
    let tts = MockTts::default();
    let text = vec!["word"; 120].join(" ");
    let voice = VoiceChoice::new("af_heart", Gender::Female, "en-US");
    let audio = tts.synthesize(&text, &voice).map_err(|e| e.to_string())?;
    ensure!(audio.duration_s() == 48.0, "speech lasts {}s", audio.duration_s());

    let fps = 25.0;
    let align = (audio.sample_rate as f64 / fps).round() as usize;
    let chunks = chunk_audio_aligned(&audio, 20.0, 1.0, align);
    ensure!(chunks.len() >= 3, "{} chunks", chunks.len());
    let limit = 20 * audio.sample_rate as usize;
    for (i, c) in chunks.iter().enumerate() {
        ensure!(c.len() <= limit, "chunk {i} has {} samples", c.len());
        ensure!(c.sample_rate == audio.sample_rate, "chunk {i} rate");
    }
    let joined: Vec<f32> = chunks.iter().flat_map(|c| c.samples.iter().copied()).collect();
    ensure!(joined == audio.samples, "concatenation is not sample-exact");

    let face = ImageBuffer::filled(24, 24, 3, 128);
    let opts = AnimationOptions { fps, max_len_s: 20.0 };
    let anim = animate_chunks(&MockAnimator::default(), &face, &chunks, &opts).map_err(|e| e.to_string())?;
    let round_sum: usize = chunks.iter().map(|c| expected_frames(c.duration_s(), fps)).sum();
    ensure!(anim.len() == round_sum, "{} frames, round-sum {round_sum}", anim.len());
    ensure!(round_sum == 1200, "round-sum {round_sum}");
    let lens: Vec<String> = chunks.iter().map(|c| format!("{:.2}s", c.duration_s())).collect();
    Ok(format!("48s -> chunks [{}], {} frames", lens.join(", "), anim.len()))
}

fn cli(args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_speaking-images"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().ok_or_else(|| "killed by signal".into())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image = fixtures().join("ladyermine.png");
    let image = image.to_str().unwrap();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let code = cli(&["run", image, "--mock-all", "--out", out.to_str().unwrap()])?;
        ensure!(code == 0, "run {run} exited {code}");
        let run_dir = out.join("ladyermine");
        let manifest_bytes = std::fs::read(run_dir.join("manifest.json")).map_err(|e| e.to_string())?;
        let manifest = RunManifest::load(&run_dir.join("manifest.json")).map_err(|e| e.to_string())?;
        ensure!(manifest.faces.len() == 1, "{} faces", manifest.faces.len());
        let asset = manifest.faces[0]
            .asset(AssetKind::FinalVideo)
            .ok_or("no final video asset")?
            .clone();
        let decoded = read_mp4(&run_dir.join(&asset.path)).map_err(|e| e.to_string())?;
        runs.push((manifest_bytes, asset.path.clone(), decoded));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(a.0 == b.0, "manifests differ");
    ensure!(a.1 == b.1, "artifact names differ: {} / {}", a.1, b.1);
    ensure!(a.2.video.frames == b.2.video.frames, "decoded frames differ");
    ensure!(a.2.audio == b.2.audio, "decoded audio differs");
    let name = decode_artifact_name(&a.1).map_err(|e| e.to_string())?;
    let want = ArtifactName::new("ladyermine", 0, BoundingBox::new(42, 24, 36, 36), Gender::Female);
    ensure!(name == want, "artifact {name:?}");
    ensure!(!a.2.video.frames.is_empty(), "empty video");

    let back = fixtures().join("back_of_frame.png");
    let out = tmp.path().join("c");
    let code = cli(&["run", back.to_str().unwrap(), "--mock-all", "--out", out.to_str().unwrap()])?;
    ensure!(code == 0, "no-face run exited {code}");
    let m = RunManifest::load(&out.join("back_of_frame/manifest.json")).map_err(|e| e.to_string())?;
    ensure!(m.faces.is_empty(), "no-face manifest lists {} faces", m.faces.len());
    Ok(format!(
        "{} identical across runs ({} frames); no-face run exit 0 with empty manifest",
        a.1,
        a.2.video.len()
    ))
}

struct Mocks {
    detector: MockDetector,
    vlm: MockVlm,
    tts: MockTts,
    animator: MockAnimator,
}

impl Mocks {
    fn new() -> Self {
        let script = r#"{"*": {"simple": ["I am the lady. I hold a small white ermine in my arms."],
                               "detailed": ["Leonardo painted me around 1489 in Milan. The ermine is a symbol of purity and of my patron."]}}"#;
        Self {
            detector: MockDetector::default(),
            vlm: MockVlm::from_json(script).unwrap(),
            tts: MockTts::default(),
            animator: MockAnimator::default(),
        }
    }

    fn set(&self) -> BackendSet {
        BackendSet {
            detector: Arc::new(self.detector.clone()),
            vlm: Arc::new(self.vlm.clone()),
            tts: Arc::new(self.tts.clone()),
            animator: Arc::new(self.animator.clone()),
        }
    }

    fn counts(&self) -> [usize; 4] {
        [
            self.detector.calls.get(),
            self.vlm.calls.get(),
            self.tts.calls.get(),
            self.animator.calls.get(),
        ]
    }
}

fn resume_correctness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image = fixtures().join("ladyermine.png");
    let rows = load_dataset_manifest(&core_fixtures().join("artworks.csv")).map_err(|e| e.to_string())?;
    let meta = metadata_for(&rows, &image).cloned().ok_or("no metadata row for the fixture")?;
    let cfg = PipelineConfig {
        mode: PromptMode::Detailed,
        out_dir: tmp.path().to_path_buf(),
        ..PipelineConfig::default()
    };

    let first_mocks = Mocks::new();
    let first = run_pipeline(&cfg, &first_mocks.set(), &image, Some(meta)).map_err(|e| e.to_string())?;
    ensure!(first.exit_code() == 0, "first run failed: {:?}", first.manifest.faces[0].state);
    let manifest_before = std::fs::read(&first.manifest_path).map_err(|e| e.to_string())?;
    let face_before = first.manifest.faces[0].clone();

    let same = Mocks::new();
    let again = resume(&cfg, &same.set(), &first.manifest_path, None).map_err(|e| e.to_string())?;
    ensure!(same.counts() == [0; 4], "unchanged config invoked backends {:?}", same.counts());
    let manifest_again = std::fs::read(&again.manifest_path).map_err(|e| e.to_string())?;
    ensure!(manifest_again == manifest_before, "manifest changed on a no-op resume");

    let changed = Mocks::new();
    let simple = PipelineConfig {
        mode: PromptMode::Simple,
        ..cfg.clone()
    };
    let after = resume(&simple, &changed.set(), &first.manifest_path, None).map_err(|e| e.to_string())?;
    let [det, vlm, tts, anim] = changed.counts();
    ensure!(det == 0, "detection re-ran ({det} calls)");
    ensure!(vlm == 1 && tts == 1 && anim >= 1, "calls after mode change {:?}", changed.counts());
    let face_after = &after.manifest.faces[0];
    ensure!(
        face_after.asset(AssetKind::FaceCrop) == face_before.asset(AssetKind::FaceCrop),
        "crop was recomputed"
    );
    for kind in [AssetKind::Audio, AssetKind::FaceAnimation, AssetKind::FinalVideo] {
        let (old, new) = (face_before.asset(kind).unwrap(), face_after.asset(kind).unwrap());
        ensure!(old.hash != new.hash, "{kind:?} was not recomputed");
    }
    ensure!(
        face_after.narration.as_ref().map(|n| &n.hash) != face_before.narration.as_ref().map(|n| &n.hash),
        "narration was not recomputed"
    );
    Ok(format!("no-op resume: 0 calls, identical manifest; mode change: detector 0, llm {vlm}, tts {tts}, anim {anim}"))
}
