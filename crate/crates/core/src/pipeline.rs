// SPDX-License-Identifier: Apache-2.0

//! End-to-end driver: detect, crop, narrate, voice, animate, compose, mux.
//!
//! Every stage output carries a digest of exactly the inputs and settings
//! the stage reads. When a previous manifest is supplied, a stage whose
//! digest matches and whose file is still on disk is reused instead of
//! recomputed; the resulting manifest is identical to a fresh run's.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::animation::{
    animate_chunks_cached, check_animatable, AnimationOptions, ChunkCache, FrameSequence, HeadPoseEstimate,
    PortraitAnimator,
};
use crate::backend::BackendError;
use crate::backends::BackendSet;
use crate::codec::ArtifactName;
use crate::compositor::render_final;
use crate::container::{read_mp4, write_mp4};
use crate::digest::{sha256_hex, Digest};
use crate::face::{crop_face, detect_faces, DetectorCapabilities, FaceDetector, FaceError, GenderPolicy, RawDetection};
use crate::image::{ImageBuffer, ImageError};
use crate::manifest::{
    DetectionRecord, FaceEntry, JobState, ManifestError, NarrationRecord, NarrationStatus, RunManifest, MANIFEST_FILE,
};
use crate::model::{ArtworkMetadata, AssetKind, FaceRecord, Gender, MediaAsset};
use crate::narration::{
    narrate, NarrationConfig, NarrationError, NarrationRequest, PromptMode, PromptSpec, RefusalPatterns,
    VisionLanguageModel,
};
use crate::voicing::{chunk_audio_aligned, select_voice, synthesize, AudioSegment, SpeechSynthesizer, VoiceChoice};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("detection: {0}")]
    Detection(#[from] FaceError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FaceSelection {
    /// Highest-confidence face only.
    #[default]
    Main,
    All,
    Ids(Vec<u32>),
}

impl FromStr for FaceSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "main" => Ok(FaceSelection::Main),
            "all" => Ok(FaceSelection::All),
            ids => ids
                .split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|_| format!("bad face id `{t}`")))
                .collect::<Result<Vec<_>, _>>()
                .map(FaceSelection::Ids),
        }
    }
}

impl fmt::Display for FaceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaceSelection::Main => f.write_str("main"),
            FaceSelection::All => f.write_str("all"),
            FaceSelection::Ids(ids) => {
                let s: Vec<String> = ids.iter().map(u32::to_string).collect();
                f.write_str(&s.join(","))
            }
        }
    }
}

impl FaceSelection {
    fn select(&self, faces: &[FaceRecord]) -> Vec<u32> {
        match self {
            FaceSelection::Main => faces.first().map(|f| vec![f.face_id]).unwrap_or_default(),
            FaceSelection::All => faces.iter().map(|f| f.face_id).collect(),
            FaceSelection::Ids(ids) => faces.iter().map(|f| f.face_id).filter(|id| ids.contains(id)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: PromptMode,
    pub max_sentences: usize,
    pub retries: u32,
    pub refusals: RefusalPatterns,
    pub max_audio_len_s: f64,
    pub chunk_search_window_s: f64,
    pub pose_limit_deg: f64,
    pub pose_block: bool,
    pub fps: f64,
    pub out_dir: PathBuf,
    pub faces: FaceSelection,
    pub gender_overrides: BTreeMap<u32, Gender>,
    pub gender_fallback: Gender,
    pub voices: Vec<VoiceChoice>,
    /// Also write every composed frame as a lossless PNG.
    pub write_frames: bool,
    pub parallel_faces: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Simple,
            max_sentences: 2,
            retries: 1,
            refusals: RefusalPatterns::default(),
            max_audio_len_s: 20.0,
            chunk_search_window_s: 1.0,
            pose_limit_deg: 30.0,
            pose_block: false,
            fps: 25.0,
            out_dir: PathBuf::from("out"),
            faces: FaceSelection::Main,
            gender_overrides: BTreeMap::new(),
            gender_fallback: Gender::Female,
            voices: crate::voicing::default_catalog(),
            write_frames: false,
            parallel_faces: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("max audio length", self.max_audio_len_s),
            ("pose limit", self.pose_limit_deg),
            ("fps", self.fps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.chunk_search_window_s.is_nan() || self.chunk_search_window_s < 0.0 {
            return Err(PipelineError::Config("chunk search window must be non-negative".into()));
        }
        if self.max_sentences == 0 {
            return Err(PipelineError::Config("max sentences must be positive".into()));
        }
        if self.parallel_faces == 0 {
            return Err(PipelineError::Config("parallel faces must be positive".into()));
        }
        if self.voices.is_empty() {
            return Err(PipelineError::Config("voice catalog is empty".into()));
        }
        Ok(())
    }

    fn narration_config(&self) -> NarrationConfig {
        NarrationConfig {
            max_sentences: self.max_sentences,
            retries: self.retries,
            refusals: self.refusals.clone(),
        }
    }

    fn animation_options(&self) -> AnimationOptions {
        AnimationOptions {
            fps: self.fps,
            max_len_s: self.max_audio_len_s,
        }
    }
}

/// Backend invocations made during one run.
#[derive(Debug, Default)]
pub struct RunStats {
    pub detector_calls: AtomicUsize,
    pub vlm_calls: AtomicUsize,
    pub tts_calls: AtomicUsize,
    pub animator_calls: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CallCounts {
    pub detector: usize,
    pub vlm: usize,
    pub tts: usize,
    pub animator: usize,
}

impl CallCounts {
    pub fn total(&self) -> usize {
        self.detector + self.vlm + self.tts + self.animator
    }
}

impl RunStats {
    pub fn counts(&self) -> CallCounts {
        CallCounts {
            detector: self.detector_calls.load(Ordering::SeqCst),
            vlm: self.vlm_calls.load(Ordering::SeqCst),
            tts: self.tts_calls.load(Ordering::SeqCst),
            animator: self.animator_calls.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub calls: CallCounts,
}

impl RunOutcome {
    /// 1 when faces were selected and every one failed, else 0.
    pub fn exit_code(&self) -> i32 {
        let faces = &self.manifest.faces;
        if !faces.is_empty() && faces.iter().all(|f| f.state.is_failed()) {
            1
        } else {
            0
        }
    }

    pub fn final_videos(&self) -> Vec<PathBuf> {
        self.manifest
            .faces
            .iter()
            .filter_map(|f| f.asset(AssetKind::FinalVideo))
            .map(|a| self.run_dir.join(&a.path))
            .collect()
    }
}

struct CountingDetector<'a>(&'a dyn FaceDetector, &'a AtomicUsize);

impl FaceDetector for CountingDetector<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn id(&self) -> String {
        self.0.id()
    }
    fn capabilities(&self) -> DetectorCapabilities {
        self.0.capabilities()
    }
    fn detect(&self, image: &ImageBuffer, source: &Path) -> Result<Vec<RawDetection>, BackendError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.detect(image, source)
    }
}

struct CountingVlm<'a>(&'a dyn VisionLanguageModel, &'a AtomicUsize);

impl VisionLanguageModel for CountingVlm<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.describe(request)
    }
}

struct CountingTts<'a>(&'a dyn SpeechSynthesizer, &'a AtomicUsize);

impl SpeechSynthesizer for CountingTts<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn synthesize(&self, text: &str, voice: &VoiceChoice) -> Result<AudioSegment, BackendError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.synthesize(text, voice)
    }
}

struct CountingAnimator<'a>(&'a dyn PortraitAnimator, &'a AtomicUsize);

impl PortraitAnimator for CountingAnimator<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn id(&self) -> String {
        self.0.id()
    }
    fn declared_fps(&self) -> Option<f64> {
        self.0.declared_fps()
    }
    fn animate(&self, face: &ImageBuffer, audio: &AudioSegment, fps: f64) -> Result<FrameSequence, BackendError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.animate(face, audio, fps)
    }
}

/// Finished animation chunks kept on disk until their face completes.
struct DiskChunkCache {
    dir: PathBuf,
}

impl ChunkCache for DiskChunkCache {
    fn load(&mut self, key: &str) -> Option<FrameSequence> {
        read_mp4(&self.dir.join(format!("{key}.mp4"))).ok().map(|d| d.video)
    }

    fn store(&mut self, key: &str, frames: &FrameSequence) {
        if frames.is_empty() {
            return;
        }
        let stored = std::fs::create_dir_all(&self.dir)
            .map_err(|e| e.to_string())
            .and_then(|_| write_mp4(&self.dir.join(format!("{key}.mp4")), frames, None).map_err(|e| e.to_string()));
        if let Err(e) = stored {
            log::warn!("cannot cache animation chunk {key}: {e}");
        }
    }
}

fn image_stem(image: &Path) -> Result<String, PipelineError> {
    image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| PipelineError::Config(format!("no file name in {}", image.display())))
}

/// Runs the whole pipeline on `image`, writing into `<out_dir>/<stem>/`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    backends: &BackendSet,
    image: &Path,
    meta: Option<ArtworkMetadata>,
) -> Result<RunOutcome, PipelineError> {
    let run_dir = cfg.out_dir.join(image_stem(image)?);
    Runner::new(cfg, backends, image, meta, run_dir, None)?.run()
}

/// Re-runs from an existing manifest, reusing every stage whose digest still
/// matches. The run directory is the manifest's directory; `image` defaults
/// to the manifest's recorded source.
pub fn resume(
    cfg: &PipelineConfig,
    backends: &BackendSet,
    manifest_path: &Path,
    image: Option<&Path>,
) -> Result<RunOutcome, PipelineError> {
    let previous = RunManifest::load(manifest_path)?;
    let image = image.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&previous.source));
    let run_dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let meta = previous.metadata.clone();
    Runner::new(cfg, backends, &image, meta, run_dir, Some(previous))?.run()
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    backends: &'a BackendSet,
    image_path: PathBuf,
    stem: String,
    run_dir: PathBuf,
    manifest_path: PathBuf,
    previous: Option<RunManifest>,
    stats: RunStats,
    manifest: Mutex<RunManifest>,
    meta: Option<ArtworkMetadata>,
}

/// Per-face inputs shared by every stage.
struct FaceJob {
    face_id: u32,
    name: ArtifactName,
    record: FaceRecord,
}

enum StageOutcome<T> {
    Done(T),
    Failed(String),
}

impl<'a> Runner<'a> {
    fn new(
        cfg: &'a PipelineConfig,
        backends: &'a BackendSet,
        image: &Path,
        meta: Option<ArtworkMetadata>,
        run_dir: PathBuf,
        previous: Option<RunManifest>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if cfg.mode == PromptMode::Detailed && meta.is_none() {
            return Err(PipelineError::Config("detailed prompts need artwork metadata".into()));
        }
        let manifest = RunManifest::new(image.to_string_lossy(), meta.clone());
        Ok(Self {
            cfg,
            backends,
            image_path: image.to_path_buf(),
            stem: image_stem(image)?,
            manifest_path: run_dir.join(MANIFEST_FILE),
            run_dir,
            previous,
            stats: RunStats::default(),
            manifest: Mutex::new(manifest),
            meta,
        })
    }

    fn save(&self, m: &RunManifest) -> Result<(), PipelineError> {
        m.save(&self.manifest_path)?;
        Ok(())
    }

    fn with_manifest<T>(&self, f: impl FnOnce(&mut RunManifest) -> Result<T, ManifestError>) -> Result<T, PipelineError> {
        let mut m = self.manifest.lock().expect("manifest lock poisoned");
        let out = f(&mut m)?;
        self.save(&m)?;
        Ok(out)
    }

    fn previous_face(&self, face_id: u32) -> Option<&FaceEntry> {
        self.previous.as_ref()?.face(face_id)
    }

    /// The previous run's asset of `kind` when its digest matches and the
    /// file is still there.
    fn cached_asset(&self, face_id: u32, kind: AssetKind, hash: &str) -> Option<MediaAsset> {
        let a = self.previous_face(face_id)?.asset(kind)?;
        (a.hash == hash && self.run_dir.join(&a.path).is_file()).then(|| a.clone())
    }

    fn run(self) -> Result<RunOutcome, PipelineError> {
        for sub in ["faces", "audio", "anim"] {
            std::fs::create_dir_all(self.run_dir.join(sub))?;
        }
        let image_bytes = std::fs::read(&self.image_path)?;
        let image_sha = sha256_hex(&image_bytes);
        let image = ImageBuffer::load(&self.image_path)?;

        let detections = self.detect(&image, &image_sha)?;
        let records: Vec<FaceRecord> = detections.records.iter().map(|r| r.record.clone()).collect();
        let selected = self.cfg.faces.select(&records);
        log::info!("{}: {} face(s) detected, {} selected", self.stem, records.len(), selected.len());

        let detection_hash = detections.record.hash.clone();
        let mut jobs = Vec::new();
        {
            let mut m = self.manifest.lock().expect("manifest lock poisoned");
            m.detection = Some(detections.record);
            m.log_stage(None, "detection");
            for id in &selected {
                let det = &detections.records[*id as usize];
                let mut entry = FaceEntry::new(&det.record);
                entry.yaw_degrees = det.yaw_degrees;
                entry.warnings = det.warnings.clone();
                if let Some(&g) = self.cfg.gender_overrides.get(id) {
                    if g != entry.gender {
                        entry.warnings.push(format!("gender_override:{}->{}", entry.gender, g));
                        entry.gender = g;
                    }
                }
                let name = ArtifactName::new(self.stem.clone(), *id, entry.square_box, entry.gender);
                name.validate().map_err(PipelineError::Config)?;
                jobs.push(FaceJob {
                    face_id: *id,
                    name,
                    record: entry.record(),
                });
                m.faces.push(entry);
            }
            self.save(&m)?;
        }

        let ctx = FaceContext {
            image: &image,
            image_sha: &image_sha,
            detection_hash: &detection_hash,
        };
        if self.cfg.parallel_faces <= 1 || jobs.len() <= 1 {
            for job in &jobs {
                self.process_face(job, &ctx)?;
            }
        } else {
            let next = AtomicUsize::new(0);
            std::thread::scope(|s| -> Result<(), PipelineError> {
                let workers: Vec<_> = (0..self.cfg.parallel_faces.min(jobs.len()))
                    .map(|_| {
                        s.spawn(|| -> Result<(), PipelineError> {
                            loop {
                                let i = next.fetch_add(1, Ordering::SeqCst);
                                let Some(job) = jobs.get(i) else { return Ok(()) };
                                self.process_face(job, &ctx)?;
                            }
                        })
                    })
                    .collect();
                for w in workers {
                    w.join().expect("face worker panicked")?;
                }
                Ok(())
            })?;
        }

        let manifest = self.manifest.into_inner().expect("manifest lock poisoned");
        manifest.save(&self.manifest_path)?;
        Ok(RunOutcome {
            manifest,
            run_dir: self.run_dir,
            manifest_path: self.manifest_path,
            calls: self.stats.counts(),
        })
    }

    fn detect(&self, image: &ImageBuffer, image_sha: &str) -> Result<Detections, PipelineError> {
        let detector = &*self.backends.detector;
        let mut d = Digest::new("detection");
        d.str(image_sha).str(&detector.id()).field("fallback", self.cfg.gender_fallback);
        let hash = d.finish();

        if let Some(prev) = self.previous.as_ref().and_then(|p| p.detection.as_ref()) {
            if prev.hash == hash {
                return Ok(Detections {
                    records: prev.records.clone(),
                    record: prev.clone(),
                });
            }
        }
        let counted = CountingDetector(detector, &self.stats.detector_calls);
        let policy = GenderPolicy {
            fallback: self.cfg.gender_fallback,
        };
        let faces = detect_faces(&counted, image, &self.image_path, policy)?;
        let records: Vec<DetectedRecord> = faces
            .into_iter()
            .map(|f| DetectedRecord {
                record: f.record,
                yaw_degrees: f.yaw_degrees,
                warnings: f.warnings,
            })
            .collect();
        Ok(Detections {
            record: DetectionRecord {
                backend: detector.id(),
                detected: records.len(),
                hash,
                records: records.clone(),
            },
            records,
        })
    }

    fn fail(&self, face_id: u32, reason: String) -> Result<(), PipelineError> {
        log::warn!("face {face_id}: {reason}");
        self.with_manifest(|m| {
            m.face_mut(face_id)?.advance(JobState::Failed(reason))?;
            m.log_stage(Some(face_id), "failed");
            Ok(())
        })
    }

    fn process_face(&self, job: &FaceJob, ctx: &FaceContext<'_>) -> Result<(), PipelineError> {
        let id = job.face_id;

        let yaw = self.manifest.lock().expect("manifest lock poisoned").face(id).and_then(|f| f.yaw_degrees);
        if let Some(yaw) = yaw {
            if !check_animatable(HeadPoseEstimate { yaw_degrees: yaw }, self.cfg.pose_limit_deg) {
                if self.cfg.pose_block {
                    return self.fail(id, format!("pose: yaw {yaw} exceeds {} degrees", self.cfg.pose_limit_deg));
                }
                self.with_manifest(|m| {
                    m.face_mut(id)?.warnings.push(format!("pose_exceeds_limit:{yaw}"));
                    Ok(())
                })?;
            }
        }

        let (crop, crop_asset) = self.crop_stage(job, ctx)?;
        self.with_manifest(|m| {
            m.append(id, crop_asset.clone())?;
            m.log_stage(Some(id), "crop");
            Ok(())
        })?;

        let narration = match self.narration_stage(job, ctx) {
            StageOutcome::Done(n) => n,
            StageOutcome::Failed(reason) => return self.fail(id, reason),
        };
        let usable = narration.status == NarrationStatus::Usable;
        let status = narration.status;
        let text = narration.text.clone();
        self.with_manifest(|m| {
            let face = m.face_mut(id)?;
            face.narration = Some(narration);
            if usable {
                face.advance(JobState::Described)?;
            }
            m.log_stage(Some(id), "narration");
            Ok(())
        })?;
        if !usable {
            let reason = match status {
                NarrationStatus::Refusal => "refusal",
                _ => "empty narration",
            };
            return self.fail(id, reason.to_string());
        }

        let (audio, audio_asset, audio_sha) = match self.voicing_stage(job, &text)? {
            StageOutcome::Done(v) => v,
            StageOutcome::Failed(reason) => return self.fail(id, reason),
        };
        self.with_manifest(|m| {
            m.append(id, audio_asset)?;
            m.face_mut(id)?.advance(JobState::Voiced)?;
            m.log_stage(Some(id), "voicing");
            Ok(())
        })?;

        let (anim, anim_asset) = match self.animation_stage(job, &crop, &crop_asset.hash, &audio, &audio_sha)? {
            StageOutcome::Done(v) => v,
            StageOutcome::Failed(reason) => return self.fail(id, reason),
        };
        let anim_hash = anim_asset.hash.clone();
        self.with_manifest(|m| {
            m.append(id, anim_asset)?;
            m.face_mut(id)?.advance(JobState::Animated)?;
            m.log_stage(Some(id), "animation");
            Ok(())
        })?;

        let final_asset = match self.composite_stage(job, ctx, anim, &anim_hash, &audio, &audio_sha)? {
            StageOutcome::Done(v) => v,
            StageOutcome::Failed(reason) => return self.fail(id, reason),
        };
        self.with_manifest(|m| {
            m.append(id, final_asset)?;
            m.face_mut(id)?.advance(JobState::Composited)?;
            m.log_stage(Some(id), "composite");
            Ok(())
        })
    }

    fn crop_stage(&self, job: &FaceJob, ctx: &FaceContext<'_>) -> Result<(ImageBuffer, MediaAsset), PipelineError> {
        let mut d = Digest::new("crop");
        d.str(ctx.detection_hash).str(&job.name.base()).field("box", job.record.square_box);
        let hash = d.finish();
        if let Some(a) = self.cached_asset(job.face_id, AssetKind::FaceCrop, &hash) {
            if let Ok(img) = ImageBuffer::load(&self.run_dir.join(&a.path)) {
                return Ok((img, a));
            }
        }
        let crop = crop_face(ctx.image, job.record.square_box)?;
        let path = format!("faces/{}", job.name.with_extension(AssetKind::FaceCrop.extension()));
        crop.save_png(&self.run_dir.join(&path))?;
        Ok((
            crop,
            MediaAsset {
                kind: AssetKind::FaceCrop,
                path,
                duration_s: None,
                fps: None,
                hash,
            },
        ))
    }

    fn narration_stage(&self, job: &FaceJob, ctx: &FaceContext<'_>) -> StageOutcome<NarrationRecord> {
        let cfg = self.cfg;
        let vlm = &*self.backends.vlm;
        let mut d = Digest::new("narration");
        d.str(ctx.image_sha)
            .str(&vlm.id())
            .field("mode", cfg.mode)
            .field("gender", job.record.gender)
            .field("max_sentences", cfg.max_sentences)
            .field("retries", cfg.retries)
            .field("refusals", format!("{:?}", cfg.refusals));
        if let Some(m) = &self.meta {
            d.str(&m.author).str(&m.title).field("year", m.year);
        }
        let hash = d.finish();

        if let Some(prev) = self.previous_face(job.face_id).and_then(|f| f.narration.as_ref()) {
            if prev.hash == hash {
                return StageOutcome::Done(prev.clone());
            }
        }

        let spec = PromptSpec {
            mode: cfg.mode,
            gender: job.record.gender,
            metadata: self.meta.clone(),
        };
        let counted = CountingVlm(vlm, &self.stats.vlm_calls);
        let result = match narrate(&counted, &self.image_path, &spec, &cfg.narration_config()) {
            Ok(r) => r,
            Err(NarrationError::AllAttemptsRefused(r)) => *r,
            Err(e) => return StageOutcome::Failed(format!("narration: {e}")),
        };
        StageOutcome::Done(NarrationRecord {
            text: result.curated_text,
            status: result.status,
            note: result.stripped_note,
            raw: result.raw_text,
            attempts: result.attempts,
            hash,
        })
    }

    fn voicing_stage(
        &self,
        job: &FaceJob,
        text: &str,
    ) -> Result<StageOutcome<(AudioSegment, MediaAsset, String)>, PipelineError> {
        let tts = &*self.backends.tts;
        let voice = match select_voice(job.record.gender, &self.cfg.voices) {
            Ok(v) => v,
            Err(e) => return Ok(StageOutcome::Failed(format!("voicing: {e}"))),
        };
        let mut d = Digest::new("voicing");
        d.str(text).str(&voice.voice_id).str(&tts.id()).str(&job.name.base());
        let hash = d.finish();
        let path = format!("audio/{}", job.name.with_extension(AssetKind::Audio.extension()));
        let file = self.run_dir.join(&path);

        if let Some(a) = self.cached_asset(job.face_id, AssetKind::Audio, &hash) {
            if let (Ok(audio), Ok(bytes)) = (AudioSegment::read_wav(&file), std::fs::read(&file)) {
                return Ok(StageOutcome::Done((audio, a, sha256_hex(&bytes))));
            }
        }
        let counted = CountingTts(tts, &self.stats.tts_calls);
        let audio = match synthesize(&counted, text, &voice) {
            Ok(a) => a,
            Err(e) => return Ok(StageOutcome::Failed(format!("voicing: {e}"))),
        };
        if let Err(e) = audio.write_wav(&file) {
            return Ok(StageOutcome::Failed(format!("voicing: {e}")));
        }
        // Continue from what is on disk so fresh and resumed runs see the same samples.
        let audio = match AudioSegment::read_wav(&file) {
            Ok(a) => a,
            Err(e) => return Ok(StageOutcome::Failed(format!("voicing: {e}"))),
        };
        let sha = sha256_hex(&std::fs::read(&file)?);
        let asset = MediaAsset {
            kind: AssetKind::Audio,
            path,
            duration_s: Some(audio.duration_s()),
            fps: None,
            hash,
        };
        Ok(StageOutcome::Done((audio, asset, sha)))
    }

    fn animation_stage(
        &self,
        job: &FaceJob,
        crop: &ImageBuffer,
        crop_hash: &str,
        audio: &AudioSegment,
        audio_sha: &str,
    ) -> Result<StageOutcome<(FrameSequence, MediaAsset)>, PipelineError> {
        let animator = &*self.backends.animator;
        let opts = self.cfg.animation_options();
        let fps = animator.declared_fps().unwrap_or(opts.fps);
        let mut d = Digest::new("animation");
        d.str(crop_hash)
            .str(audio_sha)
            .str(&animator.id())
            .f64("fps", fps)
            .f64("max_len", opts.max_len_s)
            .f64("window", self.cfg.chunk_search_window_s);
        let hash = d.finish();
        let path = format!("anim/{}", job.name.with_extension(AssetKind::FaceAnimation.extension()));
        let file = self.run_dir.join(&path);

        if let Some(a) = self.cached_asset(job.face_id, AssetKind::FaceAnimation, &hash) {
            if let Ok(decoded) = read_mp4(&file) {
                return Ok(StageOutcome::Done((decoded.video, a)));
            }
        }

        let align = (audio.sample_rate as f64 / fps).round().max(1.0) as usize;
        let chunks = chunk_audio_aligned(audio, opts.max_len_s, self.cfg.chunk_search_window_s, align);
        if chunks.len() > 1 {
            log::info!("face {}: {:.2} s of audio split into {} chunks", job.face_id, audio.duration_s(), chunks.len());
        }
        let cache_dir = self.run_dir.join("anim").join(format!(".chunks-{}", job.name.base()));
        let mut cache = DiskChunkCache { dir: cache_dir.clone() };
        let counted = CountingAnimator(animator, &self.stats.animator_calls);
        let frames = match animate_chunks_cached(&counted, crop, &chunks, &opts, &mut cache) {
            Ok(f) => f,
            Err(e) => return Ok(StageOutcome::Failed(format!("animation: {e}"))),
        };
        if frames.is_empty() {
            return Ok(StageOutcome::Failed("animation: no frames".into()));
        }
        if let Err(e) = write_mp4(&file, &frames, Some(audio)) {
            return Ok(StageOutcome::Failed(format!("animation: {e}")));
        }
        let _ = std::fs::remove_dir_all(&cache_dir);
        let asset = MediaAsset {
            kind: AssetKind::FaceAnimation,
            path,
            duration_s: Some(frames.duration_s()),
            fps: Some(frames.fps),
            hash,
        };
        Ok(StageOutcome::Done((frames, asset)))
    }

    fn composite_stage(
        &self,
        job: &FaceJob,
        ctx: &FaceContext<'_>,
        anim: FrameSequence,
        anim_hash: &str,
        audio: &AudioSegment,
        audio_sha: &str,
    ) -> Result<StageOutcome<MediaAsset>, PipelineError> {
        let mut d = Digest::new("composite");
        d.str(anim_hash)
            .str(ctx.image_sha)
            .str(audio_sha)
            .field("box", job.record.square_box)
            .field("frames", self.cfg.write_frames);
        let hash = d.finish();
        let path = job.name.with_extension(AssetKind::FinalVideo.extension());
        let frames_dir = self.run_dir.join("frames").join(job.name.base());

        if let Some(a) = self.cached_asset(job.face_id, AssetKind::FinalVideo, &hash) {
            if !self.cfg.write_frames || frames_dir.is_dir() {
                return Ok(StageOutcome::Done(a));
            }
        }
        let frames_dir = self.cfg.write_frames.then_some(frames_dir.as_path());
        if let Some(dir) = frames_dir {
            let _ = std::fs::remove_dir_all(dir);
        }
        let duration = match render_final(ctx.image, &anim, job.record.square_box, audio, &self.run_dir.join(&path), frames_dir) {
            Ok(d) => d,
            Err(e) => return Ok(StageOutcome::Failed(format!("composite: {e}"))),
        };
        Ok(StageOutcome::Done(MediaAsset {
            kind: AssetKind::FinalVideo,
            path,
            duration_s: Some(duration),
            fps: Some(anim.fps),
            hash,
        }))
    }
}

struct FaceContext<'a> {
    image: &'a ImageBuffer,
    image_sha: &'a str,
    detection_hash: &'a str,
}

struct Detections {
    record: DetectionRecord,
    records: Vec<DetectedRecord>,
}

pub use crate::manifest::DetectedRecord;
