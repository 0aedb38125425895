// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-ins for every model backend. Each mock counts its
//! invocations; clones share the counter.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use super::parse_detection_records;
use crate::animation::{expected_frames, FrameSequence, PortraitAnimator};
use crate::backend::BackendError;
use crate::face::{DetectorCapabilities, FaceDetector, RawDetection};
use crate::image::ImageBuffer;
use crate::model::{BoundingBox, Gender};
use crate::narration::{NarrationRequest, PromptMode, VisionLanguageModel};
use crate::voicing::{AudioSegment, SpeechSynthesizer, VoiceChoice};

#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) -> usize {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

/// Sidecar holding detection records for `image`: `<dir>/<stem>.faces.txt`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}.faces.txt"))
}

/// Returns fixture detections. Without a fixed list it reads the image's
/// `.faces.txt` sidecar; with no sidecar either, it reports one frontal
/// female face centered in the image, half the shorter side wide.
#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    fixture: Option<Vec<RawDetection>>,
    pub calls: CallCounter,
}

impl MockDetector {
    pub fn with_fixture(dets: Vec<RawDetection>) -> Self {
        Self {
            fixture: Some(dets),
            calls: CallCounter::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::new("mock-detector", format!("{}: {e}", path.display())))?;
        let dets = parse_detection_records(&text).map_err(|e| BackendError::new("mock-detector", e))?;
        Ok(Self::with_fixture(dets))
    }
}

impl FaceDetector for MockDetector {
    fn name(&self) -> &str {
        "mock-detector"
    }

    fn capabilities(&self) -> DetectorCapabilities {
        DetectorCapabilities {
            gender_estimation: true,
            pose_estimation: true,
        }
    }

    fn detect(&self, image: &ImageBuffer, source: &Path) -> Result<Vec<RawDetection>, BackendError> {
        self.calls.bump();
        if let Some(f) = &self.fixture {
            return Ok(f.clone());
        }
        let sidecar = sidecar_path(source);
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar).map_err(|e| BackendError::new(self.name(), e.to_string()))?;
            return parse_detection_records(&text).map_err(|e| BackendError::new(self.name(), format!("{}: {e}", sidecar.display())));
        }
        let (w, h) = (image.width() as i64, image.height() as i64);
        let side = (w.min(h) / 2).max(1);
        Ok(vec![RawDetection {
            bbox: BoundingBox::new((w - side) / 2, (h - side) / 2, side, side),
            gender_label: Some("female".into()),
            confidence: 0.9,
            yaw_degrees: Some(0.0),
        }])
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scripted {
    Always(String),
    PerMode {
        #[serde(default)]
        simple: Vec<String>,
        #[serde(default)]
        detailed: Vec<String>,
    },
}

/// Which prompt template produced `prompt`.
pub fn prompt_mode(prompt: &str) -> PromptMode {
    if prompt.contains("the artwork in the first person") {
        PromptMode::Simple
    } else {
        PromptMode::Detailed
    }
}

/// Vision-language mock. Fixture JSON maps an image stem (or `*`) to either
/// one answer or per-mode answer lists, consumed in order with the last one
/// repeating:
///
/// ```json
/// {"ladyermine": {"detailed": ["I cannot do that."], "simple": ["I am ..."]},
///  "*": "I am the sitter. I wait."}
/// ```
///
/// Stems without an entry get a fixed description in the first person.
#[derive(Debug, Clone, Default)]
pub struct MockVlm {
    script: BTreeMap<String, Scripted>,
    cursor: Arc<Mutex<HashMap<(String, PromptMode), usize>>>,
    pub calls: CallCounter,
}

impl MockVlm {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let script = serde_json::from_str(text).map_err(|e| BackendError::new("mock-vlm", format!("fixture: {e}")))?;
        Ok(Self {
            script,
            ..Self::default()
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::new("mock-vlm", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Answers every request with `text`.
    pub fn always(text: &str) -> Self {
        let mut script = BTreeMap::new();
        script.insert("*".to_string(), Scripted::Always(text.to_string()));
        Self {
            script,
            ..Self::default()
        }
    }

    fn default_answer(mode: PromptMode, prompt: &str) -> String {
        let who = if prompt.contains("male character") && !prompt.contains("female character") {
            "man"
        } else {
            "woman"
        };
        match mode {
            PromptMode::Simple => format!(
                "I am the {who} you see here, painted with patient and careful strokes. \
                 The light rests on my face while I wait for you to notice me."
            ),
            PromptMode::Detailed => format!(
                "I am the {who} in this celebrated work, and the painter gave me a calm and steady gaze. \
                 I have watched visitors pass by me for centuries.\n\n\
                 Note: this answer is an imaginative reconstruction."
            ),
        }
    }
}

impl VisionLanguageModel for MockVlm {
    fn name(&self) -> &str {
        "mock-vlm"
    }

    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        self.calls.bump();
        let mode = prompt_mode(&request.prompt);
        let stem = request
            .image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let entry = self.script.get(&stem).or_else(|| self.script.get("*"));
        let answers = match entry {
            None => return Ok(Self::default_answer(mode, &request.prompt)),
            Some(Scripted::Always(t)) => return Ok(t.clone()),
            Some(Scripted::PerMode { simple, detailed }) => match mode {
                PromptMode::Simple => simple,
                PromptMode::Detailed => detailed,
            },
        };
        if answers.is_empty() {
            return Ok(Self::default_answer(mode, &request.prompt));
        }
        let mut cursor = self.cursor.lock().expect("mock cursor poisoned");
        let i = cursor.entry((stem, mode)).or_insert(0);
        let answer = answers[(*i).min(answers.len() - 1)].clone();
        *i += 1;
        Ok(answer)
    }
}

/// Speech mock: `seconds_per_word` of sine tone per word, the last 50 ms of
/// every word silent. Pitch depends on the voice's gender.
#[derive(Debug, Clone)]
pub struct MockTts {
    pub sample_rate: u32,
    pub seconds_per_word: f64,
    pub calls: CallCounter,
}

impl Default for MockTts {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            seconds_per_word: 0.4,
            calls: CallCounter::default(),
        }
    }
}

impl MockTts {
    const GAP_S: f64 = 0.05;
}

impl SpeechSynthesizer for MockTts {
    fn name(&self) -> &str {
        "mock-tts"
    }

    fn id(&self) -> String {
        format!("mock-tts@{}Hz/{}s", self.sample_rate, self.seconds_per_word)
    }

    fn synthesize(&self, text: &str, voice: &VoiceChoice) -> Result<AudioSegment, BackendError> {
        self.calls.bump();
        let words = text.split_whitespace().count();
        let sr = self.sample_rate as f64;
        let per_word = (self.seconds_per_word * sr).round() as usize;
        let voiced = per_word.saturating_sub((Self::GAP_S * sr).round() as usize);
        let freq = match voice.gender {
            Gender::Female => 220.0,
            Gender::Male => 120.0,
        };
        let samples = (0..words * per_word)
            .map(|i| {
                if i % per_word < voiced {
                    (0.5 * (TAU * freq * i as f64 / sr).sin()) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AudioSegment::new(self.sample_rate, samples))
    }
}

/// Animation mock: frame k is the face with pixel (0,0) set to k mod 256 on
/// every channel and, on odd frames, the "lip" pixel at (w/2, 3h/4)
/// inverted.
#[derive(Debug, Clone, Default)]
pub struct MockAnimator {
    pub calls: CallCounter,
}

impl MockAnimator {
    pub fn frame(face: &ImageBuffer, k: usize) -> ImageBuffer {
        let mut f = face.clone();
        f.pixel_mut(0, 0).fill((k % 256) as u8);
        if k % 2 == 1 {
            let (x, y) = (face.width() / 2, face.height() * 3 / 4);
            for v in f.pixel_mut(x, y) {
                *v = 255 - *v;
            }
        }
        f
    }
}

impl PortraitAnimator for MockAnimator {
    fn name(&self) -> &str {
        "mock-animator"
    }

    fn animate(&self, face: &ImageBuffer, audio: &AudioSegment, fps: f64) -> Result<FrameSequence, BackendError> {
        self.calls.bump();
        let n = expected_frames(audio.duration_s(), fps);
        Ok(FrameSequence::new((0..n).map(|k| Self::frame(face, k)).collect(), fps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::{detect_faces, GenderPolicy};
    use crate::narration::{build_prompt, narrate, NarrationConfig, PromptSpec};
    use crate::model::ArtworkMetadata;

    #[test]
    fn detector_fixture_passthrough() {
        let d = MockDetector::with_fixture(parse_detection_records("0 100 50 40 60 female 0.9").unwrap());
        let img = ImageBuffer::filled(300, 300, 3, 0);
        let faces = detect_faces(&d, &img, Path::new("x.png"), GenderPolicy::default()).unwrap();
        assert_eq!(faces.len(), 1);
        assert_eq!(faces[0].record.face_id, 0);
        assert_eq!(faces[0].record.bbox, BoundingBox::new(100, 50, 40, 60));
        assert_eq!(d.calls.get(), 1);
    }

    #[test]
    fn detector_sidecar_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("empty.png");
        std::fs::write(sidecar_path(&img_path), "# nobody here\n").unwrap();
        let img = ImageBuffer::filled(100, 80, 3, 0);
        let d = MockDetector::default();
        assert!(d.detect(&img, &img_path).unwrap().is_empty());
        let other = d.detect(&img, &dir.path().join("portrait.png")).unwrap();
        assert_eq!(other[0].bbox, BoundingBox::new(30, 20, 40, 40));
        assert_eq!(d.clone().calls.get(), 2);
    }

    #[test]
    fn tts_rate() {
        let tts = MockTts::default();
        let voice = VoiceChoice::new("af_heart", Gender::Female, "en-US");
        let text = "one two three four five six seven eight nine ten";
        assert_eq!(tts.synthesize(text, &voice).unwrap().duration_s(), 4.0);
        let fifty = vec!["word"; 50].join(" ");
        assert_eq!(tts.synthesize(&fifty, &voice).unwrap().duration_s(), 20.0);
        assert_eq!(tts.calls.get(), 2);
    }

    #[test]
    fn animator_watermark_and_lip_toggle() {
        let face = ImageBuffer::filled(8, 8, 3, 100);
        let seq = MockAnimator::default().animate(&face, &AudioSegment::silence(16_000, 0.2), 25.0).unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq.frames[3].pixel(0, 0), &[3, 3, 3]);
        assert_eq!(seq.frames[3].pixel(4, 6), &[155, 155, 155]);
        assert_eq!(seq.frames[2].pixel(4, 6), &[100, 100, 100]);
    }

    fn spec(mode: PromptMode) -> PromptSpec {
        PromptSpec {
            mode,
            gender: Gender::Female,
            metadata: Some(ArtworkMetadata {
                author: "Leonardo da Vinci".into(),
                title: "Lady with an Ermine".into(),
                year: 1489,
                source_file: String::new(),
            }),
        }
    }

    #[test]
    fn prompt_mode_detection() {
        assert_eq!(prompt_mode(&build_prompt(&spec(PromptMode::Simple)).unwrap()), PromptMode::Simple);
        assert_eq!(prompt_mode(&build_prompt(&spec(PromptMode::Detailed)).unwrap()), PromptMode::Detailed);
    }

    #[test]
    fn two_phase_fixture_falls_back() {
        let vlm = MockVlm::from_json(
            r#"{"ladyermine": {"detailed": ["I am not able to provide information about this artwork."],
                               "simple": ["I hold a white ermine. My gaze turns to the light."]}}"#,
        )
        .unwrap();
        let r = narrate(&vlm, Path::new("art/ladyermine.jpg"), &spec(PromptMode::Detailed), &NarrationConfig::default()).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(r.mode, PromptMode::Simple);
        assert_eq!(r.curated_text, "I hold a white ermine. My gaze turns to the light.");
        assert_eq!(vlm.calls.get(), 2);
    }

    #[test]
    fn default_answers_are_usable() {
        let vlm = MockVlm::default();
        for mode in [PromptMode::Simple, PromptMode::Detailed] {
            let r = narrate(&vlm, Path::new("a.png"), &spec(mode), &NarrationConfig::default()).unwrap();
            assert_eq!(r.attempts, 1);
            assert_eq!(r.sentence_count, 2);
        }
        let r = narrate(&vlm, Path::new("a.png"), &spec(PromptMode::Detailed), &NarrationConfig::default()).unwrap();
        assert!(r.stripped_note.is_some());
    }
}
