// SPDX-License-Identifier: Apache-2.0

//! Adapters that delegate a stage to an external program (`cmd:` backends).
//!
//! | stage     | invocation                                    | stdin  | result                        |
//! |-----------|-----------------------------------------------|--------|-------------------------------|
//! | detection | `prog args... IMAGE`                          | -      | detection records on stdout   |
//! | llm       | `prog args... IMAGE`                          | prompt | answer text on stdout         |
//! | tts       | `prog args... VOICE_ID OUT.wav`               | text   | WAV file                      |
//! | anim      | `prog args... FACE.png AUDIO.wav OUT_DIR FPS` | -      | `OUT_DIR/*.png` frames, sorted |

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use super::parse_detection_records;
use crate::animation::{FrameSequence, PortraitAnimator};
use crate::backend::BackendError;
use crate::face::{DetectorCapabilities, FaceDetector, RawDetection};
use crate::image::ImageBuffer;
use crate::narration::{NarrationRequest, VisionLanguageModel};
use crate::voicing::{AudioSegment, SpeechSynthesizer, VoiceChoice};

fn run(name: &str, argv: &[String], extra: &[&str], stdin: Option<&str>) -> Result<String, BackendError> {
    let err = |m: String| BackendError::new(name, m);
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .args(extra)
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| err(format!("cannot start `{}`: {e}", argv[0])))?;
    if let Some(input) = stdin {
        let mut pipe = child.stdin.take().expect("piped stdin");
        pipe.write_all(input.as_bytes()).map_err(|e| err(format!("stdin: {e}")))?;
    }
    let out = child.wait_with_output().map_err(|e| err(e.to_string()))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(err(format!("`{}` exited with {}: {}", argv[0], out.status, stderr.trim())));
    }
    String::from_utf8(out.stdout).map_err(|_| err("output is not UTF-8".into()))
}

fn path_str(p: &Path) -> Result<&str, BackendError> {
    p.to_str()
        .ok_or_else(|| BackendError::new("cmd", format!("non UTF-8 path {}", p.display())))
}

fn scratch(name: &str) -> Result<tempfile::TempDir, BackendError> {
    tempfile::Builder::new()
        .prefix("speaking-images-")
        .tempdir()
        .map_err(|e| BackendError::new(name, format!("scratch dir: {e}")))
}

#[derive(Debug, Clone)]
pub struct CommandDetector {
    argv: Vec<String>,
}

impl CommandDetector {
    pub fn new(argv: Vec<String>) -> Self {
        assert!(!argv.is_empty(), "empty command");
        Self { argv }
    }
}

impl FaceDetector for CommandDetector {
    fn name(&self) -> &str {
        "cmd-detector"
    }

    fn id(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn capabilities(&self) -> DetectorCapabilities {
        DetectorCapabilities {
            gender_estimation: true,
            pose_estimation: false,
        }
    }

    fn detect(&self, _: &ImageBuffer, source: &Path) -> Result<Vec<RawDetection>, BackendError> {
        let out = run(self.name(), &self.argv, &[path_str(source)?], None)?;
        parse_detection_records(&out).map_err(|e| BackendError::new(self.name(), e))
    }
}

#[derive(Debug, Clone)]
pub struct CommandVlm {
    argv: Vec<String>,
}

impl CommandVlm {
    pub fn new(argv: Vec<String>) -> Self {
        assert!(!argv.is_empty(), "empty command");
        Self { argv }
    }
}

impl VisionLanguageModel for CommandVlm {
    fn name(&self) -> &str {
        "cmd-vlm"
    }

    fn id(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        run(self.name(), &self.argv, &[path_str(&request.image_path)?], Some(&request.prompt))
    }
}

#[derive(Debug, Clone)]
pub struct CommandTts {
    argv: Vec<String>,
}

impl CommandTts {
    pub fn new(argv: Vec<String>) -> Self {
        assert!(!argv.is_empty(), "empty command");
        Self { argv }
    }
}

impl SpeechSynthesizer for CommandTts {
    fn name(&self) -> &str {
        "cmd-tts"
    }

    fn id(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn synthesize(&self, text: &str, voice: &VoiceChoice) -> Result<AudioSegment, BackendError> {
        let dir = scratch(self.name())?;
        let wav = dir.path().join("speech.wav");
        run(self.name(), &self.argv, &[&voice.voice_id, path_str(&wav)?], Some(text))?;
        AudioSegment::read_wav(&wav).map_err(|e| BackendError::new(self.name(), e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct CommandAnimator {
    argv: Vec<String>,
}

impl CommandAnimator {
    pub fn new(argv: Vec<String>) -> Self {
        assert!(!argv.is_empty(), "empty command");
        Self { argv }
    }
}

impl PortraitAnimator for CommandAnimator {
    fn name(&self) -> &str {
        "cmd-animator"
    }

    fn id(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn animate(&self, face: &ImageBuffer, audio: &AudioSegment, fps: f64) -> Result<FrameSequence, BackendError> {
        let err = |m: String| BackendError::new("cmd-animator", m);
        let dir = scratch(self.name())?;
        let face_path = dir.path().join("face.png");
        let audio_path = dir.path().join("audio.wav");
        let frames_dir = dir.path().join("frames");
        std::fs::create_dir(&frames_dir).map_err(|e| err(e.to_string()))?;
        face.save_png(&face_path).map_err(|e| err(e.to_string()))?;
        audio.write_wav(&audio_path).map_err(|e| err(e.to_string()))?;
        run(
            self.name(),
            &self.argv,
            &[path_str(&face_path)?, path_str(&audio_path)?, path_str(&frames_dir)?, &fps.to_string()],
            None,
        )?;
        let mut files: Vec<_> = std::fs::read_dir(&frames_dir)
            .map_err(|e| err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let frames = files
            .iter()
            .map(|p| ImageBuffer::load(p).map_err(|e| err(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FrameSequence::new(frames, fps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Gender};

    fn script(dir: &Path, name: &str, body: &str) -> Vec<String> {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        vec!["sh".into(), p.to_string_lossy().into_owned()]
    }

    #[test]
    fn detector_reads_stdout() {
        let dir = tempfile::tempdir().unwrap();
        let d = CommandDetector::new(script(dir.path(), "d.sh", "echo '0 10 20 30 40 male 0.8'\n"));
        let dets = d.detect(&ImageBuffer::filled(2, 2, 3, 0), Path::new("img.png")).unwrap();
        assert_eq!(dets[0].bbox, BoundingBox::new(10, 20, 30, 40));
    }

    #[test]
    fn vlm_gets_prompt_on_stdin() {
        let dir = tempfile::tempdir().unwrap();
        let v = CommandVlm::new(script(dir.path(), "v.sh", "printf 'echo: '; cat\n"));
        let out = v
            .describe(&NarrationRequest {
                image_path: "x.png".into(),
                prompt: "Describe.".into(),
            })
            .unwrap();
        assert_eq!(out, "echo: Describe.");
    }

    #[test]
    fn failing_program_reports_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let v = CommandVlm::new(script(dir.path(), "f.sh", "echo boom >&2; exit 3\n"));
        let e = v
            .describe(&NarrationRequest {
                image_path: "x.png".into(),
                prompt: String::new(),
            })
            .unwrap_err();
        assert!(e.to_string().contains("boom"), "{e}");
    }

    #[test]
    fn tts_and_animator_file_protocols() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.wav");
        AudioSegment::silence(8_000, 0.5).write_wav(&src).unwrap();
        let tts = CommandTts::new(script(dir.path(), "t.sh", &format!("cat >/dev/null; cp {} \"$2\"\n", src.display())));
        let audio = tts.synthesize("hi", &VoiceChoice::new("af_heart", Gender::Female, "en-US")).unwrap();
        assert_eq!(audio.duration_s(), 0.5);

        let anim = CommandAnimator::new(script(
            dir.path(),
            "a.sh",
            "cp \"$1\" \"$3/000001.png\"; cp \"$1\" \"$3/000000.png\"\n",
        ));
        let face = ImageBuffer::filled(4, 4, 3, 7);
        let seq = anim.animate(&face, &audio, 25.0).unwrap();
        assert_eq!(seq.frames, vec![face.clone(), face]);
    }
}
