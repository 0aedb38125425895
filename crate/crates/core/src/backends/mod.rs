// SPDX-License-Identifier: Apache-2.0

//! Concrete backends: deterministic mocks, external-command adapters and an
//! HTTP vision-language client.

pub mod command;
pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::animation::PortraitAnimator;
use crate::backend::BackendError;
use crate::face::{FaceDetector, RawDetection};
use crate::model::BoundingBox;
use crate::narration::VisionLanguageModel;
use crate::voicing::SpeechSynthesizer;

/// Parses detection records, one face per line:
/// `face_id x y w h gender confidence [yaw_degrees]`. Blank lines and lines
/// starting with `#` are skipped; a `-` gender means "not estimated".
pub fn parse_detection_records(text: &str) -> Result<Vec<RawDetection>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(7..=8).contains(&f.len()) {
            return Err(format!("line {}: expected 7 or 8 fields, got {}", i + 1, f.len()));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| format!("line {}: bad integer `{s}`", i + 1));
        let real = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad number `{s}`", i + 1));
        int(f[0])?;
        out.push(RawDetection {
            bbox: BoundingBox::new(int(f[1])?, int(f[2])?, int(f[3])?, int(f[4])?),
            gender_label: (f[5] != "-").then(|| f[5].to_string()),
            confidence: real(f[6])?,
            yaw_degrees: f.get(7).map(|s| real(s)).transpose()?,
        });
    }
    Ok(out)
}

pub fn format_detection_records(dets: &[RawDetection]) -> String {
    let mut out = String::new();
    for (i, d) in dets.iter().enumerate() {
        let b = d.bbox;
        out.push_str(&format!(
            "{i} {} {} {} {} {} {}",
            b.x,
            b.y,
            b.w,
            b.h,
            d.gender_label.as_deref().unwrap_or("-"),
            d.confidence
        ));
        if let Some(yaw) = d.yaw_degrees {
            out.push_str(&format!(" {yaw}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Detection,
    Llm,
    Tts,
    Anim,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Detection, Stage::Llm, Stage::Tts, Stage::Anim];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Detection => "detection",
            Stage::Llm => "llm",
            Stage::Tts => "tts",
            Stage::Anim => "anim",
        }
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected detection, llm, tts or anim)"))
    }
}

/// Backend spec for one stage: `mock`, `http` (llm only), or
/// `cmd:<program> [args...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
    Command(Vec<String>),
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "mock" => Ok(BackendKind::Mock),
            "http" | "ollama" => Ok(BackendKind::Http),
            other => match other.strip_prefix("cmd:") {
                Some(rest) => {
                    let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                    if argv.is_empty() {
                        Err("`cmd:` needs a program".to_string())
                    } else {
                        Ok(BackendKind::Command(argv))
                    }
                }
                None => Err(format!("unknown backend `{other}` (expected mock, http or cmd:<program>)")),
            },
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Mock => f.write_str("mock"),
            BackendKind::Http => f.write_str("http"),
            BackendKind::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

/// Per-stage backend choices; unset stages fall back to `mock`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackendChoices(pub BTreeMap<Stage, BackendKind>);

impl BackendChoices {
    pub fn all_mock() -> Self {
        Self(Stage::ALL.into_iter().map(|s| (s, BackendKind::Mock)).collect())
    }

    pub fn get(&self, stage: Stage) -> BackendKind {
        self.0.get(&stage).cloned().unwrap_or(BackendKind::Mock)
    }

    /// Parses `detection=X,llm=Y,tts=Z,anim=W` (any subset).
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("`{part}`: expected stage=backend"))?;
            map.insert(k.trim().parse::<Stage>()?, v.parse::<BackendKind>()?);
        }
        Ok(Self(map))
    }
}

#[derive(Clone)]
pub struct BackendSet {
    pub detector: Arc<dyn FaceDetector>,
    pub vlm: Arc<dyn VisionLanguageModel>,
    pub tts: Arc<dyn SpeechSynthesizer>,
    pub animator: Arc<dyn PortraitAnimator>,
}

impl BackendSet {
    pub fn mock() -> Self {
        Self {
            detector: Arc::new(mock::MockDetector::default()),
            vlm: Arc::new(mock::MockVlm::default()),
            tts: Arc::new(mock::MockTts::default()),
            animator: Arc::new(mock::MockAnimator::default()),
        }
    }

    pub fn from_choices(choices: &BackendChoices) -> Result<Self, BackendError> {
        let unsupported = |stage: Stage, kind: &BackendKind| {
            BackendError::new(kind.to_string(), format!("not available for the {} stage", stage.as_str()))
        };
        let detector: Arc<dyn FaceDetector> = match choices.get(Stage::Detection) {
            BackendKind::Mock => Arc::new(mock::MockDetector::default()),
            BackendKind::Command(argv) => Arc::new(command::CommandDetector::new(argv)),
            k => return Err(unsupported(Stage::Detection, &k)),
        };
        let vlm: Arc<dyn VisionLanguageModel> = match choices.get(Stage::Llm) {
            BackendKind::Mock => Arc::new(mock::MockVlm::default()),
            BackendKind::Http => Arc::new(http::HttpVlm::from_env()),
            BackendKind::Command(argv) => Arc::new(command::CommandVlm::new(argv)),
        };
        let tts: Arc<dyn SpeechSynthesizer> = match choices.get(Stage::Tts) {
            BackendKind::Mock => Arc::new(mock::MockTts::default()),
            BackendKind::Command(argv) => Arc::new(command::CommandTts::new(argv)),
            k => return Err(unsupported(Stage::Tts, &k)),
        };
        let animator: Arc<dyn PortraitAnimator> = match choices.get(Stage::Anim) {
            BackendKind::Mock => Arc::new(mock::MockAnimator::default()),
            BackendKind::Command(argv) => Arc::new(command::CommandAnimator::new(argv)),
            k => return Err(unsupported(Stage::Anim, &k)),
        };
        Ok(Self {
            detector,
            vlm,
            tts,
            animator,
        })
    }
}
