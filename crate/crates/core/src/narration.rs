// SPDX-License-Identifier: Apache-2.0

//! First-person artwork narration: prompt construction, the vision-language
//! backend contract, and post-curation of the answer (refusal detection,
//! disclaimer-note stripping, sentence cap).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::manifest::NarrationStatus;
use crate::model::{ArtworkMetadata, Gender};

#[derive(Debug, thiserror::Error)]
pub enum NarrationError {
    #[error("detailed prompt needs artwork metadata with author and title")]
    MissingMetadata,
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("every attempt was refused ({} attempts)", .0.attempts)]
    AllAttemptsRefused(Box<NarrationResult>),
    #[error("max_sentences must be at least 1")]
    InvalidLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Simple,
    Detailed,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Simple => "simple",
            PromptMode::Detailed => "detailed",
        })
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(PromptMode::Simple),
            "detailed" => Ok(PromptMode::Detailed),
            other => Err(format!("unknown prompt mode `{other}` (expected simple|detailed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub gender: Gender,
    pub metadata: Option<ArtworkMetadata>,
}

pub fn build_prompt(spec: &PromptSpec) -> Result<String, NarrationError> {
    let g = spec.gender;
    match spec.mode {
        PromptMode::Simple => Ok(format!(
            "Describe in two sentences the artwork in the first person as if the {g} character was speaking."
        )),
        PromptMode::Detailed => {
            let meta = spec.metadata.as_ref().ok_or(NarrationError::MissingMetadata)?;
            if meta.author.trim().is_empty() || meta.title.trim().is_empty() {
                return Err(NarrationError::MissingMetadata);
            }
            Ok(format!(
                "Describe in two sentences the artwork {} made by {} in {} in the first person as if the {g} character was speaking.",
                meta.title, meta.author, meta.year
            ))
        }
    }
}

/// Phrases that mark an answer as a refusal rather than a description.
/// Matched case-insensitively near the start of the answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalPatterns {
    patterns: Vec<String>,
    window_chars: usize,
}

impl Default for RefusalPatterns {
    fn default() -> Self {
        Self::new(
            [
                "I cannot do that",
                "I am not able to provide information about",
                "Sorry, as a responsible AI model I cannot create content",
                "I do not have access to a database",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
    }
}

impl RefusalPatterns {
    pub const DEFAULT_WINDOW: usize = 200;

    pub fn new(patterns: Vec<String>) -> Self {
        Self {
            patterns: patterns.into_iter().map(|p| fold(&p)).filter(|p| !p.is_empty()).collect(),
            window_chars: Self::DEFAULT_WINDOW,
        }
    }

    /// One pattern per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn with_window(mut self, chars: usize) -> Self {
        self.window_chars = chars;
        self
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = String>) {
        self.patterns.extend(more.into_iter().map(|p| fold(&p)).filter(|p| !p.is_empty()));
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn classify(&self, text: &str) -> NarrationStatus {
        if text.trim().is_empty() {
            return NarrationStatus::Empty;
        }
        let folded = fold(text);
        let refused = self.patterns.iter().any(|p| {
            folded
                .find(p.as_str())
                .is_some_and(|at| folded[..at].chars().count() < self.window_chars)
        });
        if refused {
            NarrationStatus::Refusal
        } else {
            NarrationStatus::Usable
        }
    }
}

/// Lowercase with typographic apostrophes straightened.
fn fold(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

pub fn classify_answer(raw: &str) -> NarrationStatus {
    RefusalPatterns::default().classify(raw)
}

/// Splits off the trailing disclaimer: the last paragraph (text following a
/// blank line, or the very start) that opens with `Note:`. Everything from
/// that paragraph on is the note.
pub fn strip_note(raw: &str) -> (String, Option<String>) {
    let mut split_at = None;
    let mut offset = 0;
    let mut prev_blank = true;
    for line in raw.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if prev_blank && !blank && opens_note(line) {
            split_at = Some(offset);
        }
        prev_blank = blank;
        offset += line.len();
    }
    match split_at {
        Some(at) => (raw[..at].trim().to_string(), Some(raw[at..].trim().to_string())),
        None => (raw.trim().to_string(), None),
    }
}

fn opens_note(line: &str) -> bool {
    let head = line.trim_start().trim_start_matches(['*', '_']);
    head.get(..5).is_some_and(|h| h.eq_ignore_ascii_case("note:"))
        || head.get(..7).is_some_and(|h| h.eq_ignore_ascii_case("note**:"))
}

const ABBREVIATIONS: [&str; 8] = ["st", "mr", "mrs", "ms", "dr", "jr", "sr", "prof"];

/// Byte offsets just past each sentence terminator. A terminator is a run of
/// `.`, `!` or `?` (plus closing quotes/brackets) followed by whitespace or the
/// end of text; a period closing a known abbreviation does not count.
pub fn sentence_ends(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut ends = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !matches!(bytes[i], b'.' | b'!' | b'?') {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && matches!(bytes[i], b'.' | b'!' | b'?') {
            i += 1;
        }
        let single_period = i - start == 1 && bytes[start] == b'.';
        while i < bytes.len() && matches!(bytes[i], b'"' | b'\'' | b')' | b']') {
            i += 1;
        }
        // Multibyte closing quotes.
        while let Some(c @ ('\u{201d}' | '\u{2019}' | '\u{bb}')) = text[i..].chars().next() {
            i += c.len_utf8();
        }
        let at_break = i >= bytes.len() || text[i..].starts_with(char::is_whitespace);
        if !at_break || single_period && is_abbreviation(&text[..start]) {
            continue;
        }
        ends.push(i);
    }
    ends
}

fn is_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric());
    ABBREVIATIONS.iter().any(|a| word.eq_ignore_ascii_case(a))
}

pub fn count_sentences(text: &str) -> usize {
    let text = text.trim();
    if text.is_empty() {
        return 0;
    }
    let ends = sentence_ends(text);
    let tail = ends.last().map_or(text, |&e| &text[e..]);
    ends.len() + usize::from(!tail.trim().is_empty())
}

/// Keeps the first `max_sentences` sentences.
pub fn enforce_length(body: &str, max_sentences: usize) -> String {
    let body = body.trim();
    match sentence_ends(body).get(max_sentences.saturating_sub(1)) {
        Some(&end) if max_sentences > 0 => body[..end].trim_end().to_string(),
        _ => body.to_string(),
    }
}

/// What a vision-language backend is asked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NarrationRequest {
    pub image_path: PathBuf,
    pub prompt: String,
}

pub trait VisionLanguageModel: Send + Sync {
    fn name(&self) -> &str;

    fn id(&self) -> String {
        self.name().to_string()
    }

    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrationConfig {
    pub max_sentences: usize,
    pub retries: u32,
    pub refusals: RefusalPatterns,
}

impl Default for NarrationConfig {
    fn default() -> Self {
        Self {
            max_sentences: 2,
            retries: 1,
            refusals: RefusalPatterns::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationResult {
    pub raw_text: String,
    /// Text to be spoken. Empty unless `status` is usable.
    pub curated_text: String,
    pub status: NarrationStatus,
    pub stripped_note: Option<String>,
    pub sentence_count: usize,
    pub attempts: u32,
    /// Prompt mode of the final attempt.
    pub mode: PromptMode,
}

impl NarrationResult {
    /// Speech text, only for usable answers.
    pub fn speech(&self) -> Option<&str> {
        (self.status == NarrationStatus::Usable).then_some(self.curated_text.as_str())
    }
}

/// prompt -> backend -> strip note -> classify -> cap length. A refused or
/// empty detailed prompt falls back once to the simple prompt, then the
/// current prompt is re-asked up to `retries` times.
pub fn narrate(
    backend: &dyn VisionLanguageModel,
    image_path: &Path,
    spec: &PromptSpec,
    cfg: &NarrationConfig,
) -> Result<NarrationResult, NarrationError> {
    if cfg.max_sentences == 0 {
        return Err(NarrationError::InvalidLength);
    }
    let mut mode = spec.mode;
    let mut attempts = 0;
    let mut fell_back = false;
    let mut reasks = 0;
    loop {
        let prompt = build_prompt(&PromptSpec {
            mode,
            ..spec.clone()
        })?;
        attempts += 1;
        let raw = backend.describe(&NarrationRequest {
            image_path: image_path.to_path_buf(),
            prompt,
        })?;
        let (body, note) = strip_note(&raw);
        let status = cfg.refusals.classify(&body);

        if status == NarrationStatus::Usable {
            let curated = enforce_length(&body, cfg.max_sentences);
            return Ok(NarrationResult {
                sentence_count: count_sentences(&curated),
                raw_text: raw,
                curated_text: curated,
                status,
                stripped_note: note,
                attempts,
                mode,
            });
        }
        log::info!("narration attempt {attempts} ({mode}) classified {status:?}");

        if mode == PromptMode::Detailed && !fell_back {
            mode = PromptMode::Simple;
            fell_back = true;
            continue;
        }
        if reasks < cfg.retries {
            reasks += 1;
            continue;
        }
        let result = NarrationResult {
            raw_text: raw,
            curated_text: String::new(),
            status,
            stripped_note: note,
            sentence_count: 0,
            attempts,
            mode,
        };
        return match status {
            NarrationStatus::Refusal => Err(NarrationError::AllAttemptsRefused(Box::new(result))),
            _ => Ok(result),
        };
    }
}
