// SPDX-License-Identifier: Apache-2.0

//! Text-to-speech contract, voice selection, and splitting of long narration
//! audio into animation-sized chunks at low-energy points.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::model::Gender;

#[derive(Debug, thiserror::Error)]
pub enum VoicingError {
    #[error("no {0} voice in the catalog")]
    NoVoiceForGender(Gender),
    #[error("cannot synthesize empty text")]
    EmptyText,
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav layout: {0}")]
    UnsupportedWav(String),
}

/// Mono samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioSegment {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self { sample_rate, samples }
    }

    pub fn silence(sample_rate: u32, duration_s: f64) -> Self {
        Self::new(sample_rate, vec![0.0; (duration_s * sample_rate as f64).round() as usize])
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Snaps samples onto the 16-bit grid used on disk, so in-memory audio
    /// equals what a write/read cycle produces.
    pub fn quantized(&self) -> Self {
        Self::new(
            self.sample_rate,
            self.samples.iter().map(|&s| i16_to_f32(f32_to_i16(s))).collect(),
        )
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), VoicingError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(f32_to_i16(s))?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Reads PCM or float WAV; multi-channel input is averaged to mono.
    pub fn read_wav(path: &Path) -> Result<Self, VoicingError> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => r
                .samples::<i16>()
                .map(|s| s.map(i16_to_f32))
                .collect::<Result<_, _>>()?,
            (hound::SampleFormat::Int, bits @ (8 | 24 | 32)) => {
                let scale = (1i64 << (bits - 1)) as f32;
                r.samples::<i32>().map(|s| s.map(|v| v as f32 / scale)).collect::<Result<_, _>>()?
            }
            (hound::SampleFormat::Float, 32) => r.samples::<f32>().collect::<Result<_, _>>()?,
            (fmt, bits) => return Err(VoicingError::UnsupportedWav(format!("{fmt:?} {bits}-bit"))),
        };
        let ch = spec.channels.max(1) as usize;
        let samples = if ch == 1 {
            interleaved
        } else {
            interleaved
                .chunks(ch)
                .map(|f| f.iter().sum::<f32>() / ch as f32)
                .collect()
        };
        Ok(Self::new(spec.sample_rate, samples))
    }
}

pub fn f32_to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn i16_to_f32(s: i16) -> f32 {
    s as f32 / 32767.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceChoice {
    pub voice_id: String,
    pub gender: Gender,
    pub locale: String,
}

impl VoiceChoice {
    pub fn new(voice_id: &str, gender: Gender, locale: &str) -> Self {
        Self {
            voice_id: voice_id.to_string(),
            gender,
            locale: locale.to_string(),
        }
    }
}

/// American English voices shipped with the Kokoro-82M model.
pub fn default_catalog() -> Vec<VoiceChoice> {
    vec![
        VoiceChoice::new("af_heart", Gender::Female, "en-US"),
        VoiceChoice::new("af_bella", Gender::Female, "en-US"),
        VoiceChoice::new("am_michael", Gender::Male, "en-US"),
        VoiceChoice::new("am_adam", Gender::Male, "en-US"),
    ]
}

/// First catalog entry of the requested gender.
pub fn select_voice(gender: Gender, catalog: &[VoiceChoice]) -> Result<VoiceChoice, VoicingError> {
    catalog
        .iter()
        .find(|v| v.gender == gender)
        .cloned()
        .ok_or(VoicingError::NoVoiceForGender(gender))
}

pub trait SpeechSynthesizer: Send + Sync {
    fn name(&self) -> &str;

    fn id(&self) -> String {
        self.name().to_string()
    }

    fn synthesize(&self, text: &str, voice: &VoiceChoice) -> Result<AudioSegment, BackendError>;
}

pub fn synthesize(
    backend: &dyn SpeechSynthesizer,
    text: &str,
    voice: &VoiceChoice,
) -> Result<AudioSegment, VoicingError> {
    if text.trim().is_empty() {
        return Err(VoicingError::EmptyText);
    }
    let audio = backend.synthesize(text, voice)?;
    if audio.is_empty() {
        return Err(BackendError::new(backend.name(), "returned empty audio").into());
    }
    Ok(audio)
}

/// Energy frame length used to score candidate split points.
pub const ENERGY_FRAME_S: f64 = 0.025;

/// Splits audio into chunks no longer than `max_len_s`, cutting near the
/// uniform split points at the quietest 25 ms frame within
/// `±search_window_s`. Concatenating the chunks gives back the input.
pub fn chunk_audio(a: &AudioSegment, max_len_s: f64, search_window_s: f64) -> Vec<AudioSegment> {
    chunk_audio_aligned(a, max_len_s, search_window_s, 1)
}

/// Like [`chunk_audio`], but cut points are restricted to multiples of
/// `align` samples where possible. With `align` = samples per video frame,
/// every chunk but the last spans a whole number of frames.
pub fn chunk_audio_aligned(a: &AudioSegment, max_len_s: f64, search_window_s: f64, align: usize) -> Vec<AudioSegment> {
    assert!(max_len_s > 0.0, "max_len_s must be positive");
    assert!(search_window_s >= 0.0, "search_window_s must be non-negative");
    let align = align.max(1);
    let n = a.len();
    let sr = a.sample_rate as f64;
    let max = ((max_len_s * sr).floor() as usize).max(1);
    if n <= max {
        return vec![a.clone()];
    }
    let k = n.div_ceil(max);
    let frame = ((ENERGY_FRAME_S * sr).round() as usize).max(1);
    let step = align * frame.div_ceil(align);
    let window = (search_window_s * sr).round() as usize;

    let mut energy = Vec::with_capacity(n + 1);
    energy.push(0.0f64);
    let mut acc = 0.0f64;
    for &s in &a.samples {
        acc += (s as f64) * (s as f64);
        energy.push(acc);
    }
    let frame_energy = |center: usize| {
        let lo = center.saturating_sub(frame / 2);
        let hi = (lo + frame).min(n);
        (energy[hi] - energy[lo]) / (hi - lo).max(1) as f64
    };

    let mut cuts = Vec::with_capacity(k - 1);
    let mut prev = 0usize;
    for i in 1..k {
        let ideal = (i * n + k / 2) / k;
        // Leave room for every remaining chunk to be non-empty and <= max.
        let lo = (prev + 1).max(n.saturating_sub((k - i) * max));
        let hi = (prev + max).min(n - (k - i));
        let fallback = nearest_aligned(ideal, lo, hi, align);

        let cut = if window == 0 {
            fallback
        } else {
            let wl = lo.max(ideal.saturating_sub(window));
            let wh = hi.min(ideal + window);
            let mut best: Option<(f64, usize, usize)> = None;
            if wl <= wh {
                let mut p = wl.div_ceil(step) * step;
                while p <= wh {
                    let key = (frame_energy(p), p.abs_diff(ideal), p);
                    if best.is_none_or(|b| key.0 < b.0 || key.0 == b.0 && (key.1, key.2) < (b.1, b.2)) {
                        best = Some(key);
                    }
                    p += step;
                }
            }
            best.map_or(fallback, |b| b.2)
        };
        cuts.push(cut);
        prev = cut;
    }

    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(n)) {
        out.push(AudioSegment::new(a.sample_rate, a.samples[start..end].to_vec()));
        start = end;
    }
    out
}

fn nearest_aligned(target: usize, lo: usize, hi: usize, align: usize) -> usize {
    let t = target.clamp(lo, hi);
    if align == 1 {
        return t;
    }
    let down = t / align * align;
    let up = down + align;
    [down, up]
        .into_iter()
        .filter(|&c| c >= lo && c <= hi)
        .min_by_key(|&c| c.abs_diff(t))
        .unwrap_or(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(sr: u32, secs: f64) -> AudioSegment {
        let n = (secs * sr as f64).round() as usize;
        AudioSegment::new(
            sr,
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f32::consts::PI * 220.0 * i as f32 / sr as f32).sin())
                .collect(),
        )
    }

    #[test]
    fn voice_selection() {
        let f1 = VoiceChoice::new("f1", Gender::Female, "en-US");
        let m1 = VoiceChoice::new("m1", Gender::Male, "en-US");
        let m2 = VoiceChoice::new("m2", Gender::Male, "en-US");
        assert_eq!(select_voice(Gender::Female, &[f1.clone(), m1.clone()]).unwrap(), f1);
        assert!(matches!(
            select_voice(Gender::Male, std::slice::from_ref(&f1)),
            Err(VoicingError::NoVoiceForGender(Gender::Male))
        ));
        assert_eq!(select_voice(Gender::Male, &[f1, m1.clone(), m2]).unwrap(), m1);
        assert!(select_voice(Gender::Male, &[]).is_err());
    }

    #[test]
    fn default_catalog_covers_both() {
        let cat = default_catalog();
        assert_eq!(select_voice(Gender::Female, &cat).unwrap().voice_id, "af_heart");
        assert_eq!(select_voice(Gender::Male, &cat).unwrap().voice_id, "am_michael");
    }

    #[test]
    fn short_audio_single_chunk() {
        let a = tone(16_000, 10.0);
        let chunks = chunk_audio(&a, 20.0, 1.5);
        assert_eq!(chunks, vec![a]);
    }

    #[test]
    fn forty_five_seconds_three_chunks() {
        let a = tone(16_000, 45.0);
        let chunks = chunk_audio(&a, 20.0, 1.5);
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.duration_s() <= 20.0));
        let joined: Vec<f32> = chunks.iter().flat_map(|c| c.samples.iter().copied()).collect();
        assert_eq!(joined, a.samples);
    }

    /// Brute force: per-sample mean square over every 25 ms frame, then the
    /// set of samples lying in all-silent frames.
    fn silent_sample(a: &AudioSegment, idx: usize) -> bool {
        let f = (0.025 * a.sample_rate as f64).round() as usize;
        let lo = idx.saturating_sub(f / 2);
        a.samples[lo..(lo + f).min(a.len())].iter().all(|&s| s == 0.0)
    }

    #[test]
    fn split_lands_in_silence() {
        let sr = 16_000;
        let mut a = tone(sr, 30.0);
        // Silence 14.2 s .. 14.8 s, off the uniform midpoint at 15 s.
        for s in &mut a.samples[(14.2 * sr as f64) as usize..(14.8 * sr as f64) as usize] {
            *s = 0.0;
        }
        let chunks = chunk_audio(&a, 20.0, 2.0);
        assert_eq!(chunks.len(), 2);
        let cut = chunks[0].len();
        let cut_s = cut as f64 / sr as f64;
        assert!((14.2..=14.8).contains(&cut_s), "cut at {cut_s}");
        assert!(silent_sample(&a, cut));
    }

    #[test]
    fn aligned_cuts_land_on_frame_boundaries() {
        let a = tone(16_000, 48.0);
        let chunks = chunk_audio_aligned(&a, 20.0, 1.5, 640);
        assert_eq!(chunks.len(), 3);
        for c in &chunks[..2] {
            assert_eq!(c.len() % 640, 0);
        }
        assert!(chunks.iter().all(|c| c.duration_s() <= 20.0));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let a = tone(16_000, 0.5).quantized();
        a.write_wav(&p).unwrap();
        assert_eq!(AudioSegment::read_wav(&p).unwrap(), a);
    }

    #[test]
    fn quantization_is_idempotent() {
        let a = tone(8_000, 0.1);
        assert_eq!(a.quantized().quantized(), a.quantized());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn chunking_invariants(
            n in 1usize..200_000,
            max_len in 0.5f64..5.0,
            window in prop_oneof![Just(0.0), 0.0f64..1.0],
            align in prop_oneof![Just(1usize), Just(320usize), Just(640usize)],
            seed in any::<u32>(),
        ) {
            let sr = 8_000u32;
            let samples: Vec<f32> = (0..n)
                .map(|i| (((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed) >> 16) as f32 / 65_536.0) - 0.5)
                .collect();
            let a = AudioSegment::new(sr, samples);
            let chunks = chunk_audio_aligned(&a, max_len, window, align);
            let max = (max_len * sr as f64).floor() as usize;
            prop_assert!(chunks.iter().all(|c| c.len() <= max.max(1) && !c.is_empty()));
            let joined: Vec<f32> = chunks.iter().flat_map(|c| c.samples.iter().copied()).collect();
            prop_assert_eq!(&joined, &a.samples);
            if window == 0.0 {
                prop_assert_eq!(chunks.len(), n.div_ceil(max.max(1)));
            }
        }
    }
}
