//! Audio ingest, rate conversion and utterance segmentation.

mod resample;
mod wav;

use std::path::Path;
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::chat::TimeInterval;
use crate::features::MfccParams;
use crate::text::{Dataset, UtteranceRow};

pub use resample::{edge_samples, output_len, resample, KAISER_BETA, ROLLOFF, ZERO_CROSSINGS};
pub use wav::{decode_wav, encode_wav_pcm16, encode_wav_pcm16_interleaved, read_wav};

pub const AUDIO_SCHEMA_VERSION: u32 = 1;
pub const MAX_MFCC_COEFFS: usize = 40;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio data is truncated")]
    TruncatedData,
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("decoder command failed: {0}")]
    Decoder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / f64::from(self.sample_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMethod {
    Fft,
    Mfcc,
    None,
}

impl FromStr for FeatureMethod {
    type Err = String;

    /// Accepts `FTT` as a legacy spelling of `FFT`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FFT" | "FTT" => Ok(FeatureMethod::Fft),
            "MFCC" => Ok(FeatureMethod::Mfcc),
            "NONE" => Ok(FeatureMethod::None),
            other => Err(format!("expected FFT, MFCC or NONE, got {other:?}")),
        }
    }
}

impl FeatureMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMethod::Fft => "FFT",
            FeatureMethod::Mfcc => "MFCC",
            FeatureMethod::None => "NONE",
        }
    }
}

impl Serialize for FeatureMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FeatureMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_schema_version() -> u32 {
    AUDIO_SCHEMA_VERSION
}

/// The `audio_process.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioPipelineConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: Dataset,
    pub input_path: String,
    pub segment_output_path: String,
    pub target_sample_rate_hz: u32,
    pub feature_method: FeatureMethod,
    /// FFT window size, MFCC coefficient count, or 0 for NONE.
    pub feature_order: usize,
    pub scale_mfcc: bool,
    /// External command converting compressed audio to PCM WAV, with
    /// `{input}` and `{output}` placeholders, e.g. `sox {input} -b 16 {output}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_command: Option<String>,
    #[serde(default)]
    pub mfcc: MfccParams,
}

impl AudioPipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_sample_rate_hz == 0 {
            return Err("target_sample_rate_hz must be positive".into());
        }
        match self.feature_method {
            FeatureMethod::Fft => {
                if self.feature_order < 2 || !self.feature_order.is_power_of_two() {
                    return Err(format!("FFT window size {} is not a power of two >= 2", self.feature_order));
                }
            }
            FeatureMethod::Mfcc => {
                if !(1..=MAX_MFCC_COEFFS).contains(&self.feature_order) {
                    return Err(format!("MFCC count {} is outside 1..={MAX_MFCC_COEFFS}", self.feature_order));
                }
            }
            FeatureMethod::None => {
                if self.feature_order != 0 {
                    return Err("feature_order must be 0 when feature_method is NONE".into());
                }
            }
        }
        self.mfcc.validate()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Runs the configured decoder command and reads the WAV it produced.
pub fn decode_external(template: &str, input: &Path, scratch_dir: &Path) -> Result<AudioBuffer, AudioError> {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let output = scratch_dir.join(format!("{stem}.wav"));
    let parts: Vec<String> = template
        .split_whitespace()
        .map(|p| {
            p.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect();
    let (program, args) = parts.split_first().ok_or_else(|| AudioError::Decoder("empty decoder command".into()))?;
    let status = Command::new(program)
        .args(args)
        .status()
        .map_err(|e| AudioError::Decoder(format!("{program}: {e}")))?;
    if !status.success() {
        return Err(AudioError::Decoder(format!("{program} exited with {status}")));
    }
    read_wav(&output)
}

/// `floor(ms * rate / 1000)` without floating point.
pub fn ms_to_sample(ms: u64, rate_hz: u32) -> usize {
    (u128::from(ms) * u128::from(rate_hz) / 1000) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub uid: String,
    pub utt_index: usize,
    pub audio: AudioBuffer,
}

impl Segment {
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.uid, self.utt_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SegmentTally {
    /// Rows lacking a start or end timestamp.
    pub skipped_untimed: usize,
    /// Rows whose end ran past the buffer and were clipped.
    pub clipped: usize,
}

/// Cuts one segment per timed row, purely from the row's own timestamps.
pub fn segment_by_transcript(buf: &AudioBuffer, rows: &[UtteranceRow]) -> (Vec<Segment>, SegmentTally) {
    let mut tally = SegmentTally::default();
    let mut segments = Vec::new();
    for row in rows {
        let (Some(start_ms), Some(end_ms)) = (row.start_ms, row.end_ms) else {
            tally.skipped_untimed += 1;
            continue;
        };
        let mut start = ms_to_sample(start_ms, buf.sample_rate_hz);
        let mut end = ms_to_sample(end_ms, buf.sample_rate_hz);
        if end > buf.len() {
            tally.clipped += 1;
            log::warn!("{}_{}: end {end_ms} ms is beyond the audio; clipped", row.uid, row.utt_index);
            end = buf.len();
            start = start.min(end);
        }
        segments.push(Segment {
            uid: row.uid.clone(),
            utt_index: row.utt_index,
            audio: AudioBuffer::new(buf.samples[start..end].to_vec(), buf.sample_rate_hz),
        });
    }
    (segments, tally)
}

/// Whole-file render with the given intervals cut out. Overlapping
/// intervals are merged first.
pub fn render_trimmed(buf: &AudioBuffer, trim: &[TimeInterval]) -> AudioBuffer {
    let mut ranges: Vec<(usize, usize)> = trim
        .iter()
        .map(|iv| {
            let s = ms_to_sample(iv.start_ms, buf.sample_rate_hz).min(buf.len());
            let e = ms_to_sample(iv.end_ms, buf.sample_rate_hz).min(buf.len());
            (s, e)
        })
        .filter(|(s, e)| s < e)
        .collect();
    ranges.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in ranges {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let mut out = Vec::with_capacity(buf.len());
    let mut cursor = 0;
    for (s, e) in merged {
        out.extend_from_slice(&buf.samples[cursor..s]);
        cursor = e;
    }
    out.extend_from_slice(&buf.samples[cursor..]);
    AudioBuffer::new(out, buf.sample_rate_hz)
}
