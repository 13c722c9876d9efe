//! Frame-level spectral features: FFT magnitudes and MFCCs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, FeatureMethod, MAX_MFCC_COEFFS};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("window size {0} is not a power of two >= 2")]
    WindowNotPowerOfTwo(usize),
    #[error("MFCC count {0} is outside 1..=40")]
    NumCoeffsOutOfRange(usize),
    #[error("invalid MFCC parameters: {0}")]
    InvalidParams(String),
    #[error("malformed feature file: {0}")]
    Malformed(String),
}

/// MFCC front-end constants. Stored in the audio config so a replay uses
/// exactly the values of the original run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfccParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub num_filters: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for MfccParams {
    fn default() -> Self {
        Self { frame_ms: 25.0, hop_ms: 10.0, num_filters: 26, preemphasis: 0.97, log_floor: 1e-10 }
    }
}

impl MfccParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0) {
            return Err("MFCC frame_ms and hop_ms must be positive".into());
        }
        if self.num_filters == 0 {
            return Err("MFCC num_filters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err("MFCC preemphasis must be in [0, 1)".into());
        }
        if !(self.log_floor > 0.0) {
            return Err("MFCC log_floor must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub method: FeatureMethod,
    pub window_size: usize,
    pub hop_size: usize,
    pub sample_rate_hz: u32,
    pub scaled: bool,
}

/// Row-major `rows x cols` matrix, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub meta: FeatureMeta,
}

impl FeatureMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.values[r * self.cols + c])
    }
}

/// `floor((n - window) / hop) + 1`, or 0 when `n < window`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window || window == 0 || hop == 0 {
        0
    } else {
        (n - window) / hop + 1
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect()
}

/// Hann-windowed magnitude spectra, hop = window / 2, `window / 2 + 1` bins.
pub fn fft_features(buf: &AudioBuffer, window_size: usize) -> Result<FeatureMatrix, FeatureError> {
    if window_size < 2 || !window_size.is_power_of_two() {
        return Err(FeatureError::WindowNotPowerOfTwo(window_size));
    }
    let hop = window_size / 2;
    let cols = window_size / 2 + 1;
    let rows = frame_count(buf.len(), window_size, hop);
    let window = hann(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let mut scratch = vec![Complex::new(0.0, 0.0); window_size];
    let mut values = Vec::with_capacity(rows * cols);
    for f in 0..rows {
        let frame = &buf.samples[f * hop..f * hop + window_size];
        for ((s, x), w) in scratch.iter_mut().zip(frame).zip(&window) {
            *s = Complex::new(x * w, 0.0);
        }
        fft.process(&mut scratch);
        values.extend(scratch[..cols].iter().map(|c| c.norm()));
    }
    Ok(FeatureMatrix {
        rows,
        cols,
        values,
        meta: FeatureMeta {
            method: FeatureMethod::Fft,
            window_size,
            hop_size: hop,
            sample_rate_hz: buf.sample_rate_hz,
            scaled: false,
        },
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist,
/// evaluated at the continuous bin frequencies. Returns `num_filters` rows of
/// `nfft / 2 + 1` weights.
pub fn mel_filterbank(num_filters: usize, nfft: usize, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (num_filters + 1) as f64))
        .collect();
    let bins = nfft / 2 + 1;
    let bin_hz = f64::from(sample_rate_hz) / nfft as f64;
    (0..num_filters)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `count` rows of length `n`.
pub fn dct2_basis(n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Per-column z-score; the standard deviation (population) is floored at 1e-12.
pub fn zscore_columns(m: &mut FeatureMatrix) {
    if m.rows == 0 {
        m.meta.scaled = true;
        return;
    }
    for c in 0..m.cols {
        let n = m.rows as f64;
        let mean = m.column(c).sum::<f64>() / n;
        let var = m.column(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-12);
        for r in 0..m.rows {
            let v = &mut m.values[r * m.cols + c];
            *v = (*v - mean) / std;
        }
    }
    m.meta.scaled = true;
}

/// MFCCs with the default front end.
pub fn mfcc(buf: &AudioBuffer, num_coeffs: usize, scale: bool) -> Result<FeatureMatrix, FeatureError> {
    mfcc_with(buf, num_coeffs, scale, &MfccParams::default())
}

/// Pre-emphasis, Hann-windowed frames, power spectrum, mel filterbank,
/// floored natural log, orthonormal DCT-II. When more coefficients are
/// requested than there are filters, the filter count is raised to match.
pub fn mfcc_with(buf: &AudioBuffer, num_coeffs: usize, scale: bool, params: &MfccParams) -> Result<FeatureMatrix, FeatureError> {
    if !(1..=MAX_MFCC_COEFFS).contains(&num_coeffs) {
        return Err(FeatureError::NumCoeffsOutOfRange(num_coeffs));
    }
    params.validate().map_err(FeatureError::InvalidParams)?;
    let rate = f64::from(buf.sample_rate_hz);
    let frame_len = (params.frame_ms * rate / 1000.0).round() as usize;
    let hop = (params.hop_ms * rate / 1000.0).round() as usize;
    if frame_len == 0 || hop == 0 {
        return Err(FeatureError::InvalidParams("frame or hop shorter than one sample".into()));
    }
    let nfft = frame_len.next_power_of_two();
    let num_filters = params.num_filters.max(num_coeffs);
    let rows = frame_count(buf.len(), frame_len, hop);
    let meta = FeatureMeta {
        method: FeatureMethod::Mfcc,
        window_size: frame_len,
        hop_size: hop,
        sample_rate_hz: buf.sample_rate_hz,
        scaled: false,
    };
    let mut out = FeatureMatrix { rows, cols: num_coeffs, values: Vec::with_capacity(rows * num_coeffs), meta };
    if rows == 0 {
        if scale {
            out.meta.scaled = true;
        }
        return Ok(out);
    }

    let emphasized: Vec<f64> = buf
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == 0 { x } else { x - params.preemphasis * buf.samples[i - 1] })
        .collect();
    let window = hann(frame_len);
    let filters = mel_filterbank(num_filters, nfft, buf.sample_rate_hz);
    let dct = dct2_basis(num_filters, num_coeffs);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut spectrum = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    let mut log_mel = vec![0.0; num_filters];

    for f in 0..rows {
        let frame = &emphasized[f * hop..f * hop + frame_len];
        spectrum.fill(Complex::new(0.0, 0.0));
        for ((s, x), w) in spectrum.iter_mut().zip(frame).zip(&window) {
            *s = Complex::new(x * w, 0.0);
        }
        fft.process(&mut spectrum);
        for (p, c) in power.iter_mut().zip(&spectrum) {
            *p = c.norm_sqr() / nfft as f64;
        }
        for (lm, filt) in log_mel.iter_mut().zip(&filters) {
            let energy: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            *lm = energy.max(params.log_floor).ln();
        }
        out.values.extend(dct.iter().map(|basis| basis.iter().zip(&log_mel).map(|(b, v)| b * v).sum::<f64>()));
    }
    if scale {
        zscore_columns(&mut out);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    cols: usize,
    hop_size: usize,
    method: FeatureMethod,
    rows: usize,
    sample_rate_hz: u32,
    scaled: bool,
    window_size: usize,
}

/// `.feat.tsv` text: a JSON header line, then one tab-separated row per frame
/// using the shortest decimal that round-trips each value.
pub fn render_feature_file(m: &FeatureMatrix) -> String {
    let header = FileHeader {
        cols: m.cols,
        hop_size: m.meta.hop_size,
        method: m.meta.method,
        rows: m.rows,
        sample_rate_hz: m.meta.sample_rate_hz,
        scaled: m.meta.scaled,
        window_size: m.meta.window_size,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in 0..m.rows {
        for (i, v) in m.row(r).iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_feature_file(text: &str) -> Result<FeatureMatrix, FeatureError> {
    let bad = |m: String| FeatureError::Malformed(m);
    let mut lines = text.lines();
    let header: FileHeader = serde_json::from_str(lines.next().ok_or_else(|| bad("empty file".into()))?)
        .map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::with_capacity(header.rows * header.cols);
    for line in lines {
        let before = values.len();
        for field in line.split('\t') {
            values.push(field.parse::<f64>().map_err(|e| bad(format!("{field:?}: {e}")))?);
        }
        if values.len() - before != header.cols {
            return Err(bad(format!("row has {} values, expected {}", values.len() - before, header.cols)));
        }
    }
    if values.len() != header.rows * header.cols {
        return Err(bad("row count does not match header".into()));
    }
    Ok(FeatureMatrix {
        rows: header.rows,
        cols: header.cols,
        values,
        meta: FeatureMeta {
            method: header.method,
            window_size: header.window_size,
            hop_size: header.hop_size,
            sample_rate_hz: header.sample_rate_hz,
            scaled: header.scaled,
        },
    })
}
