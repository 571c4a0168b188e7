//! Log-mel filterbank extraction, per-utterance CMVN and delta stacking.
//!
//! Pipeline per frame: DC removal, pre-emphasis, Hamming window, zero-pad to
//! the next power of two, power spectrum, HTK-mel triangular filters, natural
//! log with a floor. All arithmetic is `f64`.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorio::{RawTensor, TensorIoError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("waveform has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid waveform: {0}")]
    InvalidWave(String),
    #[error("invalid fbank config: {0}")]
    InvalidConfig(String),
    #[error("CMVN needs at least 2 frames, got {0}")]
    InsufficientFrames(usize),
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::InvalidWave("no samples".into()));
        }
        if sample_rate < 8000 {
            return Err(FeatureError::InvalidWave(format!(
                "sample rate {sample_rate} Hz below 8000"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Reads a 16-bit PCM mono WAV file, scaling samples into [-1, 1).
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(FeatureError::InvalidWave(format!(
                "expected PCM16 mono, got {} channel(s) at {} bits",
                spec.channels, spec.bits_per_sample
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbankConfig {
    pub num_mel_bins: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            num_mel_bins: 80,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            preemphasis: 0.97,
            log_floor: 1e-10f64.ln(),
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.num_mel_bins == 0 {
            return Err(FeatureError::InvalidConfig("num_mel_bins must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(FeatureError::InvalidConfig(format!(
                "preemphasis {} outside [0, 1)",
                self.preemphasis
            )));
        }
        if !(self.frame_shift_ms > 0.0 && self.frame_shift_ms <= self.frame_length_ms) {
            return Err(FeatureError::InvalidConfig(format!(
                "frame shift {} ms must be positive and <= frame length {} ms",
                self.frame_shift_ms, self.frame_length_ms
            )));
        }
        if !self.log_floor.is_finite() {
            return Err(FeatureError::InvalidConfig("log_floor must be finite".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }
}

/// T×D row-major matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if rows == 0 || cols == 0 {
            return Err(FeatureError::InvalidMatrix(format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(FeatureError::InvalidMatrix(format!(
                "{} values for shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidMatrix(format!(
                "non-finite entry at frame {}, dim {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            frame_shift_ms: 10.0,
            frame_length_ms: 25.0,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(FeatureError::InvalidMatrix("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn num_frames(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.cols + d]
    }

    /// Mutable access for in-crate transforms that keep entries finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn with_timing(mut self, shift_ms: f64, length_ms: f64) -> Self {
        self.frame_shift_ms = shift_ms;
        self.frame_length_ms = length_ms;
        self
    }

    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }

    pub fn from_raw(raw: RawTensor) -> Result<Self, FeatureError> {
        let (r, c) = raw.matrix_shape()?;
        Self::new(r, c, raw.data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        Ok(self.to_raw().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_raw(RawTensor::load(path)?)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of frames produced for `n` samples; zero when `n < window`.
pub fn num_frames(n: usize, window: usize, hop: usize) -> usize {
    if n < window || hop == 0 {
        0
    } else {
        1 + (n - window) / hop
    }
}

/// Triangular mel filters between 0 Hz and Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first FFT bin and weights for consecutive bins.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(num_bins: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let mel_hi = hz_to_mel(nyquist);
        let mel_points: Vec<f64> = (0..num_bins + 2)
            .map(|i| mel_hi * i as f64 / (num_bins + 1) as f64)
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let num_fft_bins = fft_size / 2 + 1;
        let mut filters = Vec::with_capacity(num_bins);
        let mut centers_hz = Vec::with_capacity(num_bins);
        for m in 0..num_bins {
            let (left, center, right) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            centers_hz.push(mel_to_hz(center));
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..num_fft_bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        Self {
            filters,
            centers_hz,
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Shared per-frame preprocessing: DC removal, pre-emphasis and windowing.
pub(crate) fn prepare_frame(frame: &[f64], preemph: f64, window: &[f64], out: &mut [f64]) {
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    for (i, o) in out.iter_mut().enumerate().take(frame.len()) {
        let x = frame[i] - mean;
        let prev = if i == 0 { x } else { frame[i - 1] - mean };
        *o = (x - preemph * prev) * window[i];
    }
}

struct FbankPlan {
    window_len: usize,
    hop: usize,
    fft_size: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl FbankPlan {
    fn new(cfg: &FbankConfig, sample_rate: u32) -> Self {
        let window_len = cfg.window_samples(sample_rate);
        let fft_size = window_len.next_power_of_two();
        Self {
            window_len,
            hop: cfg.hop_samples(sample_rate),
            fft_size,
            window: hamming(window_len),
            fft: FftPlanner::new().plan_fft_forward(fft_size),
            bank: MelFilterbank::new(cfg.num_mel_bins, fft_size, sample_rate),
        }
    }
}

/// Mel energies (before the log) for every frame, row-major T×D.
pub fn mel_energies(wave: &Waveform, cfg: &FbankConfig) -> Result<(usize, Vec<f64>), FeatureError> {
    cfg.validate()?;
    let plan = FbankPlan::new(cfg, wave.sample_rate);
    let t = num_frames(wave.samples.len(), plan.window_len, plan.hop);
    if t == 0 || plan.window_len == 0 {
        return Err(FeatureError::TooShort {
            samples: wave.samples.len(),
            window: plan.window_len,
        });
    }
    let d = cfg.num_mel_bins;
    let mut out = vec![0.0; t * d];
    let mut frame = vec![0.0; plan.fft_size];
    let mut buf = vec![Complex::new(0.0, 0.0); plan.fft_size];
    let mut power = vec![0.0; plan.fft_size / 2 + 1];
    for i in 0..t {
        let s = i * plan.hop;
        frame.iter_mut().for_each(|v| *v = 0.0);
        prepare_frame(
            &wave.samples[s..s + plan.window_len],
            cfg.preemphasis,
            &plan.window,
            &mut frame,
        );
        for (b, &v) in buf.iter_mut().zip(&frame) {
            *b = Complex::new(v, 0.0);
        }
        plan.fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        plan.bank.apply(&power, &mut out[i * d..(i + 1) * d]);
    }
    Ok((t, out))
}

pub fn compute_fbank(wave: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix, FeatureError> {
    let (t, mut e) = mel_energies(wave, cfg)?;
    let floor = cfg.log_floor.exp();
    for v in e.iter_mut() {
        *v = if *v <= floor {
            cfg.log_floor
        } else {
            v.ln().max(cfg.log_floor)
        };
    }
    Ok(FeatureMatrix::new(t, cfg.num_mel_bins, e)?.with_timing(cfg.frame_shift_ms, cfg.frame_length_ms))
}

/// Per-utterance mean/variance normalization; constant dimensions become zero.
pub fn apply_cmvn(feat: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    let (t, d) = (feat.rows, feat.cols);
    if t < 2 {
        return Err(FeatureError::InsufficientFrames(t));
    }
    let mut out = feat.clone();
    for j in 0..d {
        let mean = (0..t).map(|i| feat.get(i, j)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (feat.get(i, j) - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        for i in 0..t {
            out.data[i * d + j] = if std > 1e-12 * (1.0 + mean.abs()) {
                (feat.get(i, j) - mean) / std
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Appends Δ and ΔΔ (regression over ±`window` frames, edges replicated).
pub fn add_deltas(feat: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let delta = regression(feat.rows, feat.cols, &feat.data, window);
    let delta2 = regression(feat.rows, feat.cols, &delta, window);
    let d = feat.cols;
    let mut data = Vec::with_capacity(feat.data.len() * 3);
    for t in 0..feat.rows {
        data.extend_from_slice(feat.frame(t));
        data.extend_from_slice(&delta[t * d..(t + 1) * d]);
        data.extend_from_slice(&delta2[t * d..(t + 1) * d]);
    }
    FeatureMatrix {
        rows: feat.rows,
        cols: 3 * d,
        data,
        frame_shift_ms: feat.frame_shift_ms,
        frame_length_ms: feat.frame_length_ms,
    }
}

fn regression(rows: usize, cols: usize, x: &[f64], window: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = vec![0.0; rows * cols];
    if window == 0 {
        return out;
    }
    let clamp = |t: isize| t.clamp(0, rows as isize - 1) as usize;
    for t in 0..rows {
        for n in 1..=window {
            let fwd = clamp(t as isize + n as isize);
            let back = clamp(t as isize - n as isize);
            for j in 0..cols {
                out[t * cols + j] += n as f64 * (x[fwd * cols + j] - x[back * cols + j]);
            }
        }
        for j in 0..cols {
            out[t * cols + j] /= denom;
        }
    }
    out
}
