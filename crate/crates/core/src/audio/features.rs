//! Per-window audio descriptors: MFCC, CENS chroma and an autocorrelation
//! tempogram, pooled into one vector every `window_ms`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::AudioSegment;

pub const LOG_FLOOR: f64 = 1e-10;

/// Upper bounds of the CENS quantization steps and the value each step maps to.
const CENS_STEPS: [(f64, f64); 5] = [(0.05, 0.0), (0.1, 0.25), (0.2, 0.5), (0.4, 0.75), (f64::INFINITY, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_length: usize,
    pub mel_bands: usize,
    pub mfcc_count: usize,
    pub chroma_bins: usize,
    pub cens_smoothing_window: usize,
    pub cens_downsample: usize,
    pub tempogram_window: usize,
    pub window_ms: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            fft_size: 2048,
            hop_length: 512,
            mel_bands: 128,
            mfcc_count: 40,
            chroma_bins: 12,
            cens_smoothing_window: 41,
            cens_downsample: 10,
            tempogram_window: 384,
            window_ms: 500,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.sample_rate as usize,
            self.fft_size,
            self.hop_length,
            self.mel_bands,
            self.mfcc_count,
            self.chroma_bins,
            self.cens_smoothing_window,
            self.cens_downsample,
            self.tempogram_window,
            self.window_ms as usize,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("feature parameters must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.mfcc_count > self.mel_bands {
            return Err(Error::Config("mfcc_count exceeds mel_bands".into()));
        }
        if self.chroma_bins != 12 {
            return Err(Error::Config("only 12 chroma bins are supported".into()));
        }
        Ok(())
    }

    /// Length of one pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.mfcc_count + self.chroma_bins + self.tempogram_window
    }

    pub fn window_samples(&self) -> usize {
        ((f64::from(self.sample_rate) * f64::from(self.window_ms) / 1000.0).round() as usize).max(1)
    }
}

/// One pooled feature vector per analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub song_id: String,
    pub window_ms: u32,
    pub windows: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.windows.first().map_or(0, Vec::len)
    }
}

/// Row-major `frames x cols` matrix.
pub type FrameMatrix = Vec<Vec<f64>>;

/// Power spectrogram, `frames x (fft_size/2 + 1)`, centered frames with zero padding.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub power: FrameMatrix,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_length: usize,
}

impl Spectrogram {
    pub fn compute(segment: &AudioSegment, cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        if segment.samples.len() < cfg.fft_size {
            return Err(Error::InsufficientData(format!(
                "segment has {} samples, need at least {}",
                segment.samples.len(),
                cfg.fft_size
            )));
        }
        let n_fft = cfg.fft_size;
        let pad = n_fft / 2;
        let n = segment.samples.len();
        let frames = 1 + n / cfg.hop_length;
        let window = hann_periodic(n_fft);
        let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
        let bins = n_fft / 2 + 1;

        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = Vec::with_capacity(frames);
        for f in 0..frames {
            let start = (f * cfg.hop_length) as isize - pad as isize;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let s = if idx >= 0 && (idx as usize) < n {
                    f64::from(segment.samples[idx as usize])
                } else {
                    0.0
                };
                *slot = Complex::new(s * window[j], 0.0);
            }
            fft.process(&mut buf);
            power.push(buf[..bins].iter().map(|c| c.norm_sqr()).collect());
        }
        Ok(Self {
            power,
            sample_rate: segment.sample_rate,
            fft_size: n_fft,
            hop_length: cfg.hop_length,
        })
    }

    pub fn frames(&self) -> usize {
        self.power.len()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.sample_rate) / self.fft_size as f64
    }
}

pub(crate) fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK-style triangular filters spanning 0 Hz to Nyquist, `bands x bins`.
pub fn mel_filterbank(sample_rate: u32, fft_size: usize, bands: usize) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let top = hz_to_mel(f64::from(sample_rate) / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, centre, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * f64::from(sample_rate) / fft_size as f64;
                    let rise = (f - lo) / (centre - lo);
                    let fall = (hi - f) / (hi - centre);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn mel_energies(spec: &Spectrogram, bands: usize) -> FrameMatrix {
    let fb = mel_filterbank(spec.sample_rate, spec.fft_size, bands);
    spec.power
        .iter()
        .map(|frame| {
            fb.iter()
                .map(|filter| filter.iter().zip(frame).map(|(w, p)| w * p).sum())
                .collect()
        })
        .collect()
}

fn log_floor(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Orthonormal DCT-II, keeping the first `keep` coefficients.
pub fn dct_ortho(input: &[f64], keep: usize) -> Vec<f64> {
    let m = input.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * input
                    .iter()
                    .enumerate()
                    .map(|(n, x)| {
                        x * (std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m)).cos()
                    })
                    .sum::<f64>()
        })
        .collect()
}

pub fn mfcc_from_spectrogram(spec: &Spectrogram, cfg: &FeatureConfig) -> FrameMatrix {
    mel_energies(spec, cfg.mel_bands)
        .iter()
        .map(|bands| {
            let logs: Vec<f64> = bands.iter().copied().map(log_floor).collect();
            dct_ortho(&logs, cfg.mfcc_count)
        })
        .collect()
}

/// `[frames x mfcc_count]` cepstral coefficients.
pub fn mfcc(segment: &AudioSegment, cfg: &FeatureConfig) -> Result<FrameMatrix> {
    let spec = Spectrogram::compute(segment, cfg)?;
    Ok(mfcc_from_spectrogram(&spec, cfg))
}

/// Pitch class (0 = C, 9 = A) of a frequency, A4 = 440 Hz.
/// Returns `None` outside MIDI notes 21..=108.
pub fn pitch_class(freq: f64) -> Option<usize> {
    if freq <= 0.0 {
        return None;
    }
    let midi = (69.0 + 12.0 * (freq / 440.0).log2()).round();
    if !(21.0..=108.0).contains(&midi) {
        return None;
    }
    Some((midi as i64).rem_euclid(12) as usize)
}

fn chroma_energy(spec: &Spectrogram) -> FrameMatrix {
    let classes: Vec<Option<usize>> = (0..spec.fft_size / 2 + 1)
        .map(|k| pitch_class(spec.bin_frequency(k)))
        .collect();
    spec.power
        .iter()
        .map(|frame| {
            let mut chroma = vec![0.0; 12];
            for (p, class) in frame.iter().zip(&classes) {
                if let Some(c) = class {
                    chroma[*c] += p;
                }
            }
            chroma
        })
        .collect()
}

fn quantize_cens(x: f64) -> f64 {
    CENS_STEPS
        .iter()
        .find(|(upper, _)| x < *upper)
        .map_or(1.0, |(_, v)| *v)
}

/// Symmetric Hann window of `len` points with the zero end-points dropped,
/// normalized to unit sum.
fn smoothing_window(len: usize) -> Vec<f64> {
    let full = len + 2;
    let w: Vec<f64> = (1..=len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (full - 1) as f64).cos())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

pub fn cens_from_spectrogram(spec: &Spectrogram, cfg: &FeatureConfig) -> FrameMatrix {
    let quantized: FrameMatrix = chroma_energy(spec)
        .into_iter()
        .map(|frame| {
            let total: f64 = frame.iter().sum();
            if total <= 0.0 {
                return vec![0.0; 12];
            }
            frame.iter().map(|v| quantize_cens(v / total)).collect()
        })
        .collect();

    let frames = quantized.len();
    let win = smoothing_window(cfg.cens_smoothing_window);
    let half = (win.len() / 2) as isize;
    let smoothed: FrameMatrix = (0..frames)
        .step_by(cfg.cens_downsample)
        .map(|t| {
            let mut out = vec![0.0; 12];
            for (j, w) in win.iter().enumerate() {
                let src = t as isize + half - j as isize;
                if src >= 0 && (src as usize) < frames {
                    for (o, q) in out.iter_mut().zip(&quantized[src as usize]) {
                        *o += w * q;
                    }
                }
            }
            out
        })
        .collect();

    smoothed
        .into_iter()
        .map(|frame| {
            let norm = frame.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= f64::EPSILON {
                vec![0.0; 12]
            } else {
                frame.into_iter().map(|v| v / norm).collect()
            }
        })
        .collect()
}

/// `[ceil(frames / cens_downsample) x 12]` chroma energy normalized statistics.
pub fn cens(segment: &AudioSegment, cfg: &FeatureConfig) -> Result<FrameMatrix> {
    let spec = Spectrogram::compute(segment, cfg)?;
    Ok(cens_from_spectrogram(&spec, cfg))
}

/// Positive spectral flux of the log-mel spectrogram, averaged over bands.
pub fn onset_envelope(spec: &Spectrogram, cfg: &FeatureConfig) -> Vec<f64> {
    let log_mel: FrameMatrix = mel_energies(spec, cfg.mel_bands)
        .into_iter()
        .map(|f| f.into_iter().map(log_floor).collect())
        .collect();
    let mut env = vec![0.0; log_mel.len()];
    for t in 1..log_mel.len() {
        let flux: f64 = log_mel[t]
            .iter()
            .zip(&log_mel[t - 1])
            .map(|(cur, prev)| (cur - prev).max(0.0))
            .sum();
        env[t] = flux / cfg.mel_bands as f64;
    }
    env
}

/// Local autocorrelation of `envelope` over windows of `win` frames centered
/// on each frame, normalized by the lag-0 value.
pub fn local_autocorrelation(envelope: &[f64], win: usize) -> FrameMatrix {
    let fft_len = (2 * win).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let half = (win / 2) as isize;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];

    envelope
        .iter()
        .enumerate()
        .map(|(t, _)| {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let mut any = false;
            for (i, slot) in buf.iter_mut().take(win).enumerate() {
                let idx = t as isize - half + i as isize;
                if idx >= 0 && (idx as usize) < envelope.len() {
                    let v = envelope[idx as usize];
                    any |= v != 0.0;
                    *slot = Complex::new(v, 0.0);
                }
            }
            if !any {
                return vec![0.0; win];
            }
            fwd.process(&mut buf);
            buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
            inv.process(&mut buf);
            let scale = fft_len as f64;
            let lag0 = buf[0].re / scale;
            let norm = if lag0 > 0.0 { lag0 } else { 1.0 };
            (0..win).map(|lag| buf[lag].re / scale / norm).collect()
        })
        .collect()
}

pub fn tempogram_from_spectrogram(spec: &Spectrogram, cfg: &FeatureConfig) -> FrameMatrix {
    local_autocorrelation(&onset_envelope(spec, cfg), cfg.tempogram_window)
}

/// `[frames x tempogram_window]` autocorrelation tempogram.
pub fn tempogram(segment: &AudioSegment, cfg: &FeatureConfig) -> Result<FrameMatrix> {
    let spec = Spectrogram::compute(segment, cfg)?;
    Ok(tempogram_from_spectrogram(&spec, cfg))
}

/// Number of pooled windows for `n` samples: full windows, plus one zero-padded
/// trailing window when the remainder covers at least half a window.
pub fn window_count(n: usize, window_samples: usize) -> usize {
    let full = n / window_samples;
    let rem = n % window_samples;
    full + usize::from(rem > 0 && 2 * rem >= window_samples)
}

/// Mean-pools MFCC, CENS and tempogram frames into non-overlapping windows and
/// concatenates them as `[mfcc | cens | tempogram]`.
pub fn extract_feature_sequence(
    segment: &AudioSegment,
    cfg: &FeatureConfig,
    song_id: &str,
) -> Result<FeatureSequence> {
    cfg.validate()?;
    let ws = cfg.window_samples();
    if segment.samples.len() < ws {
        return Err(Error::InsufficientData(format!(
            "segment of {:.3} s is shorter than one {} ms window",
            segment.duration_secs(),
            cfg.window_ms
        )));
    }
    let n_windows = window_count(segment.samples.len(), ws);
    let mut padded = segment.samples.clone();
    padded.resize(n_windows * ws, 0.0);
    let padded = AudioSegment::new(padded, segment.sample_rate)?;

    let spec = Spectrogram::compute(&padded, cfg)?;
    let mfcc = mfcc_from_spectrogram(&spec, cfg);
    let cens = cens_from_spectrogram(&spec, cfg);
    let tempo = tempogram_from_spectrogram(&spec, cfg);

    let hop = cfg.hop_length;
    let mfcc_pooled = pool(&mfcc, hop, ws, n_windows, cfg.mfcc_count);
    let cens_pooled = pool(&cens, hop * cfg.cens_downsample, ws, n_windows, cfg.chroma_bins);
    let tempo_pooled = pool(&tempo, hop, ws, n_windows, cfg.tempogram_window);

    let windows = (0..n_windows)
        .map(|w| {
            let mut v = Vec::with_capacity(cfg.feature_dim());
            v.extend_from_slice(&mfcc_pooled[w]);
            v.extend_from_slice(&cens_pooled[w]);
            v.extend_from_slice(&tempo_pooled[w]);
            v
        })
        .collect();
    Ok(FeatureSequence {
        song_id: song_id.to_string(),
        window_ms: cfg.window_ms,
        windows,
    })
}

/// Averages frames whose centre (`index * frame_step` samples) falls in each window.
fn pool(
    frames: &FrameMatrix,
    frame_step: usize,
    window_samples: usize,
    n_windows: usize,
    width: usize,
) -> FrameMatrix {
    let mut sums = vec![vec![0.0; width]; n_windows];
    let mut counts = vec![0usize; n_windows];
    for (i, frame) in frames.iter().enumerate() {
        let w = i * frame_step / window_samples;
        if w >= n_windows {
            continue;
        }
        counts[w] += 1;
        for (s, v) in sums[w].iter_mut().zip(frame) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}
