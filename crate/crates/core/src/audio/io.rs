use std::path::Path;

use crate::error::{Error, Result};
use crate::types::AudioSegment;

/// How the decoded signal was brought to the requested rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    None,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioInfo {
    pub source_rate: u32,
    pub channels: u16,
    pub bits_per_sample: u16,
    pub resampling: Resampling,
}

/// Decodes a PCM WAV file into a mono segment at `target_rate`.
pub fn load_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioSegment> {
    load_audio_with_info(path, target_rate).map(|(seg, _)| seg)
}

pub fn load_audio_with_info(
    path: impl AsRef<Path>,
    target_rate: u32,
) -> Result<(AudioSegment, AudioInfo)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("wav declares zero channels".into()));
    }

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
    };
    if interleaved.is_empty() {
        return Err(Error::Format(format!("{} contains no samples", path.display())));
    }

    let mono = mixdown(&interleaved, channels);
    let (samples, resampling) = if spec.sample_rate == target_rate {
        (mono, Resampling::None)
    } else {
        (
            resample_linear(&mono, spec.sample_rate, target_rate),
            Resampling::Linear,
        )
    };
    let info = AudioInfo {
        source_rate: spec.sample_rate,
        channels: spec.channels,
        bits_per_sample: spec.bits_per_sample,
        resampling,
    };
    Ok((AudioSegment::new(samples, target_rate)?, info))
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

fn mixdown(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Linear-interpolation resampler. Output length is `round(n * to / from)`.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let n = samples.len();
    let out_len = ((n as u64 * u64::from(to) + u64::from(from) / 2) / u64::from(from)).max(1) as usize;
    let step = f64::from(from) / f64::from(to);
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let left = pos.floor() as usize;
            if left + 1 >= n {
                return samples[n - 1];
            }
            let frac = (pos - left as f64) as f32;
            samples[left] * (1.0 - frac) + samples[left + 1] * frac
        })
        .collect()
}

/// Writes 16-bit PCM. Used by tests and the CLI to produce fixtures.
pub fn write_wav_i16(
    path: impl AsRef<Path>,
    channels: &[Vec<f32>],
    sample_rate: u32,
) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let len = channels.first().map_or(0, Vec::len);
    for i in 0..len {
        for ch in channels {
            let v = (ch[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)?;
    Ok(())
}
