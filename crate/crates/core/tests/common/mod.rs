//! Fixture builders shared by the integration test targets.
#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::Path;

use synesthete::audio::{extract_feature_sequence, write_wav_i16, FeatureConfig};
use synesthete::estimators::{train_mlp_regressor, Architecture, TrainingConfig};
use synesthete::generator::{sample_generator_space, SyntheticBackend, SyntheticBackendSpec};
use synesthete::pipeline::Bundle;
use synesthete::stylizer::{build_style_palette, SentimentThresholds, StyleSource, DEFAULT_BLEND};
use synesthete::translator::{train_translator, TranslatorConfig};
use synesthete::view::build_attribute_view;
use synesthete::{AudioSegment, GeneratorVector, ImageHandle};

pub const SR: u32 = 22050;

/// A song of piecewise tones: each 2.5 s section has its own pitch and level.
pub fn tone_song(seconds: f64) -> AudioSegment {
    let n = (seconds * SR as f64).round() as usize;
    let pitches = [220.0, 330.0, 440.0, 262.0, 392.0, 523.0, 294.0];
    let levels = [0.2, 0.5, 0.8, 0.35, 0.6, 0.25, 0.7];
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let s = (t / 2.5) as usize;
            let f = pitches[s % pitches.len()];
            let a = levels[(s * 3) % levels.len()];
            (a * (TAU * f * t).sin() + 0.1 * a * (TAU * 2.0 * f * t).sin()) as f32
        })
        .collect();
    AudioSegment::new(samples, SR).unwrap()
}

pub fn write_song(path: &Path, seconds: f64) {
    let seg = tone_song(seconds);
    write_wav_i16(path, &[seg.samples], SR).unwrap();
}

pub fn fixture_backend() -> SyntheticBackend {
    SyntheticBackend::new(SyntheticBackendSpec::new(100, 16, 21)).unwrap()
}

/// Trains every artifact of a story on small synthetic data.
pub fn build_bundle(backend: &SyntheticBackend) -> Bundle {
    let cfg = FeatureConfig::default();
    let song = tone_song(10.0);
    let features = extract_feature_sequence(&song, &cfg, "train").unwrap();
    let targets: Vec<Vec<f64>> = (0..features.len())
        .map(|i| {
            let s = i as f64 / features.len() as f64;
            vec![(TAU * s).sin(), (TAU * s).cos()]
        })
        .collect();
    let train_cfg = TrainingConfig {
        schedule: vec![(5, 1e-3)],
        batch_size: 4,
        seed: 1,
        ..Default::default()
    };
    let estimator = train_mlp_regressor(&features.windows, &targets, &Architecture::audio_default(cfg.feature_dim()), &train_cfg)
        .unwrap()
        .model;

    let pairs = sample_generator_space(backend, backend, 5000, 2).unwrap();
    let view = build_attribute_view(&pairs, 20, 16, 3, None).unwrap();
    let tcfg = TranslatorConfig {
        seed: 4,
        ..Default::default()
    };
    let translator = train_translator(&view, 100, &tcfg).unwrap().model;

    let sources: Vec<StyleSource> = [3usize, 40, 77]
        .iter()
        .map(|&k| StyleSource {
            path: format!("styles/{k}.img"),
            image: ImageHandle::new(backend.encode(&GeneratorVector::new(k, vec![0.0; 16])), 1, 1, 1).unwrap(),
        })
        .collect();
    let palette = build_style_palette(&sources, backend, SentimentThresholds::default(), DEFAULT_BLEND).unwrap();

    Bundle {
        estimator,
        translator,
        view,
        palette: Some(palette),
        alignment: None,
    }
}
