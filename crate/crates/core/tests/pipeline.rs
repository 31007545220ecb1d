mod common;

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synesthete::audio::{extract_feature_sequence, load_audio};
use synesthete::estimators::{compute_zscore_stats, predict_attributes, zscore_align, ZScoreScope};
use synesthete::generator::{GeneratorBackend, SyntheticBackend};
use synesthete::pipeline::{
    exit_code, generate_story, interval_attributes, load_bundle, save_bundle, FrameManifest, StoryConfig,
    MANIFEST_FILE, TRANSLATOR_FILE, VIEW_FILE,
};
use synesthete::translator::translate;
use synesthete::{Error, GeneratorVector, ImageHandle};

use common::{build_bundle, fixture_backend, write_song};

fn story_config(out: &std::path::Path) -> StoryConfig {
    StoryConfig {
        seed: 11,
        output_dir: Some(out.to_path_buf()),
        ..Default::default()
    }
}

#[test]
fn thirty_second_song_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let song = dir.path().join("song.wav");
    write_song(&song, 30.0);
    let backend = fixture_backend();
    let bundle = build_bundle(&backend);
    let cfg = story_config(&dir.path().join("run1"));

    let m1 = generate_story(&song, &cfg, &bundle, &backend, None).unwrap();
    assert_eq!(m1.frames.len(), 6);
    assert!(m1.complete);
    for (i, f) in m1.frames.iter().enumerate() {
        assert_eq!(f.index, i);
        assert_eq!(f.start_time, 5.0 * i as f64);
        assert!(bundle.view.retained_categories.contains(&f.generator.class_id));
        assert!(f.image.is_none());
        assert!(f.style_id.is_some());
    }

    // Same inputs, separate run: byte-identical manifest files.
    let cfg2 = story_config(&dir.path().join("run2"));
    generate_story(&song, &cfg2, &bundle, &backend, None).unwrap();
    let a = std::fs::read(dir.path().join("run1").join(MANIFEST_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("run2").join(MANIFEST_FILE)).unwrap();
    assert_eq!(a, b);
    assert_eq!(FrameManifest::load(dir.path().join("run1").join(MANIFEST_FILE)).unwrap().frames.len(), 6);

    // Recompute the attribute and generator chain by hand.
    let seg = load_audio(&song, cfg.features.sample_rate).unwrap();
    let feats = extract_feature_sequence(&seg, &cfg.features, "x").unwrap();
    let raw = predict_attributes(&bundle.estimator, &feats).unwrap();
    let stats = compute_zscore_stats(&raw, ZScoreScope::SongLevel).unwrap();
    let aligned = zscore_align(&raw, &stats).unwrap();
    let intervals = interval_attributes(&aligned, 10, cfg.aggregation).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (f, attr) in m1.frames.iter().zip(&intervals) {
        for (x, y) in f.attribute.0.iter().zip(&attr.0) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        let gv = translate(&bundle.translator, attr, cfg.noise_sigma, &mut rng).unwrap();
        assert_eq!(gv.class_id, f.generator.class_id);
    }
}

#[test]
fn frame_count_follows_song_length() {
    let dir = tempfile::tempdir().unwrap();
    let backend = fixture_backend();
    let bundle = build_bundle(&backend);
    for (secs, frames) in [(7.0, 2), (12.5, 3), (5.0, 1)] {
        let song = dir.path().join(format!("s{secs}.wav"));
        write_song(&song, secs);
        let cfg = StoryConfig::default();
        let m = generate_story(&song, &cfg, &bundle, &backend, None).unwrap();
        assert_eq!(m.frames.len(), frames, "{secs} s");
    }
}

#[test]
fn bundle_roundtrip_regenerates_the_same_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let song = dir.path().join("song.wav");
    write_song(&song, 12.0);
    let backend = fixture_backend();
    let bundle = build_bundle(&backend);
    save_bundle(dir.path().join("bundle"), &bundle).unwrap();
    let loaded = load_bundle(dir.path().join("bundle")).unwrap();
    assert_eq!(loaded.view.retained_categories, bundle.view.retained_categories);

    let cfg = StoryConfig {
        noise_sigma: 0.0,
        ..Default::default()
    };
    let a = generate_story(&song, &cfg, &bundle, &backend, None).unwrap();
    let b = generate_story(&song, &cfg, &loaded, &backend, None).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn bundle_load_errors_name_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let backend = fixture_backend();
    save_bundle(dir.path(), &build_bundle(&backend)).unwrap();

    std::fs::remove_file(dir.path().join(VIEW_FILE)).unwrap();
    match load_bundle(dir.path()).unwrap_err() {
        Error::Load { artifact, .. } => assert_eq!(artifact, "attribute view"),
        e => panic!("unexpected {e}"),
    }

    let path = dir.path().join(TRANSLATOR_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    let cut = text.find("\"heads\"").unwrap();
    text.insert_str(cut, "@@");
    std::fs::write(&path, &text).unwrap();
    match synesthete::translator::TranslationModel::load(&path).unwrap_err() {
        Error::Parse { artifact, offset, .. } => {
            assert_eq!(artifact, "translator");
            assert_eq!(offset, cut);
        }
        e => panic!("unexpected {e}"),
    }

    let text = std::fs::read_to_string(dir.path().join("estimator.json")).unwrap();
    std::fs::write(dir.path().join("estimator.json"), text.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
    assert!(matches!(
        synesthete::estimators::MlpRegressor::load(dir.path().join("estimator.json")),
        Err(Error::Version { found: 9, .. })
    ));
}

/// Synthetic backend that fails from a given frame on.
struct FailingBackend {
    inner: SyntheticBackend,
    fail_from: usize,
    calls: Cell<usize>,
}

impl GeneratorBackend for FailingBackend {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn generate(&self, gv: &GeneratorVector) -> synesthete::Result<ImageHandle> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        if n >= self.fail_from {
            return Err(Error::Backend("model crashed".into()));
        }
        self.inner.generate(gv)
    }
}

#[test]
fn stage_failure_keeps_the_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let song = dir.path().join("song.wav");
    write_song(&song, 30.0);
    let inner = fixture_backend();
    let bundle = build_bundle(&inner);
    let backend = FailingBackend {
        inner,
        fail_from: 4,
        calls: Cell::new(0),
    };
    let out = dir.path().join("out");
    let err = generate_story(&song, &story_config(&out), &bundle, &backend, None).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "generate", .. }), "{err}");
    assert_eq!(exit_code(&err), 3);
    let partial = FrameManifest::load(out.join(MANIFEST_FILE)).unwrap();
    assert!(!partial.complete);
    assert_eq!(partial.frames.len(), 4);

    let missing = generate_story(dir.path().join("nope.wav"), &StoryConfig::default(), &bundle, &backend, None)
        .unwrap_err();
    assert!(matches!(missing, Error::Stage { stage: "load_audio", .. }));
    assert_eq!(exit_code(&missing), 4);
}
