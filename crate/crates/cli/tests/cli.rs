//! Drives the binary through a full train-then-story workflow.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::{Command, Output};

use synesthete::audio::write_wav_i16;
use synesthete::pipeline::FrameManifest;

const SYNTH: [&str; 4] = ["--synthetic-classes", "40", "--synthetic-latent", "8"];

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synesthete"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    bin(dir, args).status.code().expect("exited normally")
}

fn tone(path: &Path, seconds: f64, freq: f64) {
    let sr = 22050;
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let level = 0.2 + 0.6 * (t / seconds);
            (level * (TAU * freq * t).sin()) as f32
        })
        .collect();
    write_wav_i16(path, &[samples], sr).unwrap();
}

fn with_synth<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SYNTH).collect()
}

#[test]
fn full_workflow_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tone(&dir.join("a.wav"), 6.0, 220.0);
    tone(&dir.join("b.wav"), 30.0, 440.0);
    std::fs::write(dir.join("annotations.csv"), "id,valence,arousal\na,0.5,-0.2\nb,-0.4,0.6\n").unwrap();
    std::fs::write(
        dir.join("run.toml"),
        "[train_audio]\nschedule = [[3, 1e-3]]\nbatch_size = 4\n\n[translator]\nepochs = 40\n\n[story]\nseed = 9\n",
    )
    .unwrap();

    std::fs::create_dir(dir.join("feats")).unwrap();
    let out = ok(dir, &["features", "a.wav", "-o", "feats/a.dsft"]);
    assert!(out.starts_with("12 windows x 436 features"), "{out}");
    ok(dir, &["features", "b.wav", "-o", "feats/b.dsft"]);
    assert!(ok(dir, &["inspect", "feats/b.dsft"]).contains("60 rows x 436 cols"));

    ok(dir, &["--config", "run.toml", "train-audio", "--annotations", "annotations.csv", "--features-dir", "feats"]);
    assert!(ok(dir, &["inspect", "bundle/estimator.json"]).contains("layers [256, 2]"));
    assert!(ok(dir, &["inspect", "bundle/alignment.json"]).contains("DatasetLevel"));

    ok(dir, &with_synth(&["sample", "-n", "2000", "--seed", "1"]));
    assert!(ok(dir, &["inspect", "pairs.jsonl"]).contains("2000 pairs, 40 distinct classes"));
    let hist = ok(dir, &["instability", "--pairs", "pairs.jsonl", "--nk", "5"]);
    assert!(hist.contains("over 2000 samples"), "{hist}");

    ok(dir, &["build-view", "--pairs", "pairs.jsonl", "--nk", "5", "--ns", "4", "--seed", "2"]);
    let view = ok(dir, &["inspect", "bundle/view.json"]);
    assert!(view.contains("N_K 5, N_S 4, seed 2"), "{view}");

    ok(dir, &with_synth(&["--config", "run.toml", "train-translator"]));
    assert!(ok(dir, &["inspect", "bundle/translator.json"]).contains("\"epochs\":40"));
    ok(dir, &with_synth(&["palette", "--from-classes", "1,20,33"]));
    assert!(ok(dir, &["inspect", "bundle/palette.json"]).contains("3 styles"));

    let story = ok(dir, &with_synth(&["--config", "run.toml", "story", "b.wav", "-o", "run1"]));
    assert!(story.contains("6 frames"), "{story}");
    ok(dir, &with_synth(&["--config", "run.toml", "story", "b.wav", "-o", "run2"]));
    let a = std::fs::read(dir.join("run1/manifest.json")).unwrap();
    let b = std::fs::read(dir.join("run2/manifest.json")).unwrap();
    assert_eq!(a, b);
    let m = FrameManifest::load(dir.join("run1/manifest.json")).unwrap();
    assert_eq!((m.frames.len(), m.seed), (6, 9));
    assert!(ok(dir, &["inspect", "run1/manifest.json"]).contains("6 frames"));

    // The global seed overrides the config file.
    ok(dir, &with_synth(&["--config", "run.toml", "--seed", "10", "story", "b.wav", "-o", "run3"]));
    assert_eq!(FrameManifest::load(dir.join("run3/manifest.json")).unwrap().seed, 10);

    // Dataset-level alignment uses the stored statistics.
    ok(dir, &with_synth(&["story", "a.wav", "--dataset-alignment", "--aggregation", "median", "-o", "run4"]));
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.toml"), "[story]\ninterval_seconds = 0.3\n").unwrap();
    std::fs::write(dir.join("typo.toml"), "[stroy]\n").unwrap();

    assert_eq!(code(dir, &["--config", "bad.toml", "instability", "--pairs", "x"]), 2);
    assert_eq!(code(dir, &["--config", "typo.toml", "instability", "--pairs", "x"]), 2);
    assert_eq!(code(dir, &["--config", "missing.toml", "sample"]), 2);
    assert_eq!(code(dir, &["sample", "--backend", "gan"]), 2);
    assert_eq!(code(dir, &["sample", "-n", "5", "--synthetic-classes", "0"]), 2);
    assert_eq!(code(dir, &["palette"]), 2);

    assert_eq!(code(dir, &["sample", "-n", "5", "--backend", "bridge:exit 0"]), 3);
    assert_eq!(code(dir, &["sample", "-n", "5", "--backend", "bridge:echo not-json"]), 3);

    assert_eq!(code(dir, &["instability", "--pairs", "missing.jsonl"]), 4);
    assert_eq!(code(dir, &["story", "missing.wav", "--bundle", "nowhere"]), 4);
    std::fs::write(dir.join("junk.json"), "{\"hello\": 1}").unwrap();
    assert_eq!(code(dir, &["inspect", "junk.json"]), 4);

    let err = bin(dir, &["story", "missing.wav", "--bundle", "nowhere"]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("load_bundle"));
}

#[test]
fn story_through_a_mock_bridge_writes_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/mock_bridge.py");
    let backend = format!("bridge:python3 {script} --classes 12 --latent 4 --image-size 8 --stylize");
    tone(&dir.join("s.wav"), 10.0, 330.0);
    std::fs::write(dir.join("annotations.csv"), "id,valence,arousal\ns,0.1,0.2\n").unwrap();
    std::fs::write(dir.join("t.toml"), "[train_audio]\nschedule = [[2, 1e-3]]\nbatch_size = 4\n[translator]\nepochs = 20\n").unwrap();

    std::fs::create_dir(dir.join("f")).unwrap();
    ok(dir, &["features", "s.wav", "-o", "f/s.dsft"]);
    ok(dir, &["--config", "t.toml", "train-audio", "--annotations", "annotations.csv", "--features-dir", "f"]);
    ok(dir, &["--backend", &backend, "sample", "-n", "300"]);
    ok(dir, &["build-view", "--pairs", "pairs.jsonl", "--nk", "3", "--ns", "2"]);
    ok(dir, &["--backend", &backend, "--config", "t.toml", "train-translator"]);
    ok(dir, &["--backend", &backend, "palette", "--from-classes", "0,5"]);
    let story = ok(dir, &["--backend", &backend, "story", "s.wav", "-o", "out"]);
    assert!(story.contains("2 frames"), "{story}");
    let m = FrameManifest::load(dir.join("out/manifest.json")).unwrap();
    for f in &m.frames {
        let path = f.image.as_ref().expect("bridge frames have images");
        assert!(Path::new(path).exists() || dir.join(path).exists(), "{path}");
    }
}
