//! `synesthete`: turn a song into a sequence of generator frames.
//!
//! Artifacts default to `bundle/<name>.json`, so running `train-audio`,
//! `build-view`, `train-translator` and `palette` in turn fills a bundle
//! directory that `story` can read.

mod backend;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use synesthete::audio::{extract_feature_sequence, featfile, load_audio, FeatureConfig};
use synesthete::estimators::{
    compute_zscore_stats, load_annotated_dataset, train_mlp_regressor, Architecture, MlpRegressor,
    ZScoreScope,
};
use synesthete::generator::{load_pairs, sample_generator_space, save_pairs, SyntheticBackendSpec};
use synesthete::pipeline::{
    exit_code, generate_story, load_bundle, save_alignment, Aggregation, FrameManifest, ImageSink, StoryConfig,
    ALIGNMENT_FILE, ESTIMATOR_FILE, PALETTE_FILE, TRANSLATOR_FILE, VIEW_FILE,
};
use synesthete::stylizer::{build_style_palette, SelectionMode, SentimentThresholds, StylePalette, StyleSource, DEFAULT_BLEND};
use synesthete::translator::{train_translator, TranslationModel};
use synesthete::view::{build_attribute_view, instability_histogram, median, AttributeView};
use synesthete::{Error, GeneratorVector, ImageHandle, Result};

use backend::{Backend, BackendArg};
use config::CliConfig;

#[derive(Parser)]
#[command(name = "synesthete", version, about = "Audio to class-conditional generator translation")]
struct Cli {
    /// Seed for every stochastic step (overrides seeds in the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML file with optional [synthetic], [train_audio], [translator] and [story] sections
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// `synthetic` or `bridge:<command>`
    #[arg(long, global = true, default_value = "synthetic")]
    backend: BackendArg,

    #[command(flatten)]
    synthetic: SyntheticArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Classes of the synthetic backend [default: 1000]
    #[arg(long, global = true)]
    synthetic_classes: Option<usize>,

    /// Latent dimension of the synthetic backend [default: 128]
    #[arg(long, global = true)]
    synthetic_latent: Option<usize>,

    /// Seed of the synthetic backend's class table [default: 0]
    #[arg(long, global = true)]
    synthetic_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract 500 ms feature windows from a WAV file into a DSFT matrix
    Features {
        audio: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the audio attribute regressor from `id,valence,arousal` annotations
    TrainAudio {
        #[arg(long)]
        annotations: PathBuf,
        /// Directory of `<id>.dsft` feature files
        #[arg(long)]
        features_dir: PathBuf,
        #[arg(short, long, default_value = "bundle/estimator.json")]
        out: PathBuf,
        /// Dataset-level alignment statistics from the training predictions
        #[arg(long, default_value = "bundle/alignment.json")]
        alignment_out: PathBuf,
    },
    /// Sample generator vectors and record their estimated attributes
    Sample {
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(short, long, default_value = "pairs.jsonl")]
        out: PathBuf,
    },
    /// Build the attribute view from a sample corpus
    BuildView {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 20)]
        nk: usize,
        #[arg(long, default_value_t = 16)]
        ns: usize,
        /// Use these categories instead of clustering, e.g. `1,5,9`
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
        #[arg(short, long, default_value = "bundle/view.json")]
        out: PathBuf,
    },
    /// Train the attribute-to-generator translator on a view
    TrainTranslator {
        #[arg(long, default_value = "bundle/view.json")]
        view: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(short, long, default_value = "bundle/translator.json")]
        out: PathBuf,
    },
    /// Estimate the attributes of style images
    Palette {
        /// Image files passed to the backend's estimator
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Render these classes with a zero latent and use the renders as styles
        #[arg(long, value_delimiter = ',')]
        from_classes: Vec<usize>,
        /// Width and height recorded for image files
        #[arg(long, default_value_t = 512)]
        image_size: u32,
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        negative_below: f64,
        #[arg(long, default_value_t = 0.5)]
        positive_above: f64,
        #[arg(long, default_value_t = DEFAULT_BLEND)]
        blend: f64,
        #[arg(short, long, default_value = "bundle/palette.json")]
        out: PathBuf,
    },
    /// Turn a song into a frame manifest (and frames, with a pixel backend)
    Story {
        song: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Latent noise scale
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
        /// Z-score with the stored training statistics instead of per song
        #[arg(long)]
        dataset_alignment: bool,
        /// Restrict style candidates to the attribute's sentiment band
        #[arg(long)]
        band_gated: bool,
    },
    /// Summarize any artifact this tool writes
    Inspect { path: PathBuf },
    /// Distinct classes per attribute cluster of a sample corpus
    Instability {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 20)]
        nk: usize,
    },
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    match s {
        "mean" => Ok(Aggregation::Mean),
        "median" => Ok(Aggregation::Median),
        _ => Err(format!("expected `mean` or `median`, got `{s}`")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let spec = SyntheticBackendSpec::new(
        cli.synthetic.synthetic_classes.or(cfg.synthetic.num_classes).unwrap_or(1000),
        cli.synthetic.synthetic_latent.or(cfg.synthetic.latent_dim).unwrap_or(128),
        cli.synthetic.synthetic_seed.or(cfg.synthetic.seed).unwrap_or(0),
    );
    let open = || {
        let b = Backend::open(&cli.backend, spec)?;
        log::info!("backend: {}", b.describe());
        Ok::<_, Error>(b)
    };
    let seed = |fallback: u64| cli.seed.unwrap_or(fallback);

    match cli.command {
        Command::Features { audio, out } => {
            let fc = cfg.story.map(|s| s.features).unwrap_or_default();
            let out = out.unwrap_or_else(|| audio.with_extension("dsft"));
            features(&audio, &out, &fc)
        }
        Command::TrainAudio {
            annotations,
            features_dir,
            out,
            alignment_out,
        } => {
            let mut tc = cfg.train_audio.unwrap_or_default();
            tc.seed = seed(tc.seed);
            let data = load_annotated_dataset(&annotations, &features_dir)?;
            let dim = data.features.first().map(Vec::len).ok_or_else(|| {
                Error::InsufficientData(format!("no feature windows listed in {}", annotations.display()))
            })?;
            let trained = train_mlp_regressor(&data.features, &data.targets, &Architecture::audio_default(dim), &tc)?;
            let preds: Vec<_> = trained.model.predict_rows(&data.features)?;
            let preds: Vec<_> = preds.into_iter().map(synesthete::AttributeVector).collect();
            let stats = compute_zscore_stats(&preds, ZScoreScope::DatasetLevel)?;
            create_parent(&out)?;
            trained.model.save(
                &out,
                json!({
                    "seed": tc.seed,
                    "schedule": tc.schedule,
                    "batch_size": tc.batch_size,
                    "windows": data.features.len(),
                    "final_loss": trained.loss_trace.last(),
                }),
            )?;
            create_parent(&alignment_out)?;
            save_alignment(&alignment_out, &stats)?;
            println!(
                "trained on {} windows; final loss {:.5}; wrote {} and {}",
                data.features.len(),
                trained.loss_trace.last().copied().unwrap_or(f64::NAN),
                out.display(),
                alignment_out.display()
            );
            Ok(())
        }
        Command::Sample { n, out } => {
            let backend = open()?;
            let n = n.unwrap_or(50 * backend.generator().num_classes());
            let pairs = sample_generator_space(backend.generator(), backend.estimator(), n, seed(0))?;
            create_parent(&out)?;
            save_pairs(&out, &pairs)?;
            println!("wrote {} pairs to {}", pairs.len(), out.display());
            Ok(())
        }
        Command::BuildView {
            pairs,
            nk,
            ns,
            classes,
            out,
        } => {
            let corpus = load_pairs(&pairs)?;
            let view = build_attribute_view(&corpus, nk, ns, seed(0), classes.as_deref())?;
            create_parent(&out)?;
            view.save(&out)?;
            println!(
                "{} categories, {} smoothed pairs from {} samples; wrote {}",
                view.retained_categories.len(),
                view.smoothed_pairs.len(),
                corpus.len(),
                out.display()
            );
            Ok(())
        }
        Command::TrainTranslator { view, epochs, lr, out } => {
            let backend = open()?;
            let view = AttributeView::load(&view)?;
            let mut tc = cfg.translator.unwrap_or_default();
            tc.seed = seed(tc.seed);
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.learning_rate = lr.unwrap_or(tc.learning_rate);
            let trained = train_translator(&view, backend.generator().num_classes(), &tc)?;
            create_parent(&out)?;
            trained.model.save(
                &out,
                json!({
                    "seed": tc.seed,
                    "epochs": tc.epochs,
                    "learning_rate": tc.learning_rate,
                    "latent_loss_weight": tc.latent_loss_weight,
                    "view_corpus_hash": view.provenance.corpus_hash,
                    "final_loss": trained.loss_trace.last(),
                }),
            )?;
            println!(
                "trained {} epochs; loss {:.4} -> {:.4}; wrote {}",
                tc.epochs,
                trained.loss_trace.first().copied().unwrap_or(f64::NAN),
                trained.loss_trace.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Palette {
            images,
            from_classes,
            image_size,
            negative_below,
            positive_above,
            blend,
            out,
        } => {
            let thresholds = SentimentThresholds::new(negative_below, positive_above).map_err(|e| Error::Config(e.to_string()))?;
            let backend = open()?;
            let sources = style_sources(&backend, &images, &from_classes, image_size)?;
            let palette = build_style_palette(&sources, backend.estimator(), thresholds, blend)?;
            create_parent(&out)?;
            palette.save(&out)?;
            for s in &palette.styles {
                println!("style {} {} -> {:?}", s.id, s.path, s.attributes.0);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Story {
            song,
            bundle,
            out,
            sigma,
            aggregation,
            dataset_alignment,
            band_gated,
        } => {
            let mut sc = cfg.story.unwrap_or_default();
            sc.seed = seed(sc.seed);
            if let Some(b) = bundle {
                sc.bundle = b;
            }
            if let Some(o) = out {
                sc.output_dir = Some(o);
            }
            sc.output_dir.get_or_insert_with(|| PathBuf::from("story"));
            sc.noise_sigma = sigma.unwrap_or(sc.noise_sigma);
            sc.aggregation = aggregation.unwrap_or(sc.aggregation);
            if dataset_alignment {
                sc.alignment = ZScoreScope::DatasetLevel;
            }
            if band_gated {
                sc.style_mode = SelectionMode::BandGated;
            }
            sc.validate()?;
            story(&song, &sc, &open()?)
        }
        Command::Inspect { path } => inspect(&path),
        Command::Instability { pairs, nk } => {
            let corpus = load_pairs(&pairs)?;
            let hist = instability_histogram(&corpus, nk, seed(0))?;
            println!("distinct classes per cluster: {hist:?}");
            println!(
                "median {} (min {}, max {}) over {} samples",
                median(&hist),
                hist.iter().min().unwrap_or(&0),
                hist.iter().max().unwrap_or(&0),
                corpus.len()
            );
            Ok(())
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(std::fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn features(audio: &Path, out: &Path, fc: &FeatureConfig) -> Result<()> {
    fc.validate().map_err(|e| Error::Config(e.to_string()))?;
    let seg = load_audio(audio, fc.sample_rate)?;
    let seq = extract_feature_sequence(&seg, fc, &audio.display().to_string())?;
    create_parent(out)?;
    featfile::save(out, &seq.windows)?;
    println!("{} windows x {} features -> {}", seq.len(), seq.dim(), out.display());
    Ok(())
}

fn style_sources(backend: &Backend, images: &[PathBuf], classes: &[usize], size: u32) -> Result<Vec<StyleSource>> {
    let mut out = Vec::new();
    for path in images {
        let payload = std::fs::read(path).map_err(|source| Error::Load {
            artifact: "style image".into(),
            path: path.clone(),
            source,
        })?;
        out.push(StyleSource {
            path: path.display().to_string(),
            image: ImageHandle::new(payload, size, size, 3)?,
        });
    }
    let gen = backend.generator();
    for &k in classes {
        let gv = GeneratorVector::new(k, vec![0.0; gen.latent_dim()]);
        gv.validate(gen.num_classes(), gen.latent_dim())?;
        out.push(StyleSource {
            path: format!("class:{k}"),
            image: gen.generate(&gv)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("palette needs --images or --from-classes".into()));
    }
    Ok(out)
}

fn story(song: &Path, sc: &StoryConfig, backend: &Backend) -> Result<()> {
    let bundle = load_bundle(&sc.bundle).map_err(|e| e.at_stage("load_bundle"))?;
    let out = sc.output_dir.clone().expect("output dir is set");
    let sink = backend.has_pixels().then(|| ImageSink {
        dir: out.join("frames"),
        stylizer: backend.stylizer(),
        blend: bundle.palette.as_ref().map_or(DEFAULT_BLEND, |p| p.blend),
    });
    let manifest = generate_story(song, sc, &bundle, backend.generator(), sink.as_ref())?;
    for f in &manifest.frames {
        println!(
            "{:>3} {:>7.1}s attr [{:+.3}, {:+.3}] {:<8} class {:>4} style {}",
            f.index,
            f.start_time,
            f.attribute.0[0],
            f.attribute.0[1],
            format!("{:?}", f.band).to_lowercase(),
            f.generator.class_id,
            f.style_id.map_or("-".to_string(), |s| s.to_string())
        );
    }
    println!("{} frames; manifest in {}", manifest.frames.len(), out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    if ext == "dsft" {
        let m = featfile::load(path)?;
        println!("feature matrix: {} rows x {} cols", m.len(), m.first().map_or(0, Vec::len));
        return Ok(());
    }
    if ext == "jsonl" {
        let pairs = load_pairs(path)?;
        let mut classes: Vec<usize> = pairs.iter().map(|p| p.generator.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        println!(
            "sample corpus: {} pairs, {} distinct classes, hash {}",
            pairs.len(),
            classes.len(),
            synesthete::generator::corpus_hash(&pairs)
        );
        return Ok(());
    }
    let bytes = std::fs::read(path).map_err(|source| Error::Load {
        artifact: "artifact".into(),
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_slice(&bytes)?;
    let has = |k: &str| value.get(k).is_some();
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if has("provenance") {
        let v = AttributeView::load(path)?;
        let p = &v.provenance;
        println!(
            "attribute view: {} categories {:?}, {} smoothed pairs; N_K {}, N_S {}, seed {}, corpus {} ({} samples)",
            v.retained_categories.len(),
            v.retained_categories,
            v.smoothed_pairs.len(),
            p.n_k,
            p.n_s,
            p.seed,
            p.corpus_hash,
            p.corpus_size
        );
    } else if has("heads") {
        let m = TranslationModel::load(path)?;
        let retained = m.retained.iter().filter(|&&r| r).count();
        println!("translator: {} classes ({retained} retained), meta {}", m.retained.len(), value["training_meta"]);
    } else if has("styles") {
        let p = StylePalette::load(path)?;
        println!(
            "style palette: {} styles, thresholds ({}, {}), blend {}",
            p.styles.len(),
            p.thresholds.negative_below,
            p.thresholds.positive_above,
            p.blend
        );
    } else if has("frames") {
        let m = FrameManifest::load(path)?;
        println!(
            "frame manifest: {} frames over {:.1} s of {}, seed {}, complete {}",
            m.frames.len(),
            m.duration_seconds,
            m.song,
            m.seed,
            m.complete
        );
    } else if has("stats") || name == ALIGNMENT_FILE {
        let s = synesthete::pipeline::load_alignment(path)?;
        println!("alignment ({:?}): mean {:?}, std {:?}", s.scope, s.mean, s.std);
    } else if has("arch") {
        let m = MlpRegressor::load(path)?;
        let a = m.architecture();
        let widths: Vec<usize> = a.layers.iter().map(|l| l.0).collect();
        println!("regressor: {} inputs -> layers {widths:?}, meta {}", a.input_dim, value["training_meta"]);
    } else {
        return Err(Error::Format(format!(
            "{} is not a known artifact (expected one of {ESTIMATOR_FILE}, {TRANSLATOR_FILE}, {VIEW_FILE}, {PALETTE_FILE}, a manifest, .dsft or .jsonl)",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_go_anywhere() {
        let cli = Cli::try_parse_from(["synesthete", "sample", "-n", "10", "--seed", "4", "--backend", "bridge:x"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.backend, BackendArg::Bridge("x".into()));
        assert!(matches!(cli.command, Command::Sample { n: Some(10), .. }));
    }

    #[test]
    fn build_view_takes_a_class_list() {
        let cli = Cli::try_parse_from(["synesthete", "build-view", "--pairs", "p.jsonl", "--classes", "1,5,9"]).unwrap();
        match cli.command {
            Command::BuildView { classes, nk, ns, .. } => {
                assert_eq!(classes, Some(vec![1, 5, 9]));
                assert_eq!((nk, ns), (20, 16));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn aggregation_flag() {
        assert_eq!(parse_aggregation("median").unwrap(), Aggregation::Median);
        assert!(parse_aggregation("max").is_err());
    }
}
