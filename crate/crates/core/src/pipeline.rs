//! Song-to-story orchestration: features, attribute estimation, alignment,
//! interval aggregation, translation, generation and style selection.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{extract_feature_sequence, load_audio, FeatureConfig};
use crate::error::{Error, Result};
use crate::estimators::{compute_zscore_stats, predict_attributes, zscore_align, MlpRegressor, ZScoreScope, ZScoreStats};
use crate::generator::GeneratorBackend;
use crate::persist;
use crate::stylizer::{select_style, sentiment_band, SelectionMode, SentimentBand, StyleBackend, StylePalette};
use crate::translator::{translate, TranslationModel};
use crate::types::{AttributeVector, AudioSegment, GeneratorVector, ImageHandle};
use crate::view::AttributeView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoryConfig {
    pub seed: u64,
    pub interval_seconds: f64,
    pub aggregation: Aggregation,
    pub alignment: ZScoreScope,
    pub noise_sigma: f64,
    pub style_mode: SelectionMode,
    /// Directory holding the trained artifacts (see [`save_bundle`]).
    pub bundle: PathBuf,
    /// Where the manifest and frame images go.
    pub output_dir: Option<PathBuf>,
    pub features: FeatureConfig,
}

impl Default for StoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            interval_seconds: 5.0,
            aggregation: Aggregation::Mean,
            alignment: ZScoreScope::SongLevel,
            noise_sigma: 0.1,
            style_mode: SelectionMode::Nearest,
            bundle: PathBuf::from("bundle"),
            output_dir: None,
            features: FeatureConfig::default(),
        }
    }
}

impl StoryConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            artifact: "story config".into(),
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.windows_per_interval()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be a finite value >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Feature windows per interval; the interval must be a whole number of windows.
    pub fn windows_per_interval(&self) -> Result<usize> {
        let per = self.interval_seconds * 1000.0 / self.features.window_ms as f64;
        if !(per >= 1.0) || (per - per.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "interval_seconds {} is not a positive multiple of the {} ms window",
                self.interval_seconds, self.features.window_ms
            )));
        }
        Ok(per.round() as usize)
    }
}

/// Aggregates consecutive blocks of `windows_per_interval` vectors. A shorter
/// trailing block is aggregated as it is.
pub fn interval_attributes(
    window_attrs: &[AttributeVector],
    windows_per_interval: usize,
    aggregation: Aggregation,
) -> Result<Vec<AttributeVector>> {
    if window_attrs.is_empty() {
        return Err(Error::InsufficientData("no attribute windows".into()));
    }
    if windows_per_interval == 0 {
        return Err(Error::Config("an interval needs at least one window".into()));
    }
    let dim = window_attrs[0].dim();
    if let Some(v) = window_attrs.iter().find(|v| v.dim() != dim) {
        return Err(Error::dim(dim, v.dim()));
    }
    Ok(window_attrs
        .chunks(windows_per_interval)
        .map(|block| {
            AttributeVector(
                (0..dim)
                    .map(|j| {
                        let mut col: Vec<f64> = block.iter().map(|v| v.0[j]).collect();
                        match aggregation {
                            Aggregation::Mean => col.iter().sum::<f64>() / col.len() as f64,
                            Aggregation::Median => median(&mut col),
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Every trained artifact a story needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub estimator: MlpRegressor,
    pub translator: TranslationModel,
    pub view: AttributeView,
    pub palette: Option<StylePalette>,
    /// Required for dataset-level alignment.
    pub alignment: Option<ZScoreStats>,
}

pub const ESTIMATOR_FILE: &str = "estimator.json";
pub const TRANSLATOR_FILE: &str = "translator.json";
pub const VIEW_FILE: &str = "view.json";
pub const PALETTE_FILE: &str = "palette.json";
pub const ALIGNMENT_FILE: &str = "alignment.json";

#[derive(Serialize, Deserialize)]
struct AlignmentDocument {
    version: u32,
    stats: ZScoreStats,
}

pub fn save_bundle(dir: impl AsRef<Path>, bundle: &Bundle) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    bundle.estimator.save(dir.join(ESTIMATOR_FILE), serde_json::json!({}))?;
    bundle.translator.save(dir.join(TRANSLATOR_FILE), serde_json::json!({}))?;
    bundle.view.save(dir.join(VIEW_FILE))?;
    if let Some(p) = &bundle.palette {
        p.save(dir.join(PALETTE_FILE))?;
    }
    if let Some(stats) = &bundle.alignment {
        save_alignment(dir.join(ALIGNMENT_FILE), stats)?;
    }
    Ok(())
}

/// Writes dataset-level alignment statistics.
pub fn save_alignment(path: impl AsRef<Path>, stats: &ZScoreStats) -> Result<()> {
    persist::write_json(
        path,
        &AlignmentDocument {
            version: persist::FORMAT_VERSION,
            stats: stats.clone(),
        },
    )
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<ZScoreStats> {
    persist::read_json::<AlignmentDocument>(path.as_ref(), "alignment stats").map(|d| d.stats)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let palette_path = dir.join(PALETTE_FILE);
    let alignment_path = dir.join(ALIGNMENT_FILE);
    Ok(Bundle {
        estimator: MlpRegressor::load(dir.join(ESTIMATOR_FILE))?,
        translator: TranslationModel::load(dir.join(TRANSLATOR_FILE))?,
        view: AttributeView::load(dir.join(VIEW_FILE))?,
        palette: palette_path.exists().then(|| StylePalette::load(&palette_path)).transpose()?,
        alignment: alignment_path.exists().then(|| load_alignment(&alignment_path)).transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub start_time: f64,
    pub attribute: AttributeVector,
    pub band: SentimentBand,
    pub generator: GeneratorVector,
    pub style_id: Option<u32>,
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub version: u32,
    pub song: String,
    pub duration_seconds: f64,
    pub interval_seconds: f64,
    pub seed: u64,
    /// False when a stage failed part-way through frame generation.
    pub complete: bool,
    pub frames: Vec<Frame>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl FrameManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        persist::read_json(path, "frame manifest")
    }
}

/// Where generated frames are written and how they are stylized.
pub struct ImageSink<'a> {
    pub dir: PathBuf,
    pub stylizer: Option<&'a dyn StyleBackend>,
    pub blend: f64,
}

/// Runs the full chain on an audio file and writes the manifest to
/// `cfg.output_dir` when set.
pub fn generate_story<B: GeneratorBackend + ?Sized>(
    song: impl AsRef<Path>,
    cfg: &StoryConfig,
    bundle: &Bundle,
    backend: &B,
    sink: Option<&ImageSink<'_>>,
) -> Result<FrameManifest> {
    cfg.validate()?;
    let song = song.as_ref();
    let segment = load_audio(song, cfg.features.sample_rate).map_err(|e| e.at_stage("load_audio"))?;
    story_from_segment(&segment, &song.display().to_string(), cfg, bundle, backend, sink)
}

/// [`generate_story`] on an already decoded segment.
pub fn story_from_segment<B: GeneratorBackend + ?Sized>(
    segment: &AudioSegment,
    song_name: &str,
    cfg: &StoryConfig,
    bundle: &Bundle,
    backend: &B,
    sink: Option<&ImageSink<'_>>,
) -> Result<FrameManifest> {
    cfg.validate()?;
    check_bundle(bundle, backend).map_err(|e| e.at_stage("load_bundle"))?;

    let features = extract_feature_sequence(segment, &cfg.features, song_name).map_err(|e| e.at_stage("features"))?;
    let raw = predict_attributes(&bundle.estimator, &features).map_err(|e| e.at_stage("estimate"))?;
    let aligned = align(&raw, cfg.alignment, bundle.alignment.as_ref()).map_err(|e| e.at_stage("align"))?;
    let intervals = interval_attributes(&aligned, cfg.windows_per_interval()?, cfg.aggregation)
        .map_err(|e| e.at_stage("aggregate"))?;

    let mut manifest = FrameManifest {
        version: persist::FORMAT_VERSION,
        song: song_name.to_string(),
        duration_seconds: segment.duration_secs(),
        interval_seconds: cfg.interval_seconds,
        seed: cfg.seed,
        complete: false,
        frames: Vec::with_capacity(intervals.len()),
    };
    if let Some(s) = sink {
        std::fs::create_dir_all(&s.dir).map_err(|e| Error::from(e).at_stage("write_frames"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thresholds = bundle.palette.as_ref().map(|p| p.thresholds).unwrap_or_default();
    let mut generators = Vec::with_capacity(intervals.len());
    for attr in &intervals {
        generators.push(translate(&bundle.translator, attr, cfg.noise_sigma, &mut rng).map_err(|e| e.at_stage("translate"))?);
    }
    let images = backend.generate_batch(&generators);

    let mut failure = None;
    for (index, ((attribute, generator), image)) in intervals.into_iter().zip(generators).zip(images).enumerate() {
        let frame = build_frame(index, attribute, generator, image, cfg, bundle, sink, &thresholds);
        match frame {
            Ok(f) => manifest.frames.push(f),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    manifest.complete = failure.is_none();
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at_stage("write_manifest"))?;
        manifest
            .save(dir.join(MANIFEST_FILE))
            .map_err(|e| e.at_stage("write_manifest"))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_frame(
    index: usize,
    attribute: AttributeVector,
    generator: GeneratorVector,
    image: Result<ImageHandle>,
    cfg: &StoryConfig,
    bundle: &Bundle,
    sink: Option<&ImageSink<'_>>,
    thresholds: &crate::stylizer::SentimentThresholds,
) -> Result<Frame> {
    let image = image.map_err(|e| e.at_stage("generate"))?;
    let style_id = bundle
        .palette
        .as_ref()
        .map(|p| select_style(p, &attribute, cfg.style_mode))
        .transpose()
        .map_err(|e| e.at_stage("select_style"))?;
    let path = match sink {
        Some(s) => {
            let image = match (s.stylizer, style_id, &bundle.palette) {
                (Some(st), Some(id), Some(p)) => st
                    .stylize(&image, p.get(id).expect("selected style exists"), s.blend)
                    .map_err(|e| e.at_stage("stylize"))?,
                _ => image,
            };
            let path = s.dir.join(format!("frame_{index:04}.{}", image_extension(&image.payload)));
            std::fs::write(&path, &image.payload).map_err(|e| Error::from(e).at_stage("write_frames"))?;
            Some(path.display().to_string())
        }
        None => None,
    };
    Ok(Frame {
        index,
        start_time: index as f64 * cfg.interval_seconds,
        band: sentiment_band(&attribute, thresholds),
        attribute,
        generator,
        style_id,
        image: path,
    })
}

fn image_extension(payload: &[u8]) -> &'static str {
    match payload {
        [0x89, b'P', b'N', b'G', ..] => "png",
        [0xFF, 0xD8, 0xFF, ..] => "jpg",
        _ => "bin",
    }
}

fn check_bundle<B: GeneratorBackend + ?Sized>(bundle: &Bundle, backend: &B) -> Result<()> {
    let t = &bundle.translator;
    if t.num_classes() != backend.num_classes() {
        return Err(Error::Precondition(format!(
            "translator has {} classes but the backend has {}",
            t.num_classes(),
            backend.num_classes()
        )));
    }
    if t.latent_dim() != backend.latent_dim() {
        return Err(Error::dim(backend.latent_dim(), t.latent_dim()));
    }
    if t.attribute_dim() != bundle.estimator.output_dim() {
        return Err(Error::dim(t.attribute_dim(), bundle.estimator.output_dim()));
    }
    Ok(())
}

fn align(raw: &[AttributeVector], scope: ZScoreScope, dataset: Option<&ZScoreStats>) -> Result<Vec<AttributeVector>> {
    let stats = match scope {
        ZScoreScope::SongLevel => compute_zscore_stats(raw, ZScoreScope::SongLevel)?,
        ZScoreScope::DatasetLevel => dataset
            .cloned()
            .ok_or_else(|| Error::Precondition("dataset-level alignment needs stored alignment stats".into()))?,
    };
    zscore_align(raw, &stats)
}

/// Process exit code for an error: 2 config, 3 backend, 4 data.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Backend(_) | Error::Protocol(_) => 3,
        Error::PartialSampling { source, .. } => exit_code(source),
        _ => 4,
    }
}
