//! Browser demo over the synthetic backend. Each export returns a JSON string
//! that `www/index.html` draws on a canvas.

use serde::Serialize;
use synesthete::generator::{sample_generator_space, SyntheticBackend, SyntheticBackendSpec};
use synesthete::stylizer::{select_style, sentiment_band, SelectionMode, SentimentBand, SentimentThresholds, StyleEntry, StylePalette};
use synesthete::view::{build_attribute_view, cluster_attributes, distinct_classes_per_cluster, median, view_stability_counts};
use synesthete::{AttributeVector, SamplePair};
use wasm_bindgen::prelude::*;

/// Keeps a demo run under a few seconds in the browser.
pub const MAX_SAMPLES: usize = 100_000;
const MAX_POINTS: usize = 3000;

#[derive(Debug, Clone, Copy)]
pub struct CorpusParams {
    pub classes: usize,
    pub latent_dim: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub group: usize,
}

#[derive(Debug, Serialize)]
pub struct InstabilityReport {
    pub histogram: Vec<usize>,
    pub median: f64,
    /// Subsample of the corpus colored by attribute cluster.
    pub points: Vec<Point>,
}

#[derive(Debug, Serialize)]
pub struct ViewReport {
    pub categories: Vec<usize>,
    /// Smoothed pairs colored by position of their class in `categories`.
    pub smoothed: Vec<Point>,
    pub member_counts: Vec<usize>,
    /// Distinct classes per cluster when the survivors are clustered again.
    pub stability: Vec<usize>,
    pub survivors: usize,
}

#[derive(Debug, Serialize)]
pub struct StyleReport {
    pub band: SentimentBand,
    pub style_id: u32,
    pub styles: Vec<StyleEntry>,
}

fn corpus(p: CorpusParams) -> Result<Vec<SamplePair>, String> {
    if p.samples > MAX_SAMPLES {
        return Err(format!("at most {MAX_SAMPLES} samples in the browser"));
    }
    let backend = SyntheticBackend::new(SyntheticBackendSpec::new(p.classes, p.latent_dim, p.seed)).map_err(|e| e.to_string())?;
    sample_generator_space(&backend, &backend, p.samples, p.seed.wrapping_add(1)).map_err(|e| e.to_string())
}

fn subsample(pairs: &[SamplePair], groups: &[usize]) -> Vec<Point> {
    let step = pairs.len().div_ceil(MAX_POINTS).max(1);
    pairs
        .iter()
        .zip(groups)
        .step_by(step)
        .map(|(p, &g)| Point {
            x: p.attributes.0[0],
            y: p.attributes.0[1],
            group: g,
        })
        .collect()
}

pub fn instability_report(p: CorpusParams, clusters: usize) -> Result<InstabilityReport, String> {
    let pairs = corpus(p)?;
    let km = cluster_attributes(&pairs, clusters, p.seed).map_err(|e| e.to_string())?;
    let histogram = distinct_classes_per_cluster(&pairs, &km.assignments, clusters, None);
    Ok(InstabilityReport {
        median: median(&histogram),
        points: subsample(&pairs, &km.assignments),
        histogram,
    })
}

pub fn view_report(p: CorpusParams, clusters: usize, subclusters: usize) -> Result<ViewReport, String> {
    let pairs = corpus(p)?;
    let view = build_attribute_view(&pairs, clusters, subclusters, p.seed, None).map_err(|e| e.to_string())?;
    let stability = view_stability_counts(&pairs, &view).map_err(|e| e.to_string())?;
    let smoothed = view
        .smoothed_pairs
        .iter()
        .map(|sp| Point {
            x: sp.attributes.0[0],
            y: sp.attributes.0[1],
            group: view
                .retained_categories
                .binary_search(&sp.generator.class_id)
                .expect("smoothed class is retained"),
        })
        .collect();
    Ok(ViewReport {
        categories: view.retained_categories,
        smoothed,
        member_counts: view.member_counts,
        stability,
        survivors: view.survivors.len(),
    })
}

/// A fixed palette spread over the attribute plane.
pub fn demo_palette() -> StylePalette {
    let styles = [
        ("storm", [-0.9, 0.8]),
        ("ash", [-0.8, -0.7]),
        ("fog", [-0.2, -0.4]),
        ("dawn", [0.3, 0.1]),
        ("meadow", [0.7, -0.5]),
        ("festival", [0.9, 0.9]),
    ]
    .iter()
    .enumerate()
    .map(|(i, (name, a))| StyleEntry {
        id: i as u32,
        path: (*name).to_string(),
        attributes: AttributeVector(a.to_vec()),
    })
    .collect();
    StylePalette::new(styles, SentimentThresholds::default(), synesthete::stylizer::DEFAULT_BLEND).expect("valid palette")
}

pub fn style_report(
    valence: f64,
    arousal: f64,
    negative_below: f64,
    positive_above: f64,
    band_gated: bool,
) -> Result<StyleReport, String> {
    let mut palette = demo_palette();
    palette.thresholds = SentimentThresholds::new(negative_below, positive_above).map_err(|e| e.to_string())?;
    let attr = AttributeVector::new(vec![valence, arousal]).map_err(|e| e.to_string())?;
    let mode = if band_gated { SelectionMode::BandGated } else { SelectionMode::Nearest };
    Ok(StyleReport {
        band: sentiment_band(&attr, &palette.thresholds),
        style_id: select_style(&palette, &attr, mode).map_err(|e| e.to_string())?,
        styles: palette.styles,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Distinct classes per attribute cluster of a fresh synthetic corpus.
#[wasm_bindgen]
pub fn instability(classes: usize, latent_dim: usize, samples: usize, clusters: usize, seed: u32) -> Result<String, JsError> {
    let p = CorpusParams {
        classes,
        latent_dim,
        samples,
        seed: seed.into(),
    };
    to_js(instability_report(p, clusters))
}

/// The attribute view of the same corpus and its stability check.
#[wasm_bindgen]
pub fn attribute_view(
    classes: usize,
    latent_dim: usize,
    samples: usize,
    clusters: usize,
    subclusters: usize,
    seed: u32,
) -> Result<String, JsError> {
    let p = CorpusParams {
        classes,
        latent_dim,
        samples,
        seed: seed.into(),
    };
    to_js(view_report(p, clusters, subclusters))
}

/// Sentiment band and chosen style for one attribute point.
#[wasm_bindgen]
pub fn pick_style(valence: f64, arousal: f64, negative_below: f64, positive_above: f64, band_gated: bool) -> Result<String, JsError> {
    to_js(style_report(valence, arousal, negative_below, positive_above, band_gated))
}
