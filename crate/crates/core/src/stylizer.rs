//! Style palettes: map style images into attribute space, pick a style per
//! frame and classify sentiment bands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::VisualAttributeEstimator;
use crate::persist;
use crate::types::{divergence, AttributeVector, ImageHandle};

pub const DEFAULT_BLEND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentThresholds {
    pub negative_below: f64,
    pub positive_above: f64,
}

impl Default for SentimentThresholds {
    fn default() -> Self {
        Self {
            negative_below: -0.5,
            positive_above: 0.5,
        }
    }
}

impl SentimentThresholds {
    pub fn new(negative_below: f64, positive_above: f64) -> Result<Self> {
        let t = Self {
            negative_below,
            positive_above,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.negative_below < self.positive_above) {
            return Err(Error::Config(format!(
                "negative_below ({}) must be less than positive_above ({})",
                self.negative_below, self.positive_above
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentBand {
    Negative,
    Neutral,
    Positive,
}

/// Band of the mean attribute value. Values on a threshold are neutral.
pub fn sentiment_band(attr: &AttributeVector, thresholds: &SentimentThresholds) -> SentimentBand {
    let m = attr.mean();
    if m < thresholds.negative_below {
        SentimentBand::Negative
    } else if m > thresholds.positive_above {
        SentimentBand::Positive
    } else {
        SentimentBand::Neutral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Nearest entry in attribute space.
    #[default]
    Nearest,
    /// Nearest entry among those in the same sentiment band as the frame;
    /// falls back to all entries when that band has none.
    BandGated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleEntry {
    pub id: u32,
    pub path: String,
    pub attributes: AttributeVector,
}

/// A style image ready for attribute estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSource {
    pub path: String,
    pub image: ImageHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePalette {
    #[serde(default = "format_version")]
    pub version: u32,
    pub styles: Vec<StyleEntry>,
    pub thresholds: SentimentThresholds,
    pub blend: f64,
}

fn format_version() -> u32 {
    persist::FORMAT_VERSION
}

impl StylePalette {
    pub fn new(styles: Vec<StyleEntry>, thresholds: SentimentThresholds, blend: f64) -> Result<Self> {
        let p = Self {
            version: persist::FORMAT_VERSION,
            styles,
            thresholds,
            blend,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.styles.is_empty() {
            return Err(Error::Precondition("style palette needs at least one style".into()));
        }
        self.thresholds.validate()?;
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::Config(format!("blend must lie in [0, 1], got {}", self.blend)));
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&StyleEntry> {
        self.styles.iter().find(|s| s.id == id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        persist::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = persist::read_json(path, "style palette")?;
        p.validate()?;
        Ok(p)
    }
}

/// Estimates the attributes of each style image. Ids follow input order.
pub fn build_style_palette<E: VisualAttributeEstimator + ?Sized>(
    sources: &[StyleSource],
    estimator: &E,
    thresholds: SentimentThresholds,
    blend: f64,
) -> Result<StylePalette> {
    if sources.is_empty() {
        return Err(Error::Precondition("no style images given".into()));
    }
    let images: Vec<ImageHandle> = sources.iter().map(|s| s.image.clone()).collect();
    let attrs = estimator
        .estimate_batch(&images)
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Backend(format!("style attribute estimation failed: {e}")))?;
    let styles = sources
        .iter()
        .zip(attrs)
        .enumerate()
        .map(|(i, (s, attributes))| StyleEntry {
            id: i as u32,
            path: s.path.clone(),
            attributes,
        })
        .collect();
    StylePalette::new(styles, thresholds, blend)
}

fn nearest<'a>(entries: impl Iterator<Item = &'a StyleEntry>, attr: &AttributeVector) -> Result<Option<u32>> {
    let mut best: Option<(u32, f64)> = None;
    for e in entries {
        let d = divergence(attr, &e.attributes)?;
        match best {
            Some((id, bd)) if bd < d || (bd == d && id < e.id) => {}
            _ => best = Some((e.id, d)),
        }
    }
    Ok(best.map(|(id, _)| id))
}

/// Picks the style for a frame. Ties go to the lowest style id.
pub fn select_style(palette: &StylePalette, attr: &AttributeVector, mode: SelectionMode) -> Result<u32> {
    if palette.styles.is_empty() {
        return Err(Error::Precondition("style palette is empty".into()));
    }
    if mode == SelectionMode::BandGated {
        let band = sentiment_band(attr, &palette.thresholds);
        let gated = palette
            .styles
            .iter()
            .filter(|s| sentiment_band(&s.attributes, &palette.thresholds) == band);
        if let Some(id) = nearest(gated, attr)? {
            return Ok(id);
        }
    }
    Ok(nearest(palette.styles.iter(), attr)?.expect("palette is non-empty"))
}

/// Pixel-level stylization executed by a backend.
pub trait StyleBackend {
    fn stylize(&self, image: &ImageHandle, style: &StyleEntry, blend: f64) -> Result<ImageHandle>;
}
