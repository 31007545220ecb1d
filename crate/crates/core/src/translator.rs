//! The attribute-to-generator translation model.
//!
//! A shared sigmoid trunk (2 → 64 → 256) feeds two heads: a softmax over the
//! generator's classes and an identity layer producing the latent vector.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::VisualAttributeEstimator;
use crate::generator::GeneratorBackend;
use crate::nn::{
    backward_chain, finite_difference_check_at, forward_chain, rows_to_array, Activation, Adam, AdamParams, Dense,
    DenseGrad, Parameterized,
};
use crate::persist::{self, LayerRecord};
use crate::types::{divergence, AttributeVector, GeneratorVector};
use crate::view::AttributeView;

pub const TRUNK_WIDTHS: [usize; 2] = [64, 256];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub latent_loss_weight: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub adam: AdamParams,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            latent_loss_weight: 1.0,
            noise_sigma: 0.1,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be a finite value >= 0, got {}", self.noise_sigma)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.latent_loss_weight >= 0.0 && self.latent_loss_weight.is_finite()) {
            return Err(Error::Config("latent_loss_weight must be a finite value >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModel {
    pub trunk: Vec<Dense>,
    pub class_head: Dense,
    pub latent_head: Dense,
    /// `retained[k]` is true when class `k` may be emitted.
    pub retained: Vec<bool>,
}

/// Full-batch training data: attribute inputs, class ids and latent targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorBatch {
    pub inputs: Array2<f64>,
    pub class_ids: Vec<usize>,
    pub latents: Array2<f64>,
}

impl TranslatorBatch {
    pub fn from_view(view: &AttributeView) -> Self {
        let attrs: Vec<Vec<f64>> = view.smoothed_pairs.iter().map(|p| p.attributes.0.clone()).collect();
        let latents: Vec<Vec<f64>> = view.smoothed_pairs.iter().map(|p| p.generator.latent.clone()).collect();
        Self {
            inputs: rows_to_array(&attrs),
            class_ids: view.smoothed_pairs.iter().map(|p| p.generator.class_id).collect(),
            latents: rows_to_array(&latents),
        }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }
}

impl TranslationModel {
    /// Glorot-initialised model. `retained_categories` become the class mask.
    pub fn new(
        attribute_dim: usize,
        num_classes: usize,
        latent_dim: usize,
        retained_categories: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if attribute_dim == 0 || num_classes == 0 || latent_dim == 0 {
            return Err(Error::Precondition("translator dimensions must be positive".into()));
        }
        let mut retained = vec![false; num_classes];
        for &c in retained_categories {
            if c >= num_classes {
                return Err(Error::Domain(format!("retained class {c} out of range for {num_classes} classes")));
            }
            retained[c] = true;
        }
        if !retained.iter().any(|&r| r) {
            return Err(Error::Precondition("no retained classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::new();
        let mut width = attribute_dim;
        for &w in &TRUNK_WIDTHS {
            trunk.push(Dense::glorot(width, w, Activation::Sigmoid, &mut rng));
            width = w;
        }
        let class_head = Dense::glorot(width, num_classes, Activation::Softmax, &mut rng);
        let latent_head = Dense::glorot(width, latent_dim, Activation::Identity, &mut rng);
        Ok(Self {
            trunk,
            class_head,
            latent_head,
            retained,
        })
    }

    pub fn attribute_dim(&self) -> usize {
        self.trunk[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.class_head.output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_head.output_dim()
    }

    pub fn retained_categories(&self) -> Vec<usize> {
        (0..self.retained.len()).filter(|&k| self.retained[k]).collect()
    }

    fn trunk_features(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        forward_chain(&self.trunk, x)
    }

    /// Class probabilities and latent outputs for a batch of attribute rows.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = self.trunk_features(x).pop().unwrap();
        (self.class_head.forward(&h), self.latent_head.forward(&h))
    }

    /// Class logits (pre-softmax) and latent outputs.
    pub fn logits_and_latent(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = self.trunk_features(x).pop().unwrap();
        (self.class_head.preactivation(&h), self.latent_head.forward(&h))
    }

    /// Mean over samples of `CE(class) + λ·‖latent − target‖²`, with gradients
    /// in the order trunk layers, class head, latent head.
    pub fn loss_and_grads(&self, batch: &TranslatorBatch, lambda: f64) -> (f64, Vec<DenseGrad>) {
        let n = batch.len() as f64;
        let outputs = self.trunk_features(&batch.inputs);
        let h = outputs.last().unwrap();
        let probs = self.class_head.forward(h);
        let latent = self.latent_head.forward(h);

        let mut ce = 0.0;
        let mut g_class = probs.clone();
        for (i, &c) in batch.class_ids.iter().enumerate() {
            ce -= probs[[i, c]].max(1e-300).ln();
            g_class[[i, c]] -= 1.0;
        }
        g_class /= n;
        let diff = &latent - &batch.latents;
        let sq = diff.mapv(|d| d * d).sum();
        let g_latent = diff * (2.0 * lambda / n);
        let loss = (ce + lambda * sq) / n;

        let (class_grad, gh_class) = self.class_head.backward(h, &g_class);
        let (latent_grad, gh_latent) = self.latent_head.backward(h, &g_latent);
        let g_pre = self.trunk.last().unwrap().activation_backward(h, gh_class + gh_latent);
        let (mut grads, _) = backward_chain(&self.trunk, &outputs, g_pre);
        grads.push(class_grad);
        grads.push(latent_grad);
        (loss, grads)
    }

    fn into_layers(self) -> (Vec<Dense>, Vec<bool>) {
        let mut layers = self.trunk;
        layers.push(self.class_head);
        layers.push(self.latent_head);
        (layers, self.retained)
    }

    fn from_layers(mut layers: Vec<Dense>, retained: Vec<bool>) -> Self {
        let latent_head = layers.pop().unwrap();
        let class_head = layers.pop().unwrap();
        Self {
            trunk: layers,
            class_head,
            latent_head,
            retained,
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.class_head, &self.latent_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain([&mut self.class_head, &mut self.latent_head])
    }
}

impl Parameterized for TranslationModel {
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers().for_each(|l| l.write_params(&mut out));
        out
    }

    fn set_flat_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for l in self.layers_mut() {
            offset += l.read_params(&params[offset..]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTranslator {
    pub model: TranslationModel,
    pub loss_trace: Vec<f64>,
}

/// Fits a translator to a view by full-batch Adam.
pub fn train_translator(
    view: &AttributeView,
    num_classes: usize,
    cfg: &TranslatorConfig,
) -> Result<TrainedTranslator> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Precondition("attribute view is empty".into()));
    }
    let batch = TranslatorBatch::from_view(view);
    let attribute_dim = batch.inputs.ncols();
    let latent_dim = batch.latents.ncols();
    if let Some(p) = view.smoothed_pairs.iter().find(|p| p.generator.latent.len() != latent_dim) {
        return Err(Error::dim(latent_dim, p.generator.latent.len()));
    }
    if let Some(p) = view.smoothed_pairs.iter().find(|p| p.attributes.dim() != attribute_dim) {
        return Err(Error::dim(attribute_dim, p.attributes.dim()));
    }
    if let Some(p) = view.smoothed_pairs.iter().find(|p| p.generator.class_id >= num_classes) {
        return Err(Error::Domain(format!(
            "view class {} out of range for {} classes",
            p.generator.class_id, num_classes
        )));
    }
    let model = TranslationModel::new(attribute_dim, num_classes, latent_dim, &view.retained_categories, cfg.seed)?;
    train_on_batch(model, &batch, cfg)
}

/// Runs `cfg.epochs` full-batch Adam steps from the given model.
pub fn train_on_batch(model: TranslationModel, batch: &TranslatorBatch, cfg: &TranslatorConfig) -> Result<TrainedTranslator> {
    let (mut layers, retained) = model.into_layers();
    let mut opt = Adam::new(&layers, cfg.learning_rate, cfg.adam);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let current = TranslationModel::from_layers(layers, retained.clone());
        let (loss, grads) = current.loss_and_grads(batch, cfg.latent_loss_weight);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        layers = current.into_layers().0;
        opt.step(&mut layers, &grads);
        trace.push(loss);
    }
    // Store-precision weights make save/load exact.
    layers.iter_mut().for_each(Dense::round_to_f32);
    Ok(TrainedTranslator {
        model: TranslationModel::from_layers(layers, retained),
        loss_trace: trace,
    })
}

/// Maps an attribute vector to a generator vector. The class is the highest
/// scoring retained class (ties go to the lowest id). The latent is the latent
/// head output plus `sigma`-scaled standard normal noise from `rng`.
pub fn translate<R: Rng + ?Sized>(
    model: &TranslationModel,
    attr: &AttributeVector,
    sigma: f64,
    rng: &mut R,
) -> Result<GeneratorVector> {
    if attr.dim() != model.attribute_dim() {
        return Err(Error::dim(model.attribute_dim(), attr.dim()));
    }
    let x = Array2::from_shape_vec((1, attr.dim()), attr.0.clone()).map_err(|e| Error::Format(e.to_string()))?;
    let (logits, latent) = model.logits_and_latent(&x);
    let class_id = masked_argmax(logits.row(0).iter().copied(), &model.retained);
    let mut latent = latent.index_axis(Axis(0), 0).to_vec();
    if sigma > 0.0 {
        for v in &mut latent {
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
    }
    Ok(GeneratorVector::new(class_id, latent))
}

/// Index of the largest score among masked-in entries, lowest index on ties.
pub fn masked_argmax(scores: impl Iterator<Item = f64>, mask: &[bool]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if !mask[i] {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i).expect("mask has at least one retained class")
}

/// Mean and max round-trip divergence plus the per-attribute values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrip {
    pub mean: f64,
    pub max: f64,
    pub per_attribute: Vec<f64>,
}

impl RoundTrip {
    fn from_values(values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let max = values.iter().copied().fold(0.0, f64::max);
        Self {
            mean,
            max,
            per_attribute: values,
        }
    }
}

/// Divergence between each attribute and what the estimator reads back from
/// the image generated for its noiseless translation.
pub fn roundtrip_divergence<B, E>(
    model: &TranslationModel,
    backend: &B,
    estimator: &E,
    attrs: &[AttributeVector],
) -> Result<RoundTrip>
where
    B: GeneratorBackend + ?Sized,
    E: VisualAttributeEstimator + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gvs = attrs
        .iter()
        .map(|a| translate(model, a, 0.0, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let readback = render_and_estimate(backend, estimator, &gvs)?;
    let values = attrs
        .iter()
        .zip(&readback)
        .map(|(a, b)| divergence(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundTrip::from_values(values))
}

/// For each view target, the smallest divergence reachable by any of the
/// view's own generator vectors. This is the floor a perfect translator
/// restricted to the view could achieve.
pub fn intrinsic_divergence<B, E>(view: &AttributeView, backend: &B, estimator: &E) -> Result<RoundTrip>
where
    B: GeneratorBackend + ?Sized,
    E: VisualAttributeEstimator + ?Sized,
{
    let gvs: Vec<GeneratorVector> = view.smoothed_pairs.iter().map(|p| p.generator.clone()).collect();
    let readback = render_and_estimate(backend, estimator, &gvs)?;
    let mut values = Vec::with_capacity(view.smoothed_pairs.len());
    for p in &view.smoothed_pairs {
        let mut best = f64::INFINITY;
        for r in &readback {
            best = best.min(divergence(&p.attributes, r)?);
        }
        values.push(best);
    }
    Ok(RoundTrip::from_values(values))
}

fn render_and_estimate<B, E>(backend: &B, estimator: &E, gvs: &[GeneratorVector]) -> Result<Vec<AttributeVector>>
where
    B: GeneratorBackend + ?Sized,
    E: VisualAttributeEstimator + ?Sized,
{
    let images = backend
        .generate_batch(gvs)
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Backend(format!("generation failed: {e}")))?;
    estimator
        .estimate_batch(&images)
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Backend(format!("attribute estimation failed: {e}")))
}

/// Worst relative finite-difference error of the composite loss gradient.
/// `indices` selects flat parameters; `None` checks all of them.
pub fn translator_gradient_check(
    model: &TranslationModel,
    batch: &TranslatorBatch,
    lambda: f64,
    indices: Option<Vec<usize>>,
) -> f64 {
    let f = |m: &TranslationModel| {
        let (loss, grads) = m.loss_and_grads(batch, lambda);
        let mut flat = Vec::new();
        grads.iter().for_each(|g| g.write_flat(&mut flat));
        (loss, flat)
    };
    match indices {
        Some(idx) => finite_difference_check_at(model, f, idx),
        None => finite_difference_check_at(model, f, 0..model.flat_params().len()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatorHeads {
    pub class: LayerRecord,
    pub latent: LayerRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatorDocument {
    pub version: u32,
    pub arch: Vec<LayerRecord>,
    pub heads: TranslatorHeads,
    pub num_classes: usize,
    pub retained_classes: Vec<usize>,
    pub training_meta: serde_json::Value,
}

const ARTIFACT: &str = "translator";

impl TranslationModel {
    pub fn to_document(&self, training_meta: serde_json::Value) -> TranslatorDocument {
        TranslatorDocument {
            version: persist::FORMAT_VERSION,
            arch: self.trunk.iter().map(LayerRecord::from_layer).collect(),
            heads: TranslatorHeads {
                class: LayerRecord::from_layer(&self.class_head),
                latent: LayerRecord::from_layer(&self.latent_head),
            },
            num_classes: self.num_classes(),
            retained_classes: self.retained_categories(),
            training_meta,
        }
    }

    pub fn from_document(doc: &TranslatorDocument) -> Result<Self> {
        persist::check_version(doc.version, ARTIFACT)?;
        let trunk = doc.arch.iter().map(LayerRecord::to_layer).collect::<Result<Vec<_>>>()?;
        let class_head = doc.heads.class.to_layer()?;
        let latent_head = doc.heads.latent.to_layer()?;
        if trunk.is_empty() {
            return Err(Error::Format("translator has no trunk layers".into()));
        }
        for pair in trunk.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        let width = trunk.last().unwrap().output_dim();
        for head in [&class_head, &latent_head] {
            if head.input_dim() != width {
                return Err(Error::dim(width, head.input_dim()));
            }
        }
        if class_head.output_dim() != doc.num_classes {
            return Err(Error::dim(doc.num_classes, class_head.output_dim()));
        }
        let mut retained = vec![false; doc.num_classes];
        for &c in &doc.retained_classes {
            if c >= doc.num_classes {
                return Err(Error::Domain(format!("retained class {c} out of range")));
            }
            retained[c] = true;
        }
        if !retained.iter().any(|&r| r) {
            return Err(Error::Format("translator retains no classes".into()));
        }
        Ok(Self {
            trunk,
            class_head,
            latent_head,
            retained,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, training_meta: serde_json::Value) -> Result<()> {
        persist::write_json(path, &self.to_document(training_meta))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: TranslatorDocument = persist::read_json(path, ARTIFACT)?;
        Self::from_document(&doc)
    }
}
