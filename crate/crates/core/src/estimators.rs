//! Attribute regressors: the trainable audio estimator, the visual estimator
//! interface, and z-score alignment between the two attribute spaces.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FeatureSequence;
use crate::error::{Error, Result};
use crate::nn::{
    array_to_rows, backward_chain, finite_difference_check, forward_chain, rows_to_array,
    Activation, Adam, AdamParams, Dense, DenseGrad, Parameterized,
};
use crate::persist::{self, LayerRecord};
use crate::types::{AttributeVector, ImageHandle};

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Layer sizes and activations of a feed-forward regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<(usize, Activation)>,
}

impl Architecture {
    /// One sigmoid hidden layer of 256 units and a linear 2-unit output.
    pub fn audio_default(input_dim: usize) -> Self {
        Self {
            input_dim,
            layers: vec![(256, Activation::Sigmoid), (2, Activation::Identity)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// `(epochs, learning_rate)` phases run back to back with one optimizer.
    pub schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            schedule: vec![(30, 1e-4), (20, 1e-5)],
            batch_size: 32,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("empty epoch schedule".into()));
        }
        for &(epochs, lr) in &self.schedule {
            if epochs == 0 || !(lr > 0.0) {
                return Err(Error::Config(format!("invalid phase ({epochs} epochs, lr {lr})")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionLoss {
    /// Mean over all output entries of the squared error.
    Mse,
    /// Mean negative log-likelihood; targets are class probabilities.
    /// Requires a softmax output layer.
    SoftmaxCrossEntropy,
    /// `mean_i sum_j output_ij * target_ij`; exact-gradient reference.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    pub layers: Vec<Dense>,
}

impl MlpRegressor {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.layers.is_empty() || arch.input_dim == 0 {
            return Err(Error::Config("architecture needs an input and at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = arch.input_dim;
        let layers = arch
            .layers
            .iter()
            .map(|&(out, act)| {
                let l = Dense::glorot(fan_in, out, act, &mut rng);
                fan_in = out;
                l
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Format("regressor has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            layers: self.layers.iter().map(|l| (l.output_dim(), l.activation)).collect(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.layers.iter().fold(x.clone(), |acc, l| l.forward(&acc))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_dim()) {
            return Err(Error::dim(self.input_dim(), r.len()));
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        Ok(array_to_rows(&self.forward(&rows_to_array(rows))))
    }

    /// Loss and per-layer gradients on a batch.
    pub fn loss_and_grads(
        &self,
        x: &Array2<f64>,
        targets: &Array2<f64>,
        loss: RegressionLoss,
    ) -> (f64, Vec<DenseGrad>) {
        let outputs = forward_chain(&self.layers, x);
        let out = outputs.last().unwrap();
        let last = self.layers.last().unwrap();
        let n = x.nrows() as f64;
        let (value, grad_pre) = match loss {
            RegressionLoss::Mse => {
                let diff = out - targets;
                let count = diff.len() as f64;
                let value = diff.mapv(|d| d * d).sum() / count;
                (value, last.activation_backward(out, diff * (2.0 / count)))
            }
            RegressionLoss::SoftmaxCrossEntropy => {
                assert_eq!(last.activation, Activation::Softmax, "cross-entropy needs a softmax head");
                let value = -(targets * &out.mapv(|p| p.max(1e-300).ln())).sum() / n;
                (value, (out - targets) / n)
            }
            RegressionLoss::Linear => {
                let value = (out * targets).sum() / n;
                (value, last.activation_backward(out, targets / n))
            }
        };
        let (grads, _) = backward_chain(&self.layers, &outputs, grad_pre);
        (value, grads)
    }
}

impl Parameterized for MlpRegressor {
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.write_params(&mut out));
        out
    }

    fn set_flat_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            offset += l.read_params(&params[offset..]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRegressor {
    pub model: MlpRegressor,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Fits a regressor by minibatch Adam on mean squared error.
pub fn train_mlp_regressor(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    arch: &Architecture,
    cfg: &TrainingConfig,
) -> Result<TrainedRegressor> {
    cfg.validate()?;
    if features.len() != targets.len() {
        return Err(Error::dim(features.len(), targets.len()));
    }
    if features.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} rows is fewer than batch size {}",
            features.len(),
            cfg.batch_size
        )));
    }
    let mut model = MlpRegressor::new(arch, cfg.seed)?;
    if let Some(r) = features.iter().find(|r| r.len() != arch.input_dim) {
        return Err(Error::dim(arch.input_dim, r.len()));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != model.output_dim()) {
        return Err(Error::dim(model.output_dim(), t.len()));
    }

    let x_all = rows_to_array(features);
    let y_all = rows_to_array(targets);
    let mut order: Vec<usize> = (0..features.len()).collect();
    // Shuffle stream is separate from the init stream so both stay fixed per seed.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a17);
    let mut opt = Adam::new(&model.layers, cfg.schedule[0].1, cfg.adam);
    let mut trace = Vec::new();

    for &(epochs, lr) in &cfg.schedule {
        opt.learning_rate = lr;
        for _ in 0..epochs {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let xb = x_all.select(ndarray::Axis(0), chunk);
                let yb = y_all.select(ndarray::Axis(0), chunk);
                let (loss, grads) = model.loss_and_grads(&xb, &yb, RegressionLoss::Mse);
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch: trace.len() + 1 });
                }
                opt.step(&mut model.layers, &grads);
                total += loss;
                batches += 1;
            }
            trace.push(total / batches as f64);
        }
    }
    // Store-precision weights make save/load exact.
    model.layers.iter_mut().for_each(Dense::round_to_f32);
    Ok(TrainedRegressor {
        model,
        loss_trace: trace,
    })
}

/// One attribute vector per feature window.
pub fn predict_attributes(model: &MlpRegressor, features: &FeatureSequence) -> Result<Vec<AttributeVector>> {
    Ok(model
        .predict_rows(&features.windows)?
        .into_iter()
        .map(AttributeVector)
        .collect())
}

/// Finite-difference check of the regressor's analytic gradients on one batch.
pub fn gradient_check(
    model: &MlpRegressor,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    loss: RegressionLoss,
) -> f64 {
    let x = rows_to_array(inputs);
    let y = rows_to_array(targets);
    finite_difference_check(model, |m: &MlpRegressor| {
        let (value, grads) = m.loss_and_grads(&x, &y, loss);
        let mut flat = Vec::new();
        grads.iter().for_each(|g| g.write_flat(&mut flat));
        (value, flat)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreScope {
    DatasetLevel,
    SongLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub scope: ZScoreScope,
}

/// Per-dimension mean and population standard deviation (floored).
pub fn compute_zscore_stats(vectors: &[AttributeVector], scope: ZScoreScope) -> Result<ZScoreStats> {
    if vectors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "z-score needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::dim(dim, v.dim()));
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| vectors.iter().map(|v| v.0[j]).sum::<f64>() / n)
        .collect();
    let std = (0..dim)
        .map(|j| {
            let var = vectors.iter().map(|v| (v.0[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(STD_FLOOR)
        })
        .collect();
    Ok(ZScoreStats { mean, std, scope })
}

impl ZScoreStats {
    fn check(&self, v: &AttributeVector) -> Result<()> {
        if v.dim() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), v.dim()));
        }
        Ok(())
    }

    pub fn align(&self, v: &AttributeVector) -> Result<AttributeVector> {
        self.check(v)?;
        Ok(AttributeVector(
            v.0.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
        ))
    }

    pub fn unalign(&self, v: &AttributeVector) -> Result<AttributeVector> {
        self.check(v)?;
        Ok(AttributeVector(
            v.0.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, s))| x * s + m)
                .collect(),
        ))
    }
}

pub fn zscore_align(vectors: &[AttributeVector], stats: &ZScoreStats) -> Result<Vec<AttributeVector>> {
    vectors.iter().map(|v| stats.align(v)).collect()
}

/// Maps an image to the shared attribute space.
pub trait VisualAttributeEstimator {
    fn attribute_dim(&self) -> usize;

    fn estimate(&self, image: &ImageHandle) -> Result<AttributeVector>;

    /// Whether repeated calls on the same image return identical vectors.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn estimate_batch(&self, images: &[ImageHandle]) -> Vec<Result<AttributeVector>> {
        images.iter().map(|im| self.estimate(im)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorDocument {
    pub version: u32,
    pub arch: Vec<LayerRecord>,
    pub training_meta: serde_json::Value,
}

impl MlpRegressor {
    pub fn to_document(&self, training_meta: serde_json::Value) -> RegressorDocument {
        RegressorDocument {
            version: persist::FORMAT_VERSION,
            arch: self.layers.iter().map(LayerRecord::from_layer).collect(),
            training_meta,
        }
    }

    pub fn from_document(doc: &RegressorDocument, artifact: &str) -> Result<Self> {
        persist::check_version(doc.version, artifact)?;
        let layers = doc
            .arch
            .iter()
            .map(LayerRecord::to_layer)
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>, training_meta: serde_json::Value) -> Result<()> {
        persist::write_json(path, &self.to_document(training_meta))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: RegressorDocument = persist::read_json(path, "audio estimator")?;
        Self::from_document(&doc, "audio estimator")
    }
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    id: String,
    valence: f64,
    arousal: f64,
}

/// Feature rows and per-window targets assembled from an annotation CSV
/// (`id,valence,arousal`) and `<features_dir>/<id>.dsft` files. Each song's
/// annotation is applied to every window of its feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub song_ids: Vec<String>,
}

pub fn load_annotated_dataset(csv_path: impl AsRef<Path>, features_dir: impl AsRef<Path>) -> Result<AnnotatedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path.as_ref())
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "valence", "arousal"] {
        return Err(Error::Format(format!(
            "annotation header must be `id,valence,arousal`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = AnnotatedDataset {
        features: Vec::new(),
        targets: Vec::new(),
        song_ids: Vec::new(),
    };
    for row in reader.deserialize::<AnnotationRow>() {
        let row = row.map_err(csv_err)?;
        let path = features_dir.as_ref().join(format!("{}.dsft", row.id));
        let matrix = crate::audio::featfile::load(&path).map_err(|e| match e {
            Error::Io(source) => Error::Load {
                artifact: format!("features for `{}`", row.id),
                path: path.clone(),
                source,
            },
            other => other,
        })?;
        for window in matrix {
            out.features.push(window);
            out.targets.push(vec![row.valence, row.arousal]);
            out.song_ids.push(row.id.clone());
        }
    }
    if out.features.is_empty() {
        return Err(Error::InsufficientData("annotation set produced no windows".into()));
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
