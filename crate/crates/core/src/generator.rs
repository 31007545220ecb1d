//! Generator backends, generator-space sampling, and the synthetic backend
//! that doubles as an exact oracle for the attribute round trip.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::VisualAttributeEstimator;
use crate::types::{AttributeVector, GeneratorVector, ImageHandle, SamplePair};

/// Attribute outputs of the synthetic estimator are clamped to `[-BOUND, BOUND]`.
pub const SYNTHETIC_ATTRIBUTE_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_stylize: bool,
    pub max_concurrent_requests: usize,
}

/// A class-conditional, latent-driven image generator.
pub trait GeneratorBackend {
    fn num_classes(&self) -> usize;

    fn latent_dim(&self) -> usize;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_stylize: false,
            max_concurrent_requests: 1,
        }
    }

    fn generate(&self, gv: &GeneratorVector) -> Result<ImageHandle>;

    /// Results are in input order. Backends that can pipeline override this.
    fn generate_batch(&self, gvs: &[GeneratorVector]) -> Vec<Result<ImageHandle>> {
        gvs.iter().map(|gv| self.generate(gv)).collect()
    }
}

/// Parameters that fully determine a synthetic backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticBackendSpec {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub attribute_dim: usize,
    pub seed: u64,
}

impl SyntheticBackendSpec {
    pub fn new(num_classes: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            num_classes,
            latent_dim,
            attribute_dim: 2,
            seed,
        }
    }

    /// Variance of each mixing-matrix entry: `0.1 / sqrt(latent_dim)`.
    pub fn mixing_variance(&self) -> f64 {
        0.1 / (self.latent_dim as f64).sqrt()
    }

    fn fingerprint(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update(b"synthetic-backend");
        for v in [self.num_classes as u64, self.latent_dim as u64, self.attribute_dim as u64, self.seed] {
            h.update(v.to_le_bytes());
        }
        h.finalize()[..8].try_into().unwrap()
    }
}

/// Deterministic stand-in generator and visual estimator.
///
/// Class `k` has a base attribute `b_k ~ U[-1, 1]^Na` and a mixing matrix
/// `A_k` (`Na x d`, entries `N(0, 0.1/sqrt(d))` in variance). The estimated
/// attribute of `(k, z)` is `clamp(b_k + A_k z, -3, 3)`. Images carry no
/// pixels: the payload encodes `(k, z)` losslessly.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticBackendSpec,
    fingerprint: [u8; 8],
    bases: Vec<Vec<f64>>,
    /// Per class, row-major `Na x d`.
    mixing: Vec<Vec<f64>>,
}

const SYNTH_MAGIC: &[u8; 4] = b"SYNG";

impl SyntheticBackend {
    pub fn new(spec: SyntheticBackendSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.latent_dim == 0 || spec.attribute_dim == 0 {
            return Err(Error::Config("synthetic backend dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.mixing_variance().sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut bases = Vec::with_capacity(spec.num_classes);
        let mut mixing = Vec::with_capacity(spec.num_classes);
        for _ in 0..spec.num_classes {
            bases.push((0..spec.attribute_dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
            mixing.push(
                (0..spec.attribute_dim * spec.latent_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect(),
            );
        }
        Ok(Self {
            fingerprint: spec.fingerprint(),
            spec,
            bases,
            mixing,
        })
    }

    pub fn spec(&self) -> &SyntheticBackendSpec {
        &self.spec
    }

    pub fn base_attribute(&self, class_id: usize) -> &[f64] {
        &self.bases[class_id]
    }

    /// Row-major `Na x d` mixing matrix of a class.
    pub fn mixing_matrix(&self, class_id: usize) -> &[f64] {
        &self.mixing[class_id]
    }

    /// The unclamped affine map `b_k + A_k z`.
    pub fn affine_attribute(&self, class_id: usize, latent: &[f64]) -> Vec<f64> {
        let d = self.spec.latent_dim;
        let a = &self.mixing[class_id];
        self.bases[class_id]
            .iter()
            .enumerate()
            .map(|(i, b)| b + a[i * d..(i + 1) * d].iter().zip(latent).map(|(w, z)| w * z).sum::<f64>())
            .collect()
    }

    /// Attribute of a generator vector without going through an image.
    pub fn attribute_of(&self, gv: &GeneratorVector) -> Result<AttributeVector> {
        gv.validate(self.spec.num_classes, self.spec.latent_dim)?;
        Ok(AttributeVector(
            self.affine_attribute(gv.class_id, &gv.latent)
                .into_iter()
                .map(|v| v.clamp(-SYNTHETIC_ATTRIBUTE_BOUND, SYNTHETIC_ATTRIBUTE_BOUND))
                .collect(),
        ))
    }

    pub fn encode(&self, gv: &GeneratorVector) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * gv.latent.len());
        out.extend_from_slice(SYNTH_MAGIC);
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&(gv.class_id as u32).to_le_bytes());
        out.extend_from_slice(&(gv.latent.len() as u32).to_le_bytes());
        for z in &gv.latent {
            out.extend_from_slice(&z.to_le_bytes());
        }
        out
    }

    /// Recovers `(class, latent)` from a payload produced by this backend.
    pub fn decode(&self, payload: &[u8]) -> Result<GeneratorVector> {
        if payload.len() < 20 || &payload[..4] != SYNTH_MAGIC {
            return Err(Error::Format("not a synthetic-backend image".into()));
        }
        if payload[4..12] != self.fingerprint {
            return Err(Error::Format("image was produced by a different synthetic backend".into()));
        }
        let class_id = u32::from_le_bytes(payload[12..16].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(payload[16..20].try_into().unwrap()) as usize;
        let body = &payload[20..];
        if body.len() != 8 * d {
            return Err(Error::Format("truncated synthetic payload".into()));
        }
        let latent = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let gv = GeneratorVector::new(class_id, latent);
        gv.validate(self.spec.num_classes, self.spec.latent_dim)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(gv)
    }
}

impl GeneratorBackend for SyntheticBackend {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn generate(&self, gv: &GeneratorVector) -> Result<ImageHandle> {
        gv.validate(self.spec.num_classes, self.spec.latent_dim)?;
        ImageHandle::new(self.encode(gv), 1, 1, 1)
    }
}

impl VisualAttributeEstimator for SyntheticBackend {
    fn attribute_dim(&self) -> usize {
        self.spec.attribute_dim
    }

    fn estimate(&self, image: &ImageHandle) -> Result<AttributeVector> {
        let gv = self.decode(&image.payload)?;
        self.attribute_of(&gv)
    }
}

/// Draws `n` generator vectors (uniform class, standard-normal latent), renders
/// them and records the estimated attributes. Deterministic for a given seed.
///
/// Latents are rounded to f32 precision at draw time so corpus files
/// reproduce them exactly.
pub fn sample_generator_space<B, E>(backend: &B, estimator: &E, n: usize, seed: u64) -> Result<Vec<SamplePair>>
where
    B: GeneratorBackend + ?Sized,
    E: VisualAttributeEstimator + ?Sized,
{
    if n == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let (k, d) = (backend.num_classes(), backend.latent_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<GeneratorVector> = (0..n)
        .map(|_| {
            let class_id = rng.random_range(0..k);
            let latent = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    f64::from(z as f32)
                })
                .collect();
            GeneratorVector::new(class_id, latent)
        })
        .collect();

    let chunk = backend.capabilities().max_concurrent_requests.max(1);
    let mut pairs = Vec::with_capacity(n);
    for batch in draws.chunks(chunk.max(64)) {
        let images = backend.generate_batch(batch);
        let mut ok_images = Vec::with_capacity(images.len());
        for img in images {
            match img {
                Ok(i) => ok_images.push(i),
                Err(e) => {
                    return Err(partial(pairs, batch, ok_images, estimator, e));
                }
            }
        }
        let attrs = estimator.estimate_batch(&ok_images);
        for (gv, attr) in batch.iter().zip(attrs) {
            match attr {
                Ok(a) => pairs.push(SamplePair {
                    generator: gv.clone(),
                    attributes: a,
                }),
                Err(e) => {
                    return Err(Error::PartialSampling {
                        completed: pairs,
                        source: Box::new(e),
                    })
                }
            }
        }
    }
    Ok(pairs)
}

/// Builds the partial-failure error, salvaging the draws in `batch` whose
/// images were generated before the failure.
fn partial<E: VisualAttributeEstimator + ?Sized>(
    mut completed: Vec<SamplePair>,
    batch: &[GeneratorVector],
    images: Vec<ImageHandle>,
    estimator: &E,
    err: Error,
) -> Error {
    for (gv, img) in batch.iter().zip(&images) {
        match estimator.estimate(img) {
            Ok(a) => completed.push(SamplePair {
                generator: gv.clone(),
                attributes: a,
            }),
            Err(_) => break,
        }
    }
    Error::PartialSampling {
        completed,
        source: Box::new(err),
    }
}

pub fn write_pairs_jsonl<W: Write>(mut w: W, pairs: &[SamplePair]) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<SamplePair>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in r.lines() {
        let line = line?;
        let len = line.len() + 1;
        if !line.trim().is_empty() {
            let pair: SamplePair = serde_json::from_str(&line).map_err(|e| Error::Parse {
                artifact: "sample pair corpus".into(),
                offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            out.push(pair);
        }
        offset += len;
    }
    Ok(out)
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[SamplePair]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_pairs_jsonl(std::io::BufWriter::new(f), pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SamplePair>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|source| Error::Load {
        artifact: "sample pair corpus".into(),
        path: path.to_path_buf(),
        source,
    })?;
    read_pairs_jsonl(std::io::BufReader::new(f))
}

/// SHA-256 of the corpus in its JSON Lines encoding, hex encoded.
pub fn corpus_hash(pairs: &[SamplePair]) -> String {
    let mut buf = Vec::new();
    write_pairs_jsonl(&mut buf, pairs).expect("in-memory write");
    hex::encode(Sha256::digest(&buf))
}
