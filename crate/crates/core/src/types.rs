//! Domain value types shared by every stage, plus the attribute divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializes `Vec<f64>` as a list of 32-bit floats.
///
/// In-memory math runs in f64; files and the bridge wire carry f32.
pub(crate) mod f32_wire {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let narrow: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        narrow.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let narrow = Vec::<f32>::deserialize(d)?;
        Ok(narrow.into_iter().map(f64::from).collect())
    }
}

/// A point in the aligned attribute space (valence, arousal by default).
///
/// The dimension is a runtime property so other attribute spaces plug in
/// without code changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector(#[serde(with = "f32_wire")] pub Vec<f64>);

impl AttributeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("attribute vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

impl From<Vec<f64>> for AttributeVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Input to a class-conditional generator: a class id plus a continuous latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorVector {
    pub class_id: usize,
    #[serde(with = "f32_wire")]
    pub latent: Vec<f64>,
}

impl GeneratorVector {
    pub fn new(class_id: usize, latent: Vec<f64>) -> Self {
        Self { class_id, latent }
    }

    /// Checks the vector against a generator with `num_classes` classes and
    /// `latent_dim` latent entries.
    pub fn validate(&self, num_classes: usize, latent_dim: usize) -> Result<()> {
        if self.class_id >= num_classes {
            return Err(Error::Domain(format!(
                "class id {} out of range for {} classes",
                self.class_id, num_classes
            )));
        }
        if self.latent.len() != latent_dim {
            return Err(Error::dim(latent_dim, self.latent.len()));
        }
        if self.latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latent has non-finite entries".into()));
        }
        Ok(())
    }
}

/// A generator vector and the attributes the visual estimator assigned to
/// the image it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub generator: GeneratorVector,
    pub attributes: AttributeVector,
}

/// Flat JSON Lines record: `{class_id, latent, attributes}`.
#[derive(Serialize, Deserialize)]
struct SamplePairRecord {
    class_id: usize,
    #[serde(with = "f32_wire")]
    latent: Vec<f64>,
    #[serde(with = "f32_wire")]
    attributes: Vec<f64>,
}

impl Serialize for SamplePair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SamplePairRecord {
            class_id: self.generator.class_id,
            latent: self.generator.latent.clone(),
            attributes: self.attributes.0.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SamplePair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SamplePairRecord::deserialize(d)?;
        Ok(SamplePair {
            generator: GeneratorVector::new(r.class_id, r.latent),
            attributes: AttributeVector(r.attributes),
        })
    }
}

/// Mono audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioSegment {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("audio segment has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Opaque image produced by a generator backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageHandle {
    pub payload: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
}

impl ImageHandle {
    pub fn new(payload: Vec<u8>, width: u32, height: u32, channels: u32) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Domain("image dimensions must be positive".into()));
        }
        Ok(Self {
            payload,
            width,
            height,
            channels,
        })
    }
}

/// Euclidean distance between two attribute vectors.
pub fn divergence(a: &AttributeVector, b: &AttributeVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim()));
    }
    Ok(l2_distance(&a.0, &b.0))
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn av(v: &[f64]) -> AttributeVector {
        AttributeVector(v.to_vec())
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(divergence(&av(&[0.3, -0.5]), &av(&[0.3, -0.5])).unwrap(), 0.0);
        assert_eq!(divergence(&av(&[1.0, 0.0]), &av(&[0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(divergence(&av(&[3.0, 4.0]), &av(&[0.0, 0.0])).unwrap(), 5.0);
    }

    #[test]
    fn divergence_rejects_length_mismatch() {
        let err = divergence(&av(&[1.0]), &av(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 1, actual: 2 }));
    }

    #[test]
    fn non_finite_attributes_rejected() {
        assert!(AttributeVector::new(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn generator_vector_bounds() {
        let gv = GeneratorVector::new(3, vec![0.0; 4]);
        assert!(gv.validate(4, 4).is_ok());
        assert!(matches!(gv.validate(3, 4), Err(Error::Domain(_))));
        assert!(matches!(gv.validate(4, 5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sample_pair_jsonl_shape() {
        let p = SamplePair {
            generator: GeneratorVector::new(7, vec![0.5, -1.0]),
            attributes: av(&[0.25, 0.75]),
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"class_id":7,"latent":[0.5,-1.0],"attributes":[0.25,0.75]}"#);
        let back: SamplePair = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn vec2() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3)
    }

    proptest! {
        #[test]
        fn divergence_is_a_metric(a in vec2(), b in vec2(), c in vec2()) {
            let (a, b, c) = (av(&a), av(&b), av(&c));
            let ab = divergence(&a, &b).unwrap();
            let ba = divergence(&b, &a).unwrap();
            let bc = divergence(&b, &c).unwrap();
            let ac = divergence(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(divergence(&a, &a).unwrap(), 0.0);
        }
    }
}
