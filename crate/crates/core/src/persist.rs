//! JSON artifact persistence. Weight arrays are base64 strings of
//! little-endian f32 values, row-major.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("bad base64 weights: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("weight payload is not a whole number of f32".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weights: String,
    pub bias: String,
}

impl LayerRecord {
    pub fn from_layer(layer: &Dense) -> Self {
        Self {
            input: layer.input_dim(),
            output: layer.output_dim(),
            activation: layer.activation,
            weights: encode_f32(layer.weights.iter().copied()),
            bias: encode_f32(layer.bias.iter().copied()),
        }
    }

    pub fn to_layer(&self) -> Result<Dense> {
        let w = decode_f32(&self.weights)?;
        let b = decode_f32(&self.bias)?;
        if w.len() != self.input * self.output {
            return Err(Error::dim(self.input * self.output, w.len()));
        }
        if b.len() != self.output {
            return Err(Error::dim(self.output, b.len()));
        }
        Ok(Dense {
            weights: Array2::from_shape_vec((self.output, self.input), w)
                .map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(b),
            activation: self.activation,
        })
    }
}

pub fn check_version(found: u32, artifact: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            artifact: artifact.to_string(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON artifact. Syntax and schema errors carry the byte offset; a
/// top-level `version` other than [`FORMAT_VERSION`] is a version error.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>, artifact: &str) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Load {
        artifact: artifact.to_string(),
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&bytes, artifact)
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], artifact: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e, artifact))?;
    if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
        check_version(v as u32, artifact)?;
    }
    serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e, artifact))
}

fn parse_error(bytes: &[u8], e: &serde_json::Error, artifact: &str) -> Error {
    Error::Parse {
        artifact: artifact.to_string(),
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(line.wrapping_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(bytes.len())
}
