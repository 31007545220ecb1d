//! Binary feature matrix file: 16-byte little-endian header
//! `{magic "DSFT", version u32, rows u32, cols u32}` then row-major f32.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSFT";
pub const VERSION: u32 = 1;

pub fn write_matrix<W: Write>(mut w: W, rows: &[Vec<f64>]) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("ragged feature matrix".into()));
    }
    let mut buf = Vec::with_capacity(16 + rows.len() * cols * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing DSFT header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Version {
            artifact: "feature matrix".into(),
            found: version,
            expected: VERSION,
        });
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "feature matrix body is {} bytes, header declares {}x{}",
            body.len(),
            rows,
            cols
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if cols == 0 {
        return Ok(vec![Vec::new(); rows]);
    }
    Ok(values.chunks_exact(cols).map(<[f64]>::to_vec).collect())
}

pub fn save(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_matrix(std::io::BufWriter::new(f), rows)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let f = std::fs::File::open(path)?;
    read_matrix(std::io::BufReader::new(f))
}
