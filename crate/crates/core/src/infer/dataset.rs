//! Labeled datasets and raw input blobs.
//!
//! Dataset file, all little-endian: `u32` count, `u32` c, `u32` h, `u32` w,
//! then per sample a `u32` label followed by `c·h·w` `f32` values. An input
//! blob is bare `f32` samples back to back.

use std::path::Path;

use crate::error::{Error, Result};
use crate::infer::graph::Shape;
use crate::infer::manifest::{f32_from_le_bytes, f32_to_le_bytes};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: Shape,
    pub labels: Vec<u32>,
    pub inputs: Vec<Vec<f32>>,
}

fn u32_at(bytes: &[u8], i: usize) -> Option<u32> {
    bytes
        .get(i * 4..i * 4 + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::Parse(format!("dataset: {d}"));
        let header: Vec<usize> = (0..4)
            .map(|i| u32_at(bytes, i).map(|v| v as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("truncated header"))?;
        let (n, shape) = (header[0], Shape::new(header[1], header[2], header[3]));
        let rec = 4 * (1 + shape.len());
        if bytes.len() != 16 + n * rec {
            return Err(bad(&format!(
                "{} bytes do not hold {n} samples of {shape}",
                bytes.len()
            )));
        }
        let mut labels = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for r in bytes[16..].chunks_exact(rec) {
            labels.push(u32::from_le_bytes([r[0], r[1], r[2], r[3]]));
            inputs.push(f32_from_le_bytes(&r[4..])?);
        }
        Ok(Dataset {
            shape,
            labels,
            inputs,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [self.len(), self.shape.c, self.shape.h, self.shape.w] {
            out.extend((v as u32).to_le_bytes());
        }
        for (l, x) in self.labels.iter().zip(&self.inputs) {
            out.extend(l.to_le_bytes());
            out.extend(f32_to_le_bytes(x));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Splits a bare `f32` blob into samples of `shape`.
pub fn split_samples(values: &[f32], shape: Shape) -> Result<Vec<Vec<f32>>> {
    let n = shape.len();
    if n == 0 || !values.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch {
            layer: "input".into(),
            detail: format!("{} values are not a whole number of {shape} samples", values.len()),
        });
    }
    Ok(values.chunks_exact(n).map(<[f32]>::to_vec).collect())
}
