//! Tensor containers, in-memory batch types and dataset manifests.

mod manifest;
mod npy;

pub(crate) use manifest::read_json;
pub use manifest::{
    load_manifest, load_split, load_suite, validate_manifest, DatasetManifest, LoadedSplit,
    SuiteManifest,
};
pub use npy::{
    decode_f32, decode_header, decode_i64, encode_f32, encode_i64, read_header, read_labels,
    read_tensor, write_labels, write_tensor, Dtype, NpyHeader, TensorFile,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-pooling activation maps: `samples × channels × size × size`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    samples: usize,
    channels: usize,
    size: usize,
    values: Vec<f32>,
}

impl ActivationBatch {
    pub fn new(samples: usize, channels: usize, size: usize, values: Vec<f32>) -> Result<Self> {
        let shape = vec![samples, channels, size, size];
        if samples == 0 || channels == 0 || size == 0 {
            return Err(Error::InvalidShape {
                shape,
                reason: "activation dimensions must be at least 1".into(),
            });
        }
        if samples * channels * size * size != values.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} values", values.len()),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "activation batch".into(),
                index,
            });
        }
        Ok(ActivationBatch {
            samples,
            channels,
            size,
            values,
        })
    }

    pub fn from_tensor(t: TensorFile) -> Result<Self> {
        match t.shape[..] {
            [n, c, h, w] if h == w => Self::new(n, c, h, t.data),
            _ => Err(Error::InvalidShape {
                shape: t.shape,
                reason: "activations must be rank 4 with square spatial maps".into(),
            }),
        }
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile {
            shape: vec![self.samples, self.channels, self.size, self.size],
            data: self.values.clone(),
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Spatial edge length `k`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn map_len(&self) -> usize {
        self.size * self.size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// All maps of sample `i`, concatenated.
    pub fn sample(&self, i: usize) -> &[f32] {
        let stride = self.channels * self.map_len();
        &self.values[i * stride..(i + 1) * stride]
    }

    pub fn map(&self, i: usize, c: usize) -> &[f32] {
        let m = self.map_len();
        let start = (i * self.channels + c) * m;
        &self.values[start..start + m]
    }
}

/// Which statistic (or transformation) produced a feature batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    RawGap,
    Mean,
    Max,
    Std,
    Median,
    Entropy,
    Shaped,
}

/// Per-sample feature vectors: `samples × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    samples: usize,
    dim: usize,
    values: Vec<f64>,
    kind: StatKind,
}

impl FeatureBatch {
    pub fn new(samples: usize, dim: usize, values: Vec<f64>, kind: StatKind) -> Result<Self> {
        if samples == 0 || dim == 0 {
            return Err(Error::InvalidShape {
                shape: vec![samples, dim],
                reason: "feature dimensions must be at least 1".into(),
            });
        }
        if samples * dim != values.len() {
            return Err(Error::InvalidShape {
                shape: vec![samples, dim],
                reason: format!("holds {} values", values.len()),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature batch".into(),
                index,
            });
        }
        if kind == StatKind::Std {
            if let Some(index) = values.iter().position(|v| *v < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "std features must be non-negative (index {index})"
                )));
            }
        }
        Ok(FeatureBatch {
            samples,
            dim,
            values,
            kind,
        })
    }

    /// Build from a rank-2 tensor. Values widen losslessly from f32.
    pub fn from_tensor(t: &TensorFile, kind: StatKind) -> Result<Self> {
        match t.shape[..] {
            [n, d] => Self::new(n, d, t.data.iter().map(|&v| f64::from(v)).collect(), kind),
            _ => Err(Error::InvalidShape {
                shape: t.shape.clone(),
                reason: "features must be rank 2".into(),
            }),
        }
    }

    /// Narrow to float32 for storage. Fails if a value overflows f32.
    pub fn to_tensor(&self) -> Result<TensorFile> {
        let data: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature batch narrowed to f32".into(),
                index,
            });
        }
        Ok(TensorFile {
            shape: vec![self.samples, self.dim],
            data,
        })
    }

    pub(crate) fn from_parts(samples: usize, dim: usize, values: Vec<f64>, kind: StatKind) -> Self {
        debug_assert_eq!(samples * dim, values.len());
        FeatureBatch {
            samples,
            dim,
            values,
            kind,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StatKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: StatKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    /// Column-wise sample mean, accumulated in sample order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.samples as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Apply `f` to every value, keeping the shape.
    pub fn map_values(&self, kind: StatKind, f: impl Fn(f64) -> f64) -> Self {
        FeatureBatch::from_parts(
            self.samples,
            self.dim,
            self.values.iter().map(|&v| f(v)).collect(),
            kind,
        )
    }
}
