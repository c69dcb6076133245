//! Classifier head, logits and scalar OOD scores.
//!
//! Every [`ScoreSet`] follows one sign convention: higher means more
//! in-distribution. The energy score is therefore reported in its negated
//! form `log Σ_c exp(f_c)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{FeatureBatch, TensorFile};

/// Final linear layer `f(h) = Wᵀh + b` with `W` stored `inputs × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    inputs: usize,
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(inputs: usize, classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if inputs == 0 || classes < 2 {
            return Err(Error::InvalidShape {
                shape: vec![inputs, classes],
                reason: "head needs at least one input and two classes".into(),
            });
        }
        if weights.len() != inputs * classes {
            return Err(Error::shape(
                "head weights",
                format!("({inputs}, {classes})"),
                format!("holds {} values", weights.len()),
            ));
        }
        if bias.len() != classes {
            return Err(Error::shape(
                "head bias",
                "head weights",
                format!(
                    "bias has {} entries, weights have {classes} columns",
                    bias.len()
                ),
            ));
        }
        if let Some(index) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "classifier head".into(),
                index,
            });
        }
        Ok(ClassifierHead {
            inputs,
            classes,
            weights,
            bias,
        })
    }

    pub fn from_tensors(weights: &TensorFile, bias: &TensorFile) -> Result<Self> {
        let (n, c) = match weights.shape[..] {
            [n, c] => (n, c),
            _ => {
                return Err(Error::InvalidShape {
                    shape: weights.shape.clone(),
                    reason: "head weights must be rank 2".into(),
                })
            }
        };
        if bias.shape != [c] {
            return Err(Error::shape(
                format!("head_bias {:?}", bias.shape),
                format!("head_weights {:?}", weights.shape),
                "bias must have shape (C,)",
            ));
        }
        Self::new(
            n,
            c,
            weights.data.iter().map(|&v| f64::from(v)).collect(),
            bias.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn to_tensors(&self) -> (TensorFile, TensorFile) {
        (
            TensorFile {
                shape: vec![self.inputs, self.classes],
                data: self.weights.iter().map(|&v| v as f32).collect(),
            },
            TensorFile {
                shape: vec![self.classes],
                data: self.bias.iter().map(|&v| v as f32).collect(),
            },
        )
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Row-major `inputs × classes`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, input: usize, class: usize) -> f64 {
        self.weights[input * self.classes + class]
    }

    /// `Wᵀ1`: the per-class column sums of `W`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.classes];
        for row in self.weights.chunks_exact(self.classes) {
            for (s, w) in sums.iter_mut().zip(row) {
                *s += w;
            }
        }
        sums
    }

    /// `Wᵀv` for an input-space vector `v` (no bias).
    pub fn apply_weights(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        self.accumulate(v, &mut out);
        out
    }

    fn accumulate(&self, h: &[f64], out: &mut [f64]) {
        for (hj, row) in h.iter().zip(self.weights.chunks_exact(self.classes)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += hj * w;
            }
        }
    }

    /// Same bias, weights replaced elementwise by `f(j, c, w)`.
    pub(crate) fn map_weights(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(idx, &w)| f(idx / self.classes, idx % self.classes, w))
            .collect();
        ClassifierHead {
            inputs: self.inputs,
            classes: self.classes,
            weights,
            bias: self.bias.clone(),
        }
    }
}

/// Per-sample logits, `samples × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    samples: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitBatch {
    pub fn new(samples: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if samples * classes != values.len() || samples == 0 || classes == 0 {
            return Err(Error::InvalidShape {
                shape: vec![samples, classes],
                reason: format!("holds {} values", values.len()),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "logits".into(),
                index,
            });
        }
        Ok(LogitBatch {
            samples,
            classes,
            values,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    /// Class-wise mean over samples.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.classes];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.samples as f64);
        acc
    }

    /// Argmax per sample, ties to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Energy,
    Msp,
    MspTemperature,
}

/// Per-sample OOD scores for one split. Higher = more in-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub split_name: String,
    pub score_kind: ScoreKind,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(
        split_name: impl Into<String>,
        score_kind: ScoreKind,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let split_name = split_name.into();
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("scores of `{split_name}`"),
                index,
            });
        }
        Ok(ScoreSet {
            split_name,
            score_kind,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// `f = Wᵀh + b` per sample.
pub fn logits(features: &FeatureBatch, head: &ClassifierHead) -> Result<LogitBatch> {
    if features.dim() != head.inputs() {
        return Err(Error::shape(
            format!("features (width {})", features.dim()),
            format!("head (inputs {})", head.inputs()),
            "feature width must equal head input dimension",
        ));
    }
    let c = head.classes();
    let mut values = vec![0.0; features.samples() * c];
    values
        .par_chunks_mut(c)
        .zip(features.values().par_chunks(features.dim()))
        .for_each(|(out, h)| {
            head.accumulate(h, out);
            for (o, b) in out.iter_mut().zip(head.bias()) {
                *o += b;
            }
        });
    LogitBatch::new(features.samples(), c, values)
}

/// Numerically stable `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

pub fn energy_score(logits: &LogitBatch, split_name: &str) -> Result<ScoreSet> {
    let scores = logits
        .values()
        .par_chunks(logits.classes())
        .map(log_sum_exp)
        .collect();
    ScoreSet::new(split_name, ScoreKind::Energy, scores)
}

/// Maximum softmax probability of `logits / temperature`.
///
/// `temperature = 1` is plain MSP; `temperature = 1000` is the temperature
/// half of ODIN ("ODIN-T"), without input perturbation.
pub fn msp_score(logits: &LogitBatch, temperature: f64, split_name: &str) -> Result<ScoreSet> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::NonpositiveTemperature(temperature));
    }
    let kind = if temperature == 1.0 {
        ScoreKind::Msp
    } else {
        ScoreKind::MspTemperature
    };
    let scores = logits
        .values()
        .par_chunks(logits.classes())
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| ((v - m) / temperature).exp()).sum();
            1.0 / denom
        })
        .collect();
    ScoreSet::new(split_name, kind, scores)
}

/// Fraction of samples whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &LogitBatch, labels: &[i64]) -> Result<f64> {
    if labels.len() != logits.samples() {
        return Err(Error::shape(
            format!("labels ({})", labels.len()),
            format!("logits ({} samples)", logits.samples()),
            "label count must equal sample count",
        ));
    }
    let classes = logits.classes();
    let mut correct = 0usize;
    for (index, (row, &label)) in logits.rows().zip(labels).enumerate() {
        if label < 0 || label as usize >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        if argmax(row) == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}
