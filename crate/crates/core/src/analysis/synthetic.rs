//! Synthetic activation generator for desk-scale checks.
//!
//! Every activation is an independent draw `φ(mean + std·z)` with `z` standard
//! normal and `φ` either ReLU or the identity. With ReLU, a larger spread gives
//! sparser maps with taller peaks, which is the regime where channel maxima and
//! spreads separate ID from OOD better than channel means do.
//!
//! Streams derived from the seed: 0 head, 1 ID, 2 OOD, 3 ID training split,
//! 4 proxy validation split. Activation element `i` (flat, C order) of a split
//! is normal variate `i` of that split's stream, so generation parallelises
//! without changing a single bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use crate::error::{Error, Result};
use crate::scoring::{logits, ClassifierHead};
use crate::stats::channel_mean;
use crate::tensorio::ActivationBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    None,
}

fn default_classes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_channels: usize,
    pub size: usize,
    /// Samples per split.
    pub samples: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub id_map_mean: f64,
    pub id_map_std: f64,
    pub ood_map_mean: f64,
    pub ood_map_std: f64,
    pub post_nonlinearity: Nonlinearity,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Split {
    Id = 1,
    Ood = 2,
    IdTrain = 3,
    Proxy = 4,
}

const HEAD_STREAM: u64 = 0;

impl SyntheticSpec {
    /// The configuration used by the statistical checks: n = 128, k = 4,
    /// 2,000 samples per split, spiky ID maps and flatter OOD maps.
    pub fn spiky_maps() -> Self {
        SyntheticSpec {
            n_channels: 128,
            size: 4,
            samples: 2000,
            classes: 10,
            id_map_mean: 0.1,
            id_map_std: 0.8,
            ood_map_mean: 0.05,
            ood_map_std: 0.5,
            post_nonlinearity: Nonlinearity::Relu,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_channels == 0 || self.size == 0 || self.samples == 0 {
            return bad("n_channels, size and samples must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        for (name, v) in [
            ("id_map_mean", self.id_map_mean),
            ("ood_map_mean", self.ood_map_mean),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("id_map_std", self.id_map_std),
            ("ood_map_std", self.ood_map_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    fn rng(&self) -> CounterRng {
        CounterRng::new(self.seed)
    }

    pub(crate) fn draw_head(&self) -> Result<ClassifierHead> {
        let n = self.n_channels;
        let c = self.classes;
        let scale = 1.0 / (n as f64).sqrt();
        let mut rng = self.rng().stream(HEAD_STREAM);
        let mut weights = vec![0.0; n * c];
        let mut column = vec![0.0; n];
        for class in 0..c {
            // redraw the whole column until it sums to something nonnegative
            loop {
                for w in column.iter_mut() {
                    *w = scale * rng.next_normal();
                }
                if column.iter().sum::<f64>() >= 0.0 {
                    break;
                }
            }
            for (j, w) in column.iter().enumerate() {
                weights[j * c + class] = *w;
            }
        }
        ClassifierHead::new(n, c, weights, vec![0.0; c])
    }

    pub(crate) fn draw_split(&self, split: Split) -> Result<ActivationBatch> {
        let (mean, std) = match split {
            Split::Id | Split::IdTrain => (self.id_map_mean, self.id_map_std),
            Split::Ood | Split::Proxy => (self.ood_map_mean, self.ood_map_std),
        };
        let rng = self.rng().stream(split as u64);
        let relu = self.post_nonlinearity == Nonlinearity::Relu;
        let len = self.samples * self.n_channels * self.size * self.size;
        let values: Vec<f32> = (0..len as u64)
            .into_par_iter()
            .map(|i| {
                let v = mean + std * rng.normal_at(i);
                let v = if relu { v.max(0.0) } else { v };
                v as f32
            })
            .collect();
        ActivationBatch::new(self.samples, self.n_channels, self.size, values)
    }
}

/// The committed seed list for Monte-Carlo checks: `1..=count`.
pub fn theory_seeds(count: u64) -> Vec<u64> {
    (1..=count).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub id: ActivationBatch,
    pub ood: ActivationBatch,
    pub head: ClassifierHead,
    /// Predicted class of every ID sample under the raw GAP head.
    pub labels: Vec<i64>,
}

pub(crate) fn labels_for(acts: &ActivationBatch, head: &ClassifierHead) -> Result<Vec<i64>> {
    Ok(logits(&channel_mean(acts), head)?
        .predictions()
        .into_iter()
        .map(|p| p as i64)
        .collect())
}

/// Draw an ID/OOD pair and a head whose columns all have nonnegative sums.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let head = spec.draw_head()?;
    let id = spec.draw_split(Split::Id)?;
    let ood = spec.draw_split(Split::Ood)?;
    let labels = labels_for(&id, &head)?;
    Ok(SyntheticData {
        id,
        ood,
        head,
        labels,
    })
}
