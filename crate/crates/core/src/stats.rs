//! Per-channel statistics of activation maps.
//!
//! Every statistic reduces one `k × k` map to a scalar. Reductions accumulate
//! in f64 in the map's row-major order, so results do not depend on how the
//! batch is split across threads.

use rayon::prelude::*;

use crate::tensorio::{ActivationBatch, FeatureBatch, StatKind};

/// Mean, maximum and population standard deviation of every map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: FeatureBatch,
    pub max: FeatureBatch,
    pub std: FeatureBatch,
}

impl ChannelStats {
    pub fn samples(&self) -> usize {
        self.mean.samples()
    }

    pub fn channels(&self) -> usize {
        self.mean.dim()
    }
}

pub(crate) fn map_mean(map: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for &v in map {
        sum += f64::from(v);
    }
    sum / map.len() as f64
}

pub(crate) fn map_max(map: &[f32]) -> f64 {
    let mut best = map[0];
    for &v in &map[1..] {
        if v > best {
            best = v;
        }
    }
    f64::from(best)
}

pub(crate) fn map_std(map: &[f32], mean: f64) -> f64 {
    let mut acc = 0.0f64;
    for &v in map {
        let d = f64::from(v) - mean;
        acc += d * d;
    }
    (acc / map.len() as f64).sqrt()
}

pub(crate) fn map_median(map: &[f32]) -> f64 {
    let mut sorted = map.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let m = sorted.len();
    if m % 2 == 1 {
        f64::from(sorted[m / 2])
    } else {
        (f64::from(sorted[m / 2 - 1]) + f64::from(sorted[m / 2])) / 2.0
    }
}

/// Shannon entropy (nats) of the map after clamping negatives to zero and
/// normalising to a distribution. All-zero maps have entropy 0.
pub(crate) fn map_entropy(map: &[f32]) -> f64 {
    let mut total = 0.0f64;
    for &v in map {
        total += f64::from(v.max(0.0));
    }
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0f64;
    for &v in map {
        let v = f64::from(v.max(0.0));
        if v > 0.0 {
            let p = v / total;
            h -= p * p.ln();
        }
    }
    // a single non-zero entry gives -(1 * ln 1) = -0.0
    h.max(0.0)
}

fn reduce(
    acts: &ActivationBatch,
    kind: StatKind,
    f: impl Fn(&[f32]) -> f64 + Sync,
) -> FeatureBatch {
    let n = acts.channels();
    let m = acts.map_len();
    let mut out = vec![0.0; acts.samples() * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (o, map) in row.iter_mut().zip(acts.sample(i).chunks_exact(m)) {
            *o = f(map);
        }
    });
    FeatureBatch::from_parts(acts.samples(), n, out, kind)
}

/// Global average pooling.
pub fn channel_mean(acts: &ActivationBatch) -> FeatureBatch {
    reduce(acts, StatKind::Mean, map_mean)
}

pub fn channel_max(acts: &ActivationBatch) -> FeatureBatch {
    reduce(acts, StatKind::Max, map_max)
}

/// Population standard deviation (divides by `k²`).
pub fn channel_std(acts: &ActivationBatch) -> FeatureBatch {
    reduce(acts, StatKind::Std, |map| map_std(map, map_mean(map)))
}

/// Global median pooling; even counts average the two middle values.
pub fn channel_median(acts: &ActivationBatch) -> FeatureBatch {
    reduce(acts, StatKind::Median, map_median)
}

pub fn channel_entropy(acts: &ActivationBatch) -> FeatureBatch {
    reduce(acts, StatKind::Entropy, map_entropy)
}

/// Mean, max and std in one sweep over the batch; identical to the three
/// individual reductions.
pub fn stats_from_batch(acts: &ActivationBatch) -> ChannelStats {
    let n = acts.channels();
    let m = acts.map_len();
    let rows: Vec<[Vec<f64>; 3]> = (0..acts.samples())
        .into_par_iter()
        .map(|i| {
            let mut mean = Vec::with_capacity(n);
            let mut max = Vec::with_capacity(n);
            let mut std = Vec::with_capacity(n);
            for map in acts.sample(i).chunks_exact(m) {
                let mu = map_mean(map);
                mean.push(mu);
                max.push(map_max(map));
                std.push(map_std(map, mu));
            }
            [mean, max, std]
        })
        .collect();
    let mut mean = Vec::with_capacity(acts.samples() * n);
    let mut max = Vec::with_capacity(acts.samples() * n);
    let mut std = Vec::with_capacity(acts.samples() * n);
    for [a, b, c] in rows {
        mean.extend(a);
        max.extend(b);
        std.extend(c);
    }
    let s = acts.samples();
    ChannelStats {
        mean: FeatureBatch::from_parts(s, n, mean, StatKind::Mean),
        max: FeatureBatch::from_parts(s, n, max, StatKind::Max),
        std: FeatureBatch::from_parts(s, n, std, StatKind::Std),
    }
}
