//! Feature shaping: the DAVIS statistic substitutions, the ReAct / DICE /
//! ASH-S / SCALE baselines, and left-to-right composition of stages.
//!
//! DAVIS stages consume [`ChannelStats`] and therefore must come first in a
//! pipeline. Fit-time artifacts (the ReAct clip value and the DICE mask) are
//! computed on the ID features as they look at that point of the pipeline,
//! so a DAVIS stage upstream changes what they are fitted on.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{logits, ClassifierHead, LogitBatch};
use crate::stats::{channel_mean, stats_from_batch, ChannelStats};
use crate::tensorio::{
    read_tensor, write_tensor, ActivationBatch, FeatureBatch, StatKind, TensorFile,
};

/// How a percentile is read off a sorted sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileRule {
    /// Linear interpolation at zero-based position `(p/100)·(m−1)`.
    #[default]
    Linear,
    /// Nearest rank: the value at one-based rank `ceil(p/100·m)`.
    Nearest,
}

fn check_percentile(p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=100.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "percentile must lie in [0, 100], got {p}"
        )))
    }
}

/// Percentile of an ascending-sorted, non-empty slice.
pub fn percentile_sorted(sorted: &[f64], p: f64, rule: PercentileRule) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    match rule {
        PercentileRule::Linear => {
            let pos = (p / 100.0) * (m - 1) as f64;
            let lo = (pos.floor() as usize).min(m - 1);
            let hi = (lo + 1).min(m - 1);
            let t = pos - lo as f64;
            let (a, b) = (sorted[lo], sorted[hi]);
            let diff = b - a;
            // two-sided lerp keeps the result inside [a, b] for t near 1
            if t >= 0.5 {
                b - diff * (1.0 - t)
            } else {
                a + diff * t
            }
        }
        PercentileRule::Nearest => {
            let rank = ((p / 100.0) * m as f64).ceil() as usize;
            sorted[rank.clamp(1, m) - 1]
        }
    }
}

/// Percentile of an unsorted slice.
pub fn percentile(values: &[f64], p: f64, rule: PercentileRule) -> Result<f64> {
    check_percentile(p)?;
    if values.is_empty() {
        return Err(Error::EmptyBatch("percentile of an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p, rule))
}

/// Replace features by per-channel maxima.
pub fn davis_m(stats: &ChannelStats) -> FeatureBatch {
    stats.max.clone().with_kind(StatKind::Shaped)
}

/// `mean + γ·std`. At `γ = 0` the mean features are returned unchanged.
pub fn davis_mu_sigma(stats: &ChannelStats, gamma: f64) -> Result<FeatureBatch> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::NegativeGamma(gamma));
    }
    if gamma == 0.0 {
        return Ok(stats.mean.clone().with_kind(StatKind::Shaped));
    }
    let values = stats
        .mean
        .values()
        .iter()
        .zip(stats.std.values())
        .map(|(m, s)| m + gamma * s)
        .collect();
    Ok(FeatureBatch::from_parts(
        stats.samples(),
        stats.channels(),
        values,
        StatKind::Shaped,
    ))
}

/// ReAct clip value: percentile `p` of all ID feature values pooled.
pub fn react_threshold(id_features: &FeatureBatch, p: f64, rule: PercentileRule) -> Result<f64> {
    percentile(id_features.values(), p, rule)
}

/// Element-wise `min(h, c)`.
pub fn react(features: &FeatureBatch, c: f64) -> FeatureBatch {
    features.map_values(StatKind::Shaped, |v| v.min(c))
}

/// DICE weight mask: `inputs × classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceMask {
    inputs: usize,
    classes: usize,
    keep_count: usize,
    mask: Vec<bool>,
}

impl DiceMask {
    pub fn keep_count(&self) -> usize {
        self.keep_count
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, input: usize, class: usize) -> bool {
        self.mask[input * self.classes + class]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.classes];
        for row in self.mask.chunks_exact(self.classes) {
            for (s, &m) in sums.iter_mut().zip(row) {
                *s += usize::from(m);
            }
        }
        sums
    }

    /// `M ⊙ W`.
    pub fn apply(&self, head: &ClassifierHead) -> Result<ClassifierHead> {
        if head.inputs() != self.inputs || head.classes() != self.classes {
            return Err(Error::shape(
                format!("dice mask ({}, {})", self.inputs, self.classes),
                format!("head ({}, {})", head.inputs(), head.classes()),
                "mask and weight shapes differ",
            ));
        }
        Ok(head.map_weights(|j, c, w| if self.get(j, c) { w } else { 0.0 }))
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile {
            shape: vec![self.inputs, self.classes],
            data: self
                .mask
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Rebuild from a 0/1 tensor; every column must hold the same count.
    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let (inputs, classes) = match t.shape[..] {
            [n, c] => (n, c),
            _ => {
                return Err(Error::InvalidShape {
                    shape: t.shape.clone(),
                    reason: "dice mask must be rank 2".into(),
                })
            }
        };
        let mut mask = Vec::with_capacity(t.data.len());
        for &v in &t.data {
            match v {
                0.0 => mask.push(false),
                1.0 => mask.push(true),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "dice mask entry {other} is not 0 or 1"
                    )))
                }
            }
        }
        let m = DiceMask {
            inputs,
            classes,
            keep_count: 0,
            mask,
        };
        let sums = m.column_sums();
        if sums.iter().any(|&s| s != sums[0] || s == 0) {
            return Err(Error::InvalidConfig(format!(
                "dice mask columns must share one non-zero keep count, got {sums:?}"
            )));
        }
        Ok(DiceMask {
            keep_count: sums[0],
            ..m
        })
    }
}

/// Number of weights DICE keeps per class at sparsity `p`.
pub fn dice_keep_count(inputs: usize, p: f64) -> usize {
    let dropped = (inputs as f64 * p / 100.0).floor() as usize;
    inputs.saturating_sub(dropped).max(1)
}

/// Keep, per class, the `keep_count` largest entries of the contribution
/// matrix `V[j][c] = W[j][c]·E[h_j]`; ties go to the lower channel index.
pub fn dice_mask(id_features: &FeatureBatch, head: &ClassifierHead, p: f64) -> Result<DiceMask> {
    check_percentile(p)?;
    if id_features.dim() != head.inputs() {
        return Err(Error::shape(
            format!("features (width {})", id_features.dim()),
            format!("head (inputs {})", head.inputs()),
            "feature width must equal head input dimension",
        ));
    }
    let n = head.inputs();
    let classes = head.classes();
    let keep = dice_keep_count(n, p);
    let means = id_features.column_means();
    let mut mask = vec![false; n * classes];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for c in 0..classes {
        let contrib: Vec<f64> = (0..n).map(|j| head.weight(j, c) * means[j]).collect();
        order.clear();
        order.extend(0..n);
        // stable sort keeps lower indices first among equal contributions;
        // partial_cmp, unlike total_cmp, treats -0.0 and 0.0 as a tie
        order.sort_by(|&a, &b| {
            contrib[b]
                .partial_cmp(&contrib[a])
                .expect("finite contributions")
        });
        for &j in &order[..keep] {
            mask[j * classes + c] = true;
        }
    }
    Ok(DiceMask {
        inputs: n,
        classes,
        keep_count: keep,
        mask,
    })
}

/// `(M ⊙ W)ᵀh + b`.
pub fn dice_logits(
    features: &FeatureBatch,
    head: &ClassifierHead,
    mask: &DiceMask,
) -> Result<LogitBatch> {
    logits(features, &mask.apply(head)?)
}

fn per_sample(features: &FeatureBatch, f: impl Fn(&[f64], &mut [f64]) + Sync) -> FeatureBatch {
    let d = features.dim();
    let mut out = vec![0.0; features.values().len()];
    out.par_chunks_mut(d)
        .zip(features.values().par_chunks(d))
        .for_each(|(o, h)| f(h, o));
    FeatureBatch::from_parts(features.samples(), d, out, StatKind::Shaped)
}

fn sorted_row(h: &[f64]) -> Vec<f64> {
    let mut s = h.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// ASH-S, per sample: threshold at the row's `p`-th percentile, zero values
/// strictly below it, and scale survivors by `exp(s1/s2)` where `s1`/`s2` are
/// the row sums before/after pruning. A row whose pruned sum is zero is
/// returned pruned and unscaled.
pub fn ash_s(features: &FeatureBatch, p: f64, rule: PercentileRule) -> Result<FeatureBatch> {
    check_percentile(p)?;
    Ok(per_sample(features, |h, out| {
        let t = percentile_sorted(&sorted_row(h), p, rule);
        let s1: f64 = h.iter().sum();
        for (o, &v) in out.iter_mut().zip(h) {
            *o = if v < t { 0.0 } else { v };
        }
        let s2: f64 = out.iter().sum();
        if s2 != 0.0 {
            let scale = (s1 / s2).exp();
            out.iter_mut().for_each(|o| *o *= scale);
        }
    }))
}

/// SCALE, per sample: multiply the whole row by `exp(s1/s2)`, with `s2` the
/// sum of values at or above the row's `p`-th percentile. Rows with `s2 = 0`
/// pass through unchanged.
pub fn scale_shape(features: &FeatureBatch, p: f64, rule: PercentileRule) -> Result<FeatureBatch> {
    check_percentile(p)?;
    Ok(per_sample(features, |h, out| {
        let t = percentile_sorted(&sorted_row(h), p, rule);
        let s1: f64 = h.iter().sum();
        let s2: f64 = h.iter().filter(|&&v| v >= t).sum();
        let r = if s2 != 0.0 { s1 / s2 } else { 0.0 };
        let scale = r.exp();
        for (o, &v) in out.iter_mut().zip(h) {
            *o = v * scale;
        }
    }))
}

/// One shaping stage as written in a pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapingConfig {
    Identity,
    DavisM,
    DavisMuSigma {
        gamma: f64,
    },
    React {
        percentile: f64,
        /// Precomputed clip value; skips fitting when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default)]
        rule: PercentileRule,
    },
    Dice {
        percentile: f64,
    },
    AshS {
        percentile: f64,
        #[serde(default)]
        rule: PercentileRule,
    },
    Scale {
        percentile: f64,
        #[serde(default)]
        rule: PercentileRule,
    },
}

impl ShapingConfig {
    pub fn label(&self) -> String {
        match self {
            ShapingConfig::Identity => "identity".into(),
            ShapingConfig::DavisM => "davis_m".into(),
            ShapingConfig::DavisMuSigma { gamma } => format!("davis_mu_sigma(gamma={gamma})"),
            ShapingConfig::React { percentile, .. } => format!("react(p={percentile})"),
            ShapingConfig::Dice { percentile } => format!("dice(p={percentile})"),
            ShapingConfig::AshS { percentile, .. } => format!("ash_s(p={percentile})"),
            ShapingConfig::Scale { percentile, .. } => format!("scale(p={percentile})"),
        }
    }

    /// The `method` tag as written in configs.
    pub fn method_name(&self) -> &'static str {
        match self {
            ShapingConfig::Identity => "identity",
            ShapingConfig::DavisM => "davis_m",
            ShapingConfig::DavisMuSigma { .. } => "davis_mu_sigma",
            ShapingConfig::React { .. } => "react",
            ShapingConfig::Dice { .. } => "dice",
            ShapingConfig::AshS { .. } => "ash_s",
            ShapingConfig::Scale { .. } => "scale",
        }
    }

    pub fn is_davis(&self) -> bool {
        matches!(
            self,
            ShapingConfig::DavisM | ShapingConfig::DavisMuSigma { .. }
        )
    }

    pub fn percentile(&self) -> Option<f64> {
        match self {
            ShapingConfig::React { percentile, .. }
            | ShapingConfig::Dice { percentile }
            | ShapingConfig::AshS { percentile, .. }
            | ShapingConfig::Scale { percentile, .. } => Some(*percentile),
            _ => None,
        }
    }

    pub(crate) fn set_percentile(&mut self, p: f64) -> bool {
        match self {
            ShapingConfig::React {
                percentile,
                threshold,
                ..
            } => {
                *percentile = p;
                *threshold = None;
                true
            }
            ShapingConfig::Dice { percentile }
            | ShapingConfig::AshS { percentile, .. }
            | ShapingConfig::Scale { percentile, .. } => {
                *percentile = p;
                true
            }
            _ => false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ShapingConfig::DavisMuSigma { gamma } if !(gamma.is_finite() && *gamma >= 0.0) => {
                Err(Error::NegativeGamma(*gamma))
            }
            _ => self.percentile().map_or(Ok(()), check_percentile),
        }
    }
}

/// Label for a whole pipeline, e.g. `davis_m+dice(p=70)`.
pub fn pipeline_label(stages: &[ShapingConfig]) -> String {
    if stages.is_empty() {
        return "identity".into();
    }
    stages
        .iter()
        .map(ShapingConfig::label)
        .collect::<Vec<_>>()
        .join("+")
}

/// A stage with its fit-time artifact resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedStage {
    Identity,
    DavisM,
    DavisMuSigma {
        gamma: f64,
    },
    React {
        threshold: f64,
    },
    Dice {
        mask: DiceMask,
    },
    AshS {
        percentile: f64,
        rule: PercentileRule,
    },
    Scale {
        percentile: f64,
        rule: PercentileRule,
    },
}

/// What a pipeline is applied to.
#[derive(Debug, Clone, Copy)]
pub enum PipelineInput<'a> {
    Activations(&'a ActivationBatch),
    Stats(&'a ChannelStats),
    Features(&'a FeatureBatch),
}

impl PipelineInput<'_> {
    fn initial(&self, davis: Option<&FittedStage>) -> Result<FeatureBatch> {
        match (self, davis) {
            (PipelineInput::Features(_), Some(_)) => Err(Error::InvalidConfig(
                "DAVIS stages need activations or channel statistics, got features".into(),
            )),
            (PipelineInput::Features(f), None) => Ok((*f).clone()),
            (PipelineInput::Stats(s), None) => Ok(s.mean.clone()),
            (PipelineInput::Activations(a), None) => Ok(channel_mean(a)),
            (PipelineInput::Stats(s), Some(stage)) => apply_davis(s, stage),
            (PipelineInput::Activations(a), Some(stage)) => {
                apply_davis(&stats_from_batch(a), stage)
            }
        }
    }
}

fn apply_davis(stats: &ChannelStats, stage: &FittedStage) -> Result<FeatureBatch> {
    match stage {
        FittedStage::DavisM => Ok(davis_m(stats)),
        FittedStage::DavisMuSigma { gamma } => davis_mu_sigma(stats, *gamma),
        _ => unreachable!("apply_davis called with a non-DAVIS stage"),
    }
}

fn apply_feature_stage(stage: &FittedStage, f: FeatureBatch) -> Result<FeatureBatch> {
    Ok(match stage {
        FittedStage::Identity | FittedStage::Dice { .. } => f,
        FittedStage::React { threshold } => react(&f, *threshold),
        FittedStage::AshS { percentile, rule } => ash_s(&f, *percentile, *rule)?,
        FittedStage::Scale { percentile, rule } => scale_shape(&f, *percentile, *rule)?,
        FittedStage::DavisM | FittedStage::DavisMuSigma { .. } => {
            return Err(Error::InvalidConfig("DAVIS stages must come first".into()))
        }
    })
}

/// A pipeline whose fit-time artifacts are resolved and frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    stages: Vec<FittedStage>,
}

impl FittedPipeline {
    /// Fit every stage on the ID split, left to right.
    pub fn fit(
        config: &[ShapingConfig],
        id: PipelineInput<'_>,
        head: &ClassifierHead,
    ) -> Result<Self> {
        for s in config {
            s.validate()?;
        }
        let first_real = config.iter().position(|s| *s != ShapingConfig::Identity);
        if let Some(pos) = config.iter().rposition(ShapingConfig::is_davis) {
            if Some(pos) != first_real {
                return Err(Error::InvalidConfig(
                    "a DAVIS stage must be the first non-identity stage and appear once".into(),
                ));
            }
        }
        if config
            .iter()
            .filter(|s| matches!(s, ShapingConfig::Dice { .. }))
            .count()
            > 1
        {
            return Err(Error::InvalidConfig(
                "at most one DICE stage per pipeline".into(),
            ));
        }

        let mut stages = Vec::with_capacity(config.len());
        let davis = config.iter().find(|s| s.is_davis()).map(|s| match s {
            ShapingConfig::DavisM => FittedStage::DavisM,
            ShapingConfig::DavisMuSigma { gamma } => FittedStage::DavisMuSigma { gamma: *gamma },
            _ => unreachable!(),
        });
        let mut current = id.initial(davis.as_ref())?;
        for s in config {
            let fitted = match s {
                ShapingConfig::Identity => FittedStage::Identity,
                ShapingConfig::DavisM | ShapingConfig::DavisMuSigma { .. } => {
                    stages.push(davis.clone().expect("found above"));
                    continue;
                }
                ShapingConfig::React {
                    percentile,
                    threshold,
                    rule,
                } => FittedStage::React {
                    threshold: match threshold {
                        Some(c) => *c,
                        None => react_threshold(&current, *percentile, *rule)?,
                    },
                },
                ShapingConfig::Dice { percentile } => FittedStage::Dice {
                    mask: dice_mask(&current, head, *percentile)?,
                },
                ShapingConfig::AshS { percentile, rule } => FittedStage::AshS {
                    percentile: *percentile,
                    rule: *rule,
                },
                ShapingConfig::Scale { percentile, rule } => FittedStage::Scale {
                    percentile: *percentile,
                    rule: *rule,
                },
            };
            current = apply_feature_stage(&fitted, current)?;
            stages.push(fitted);
        }
        Ok(FittedPipeline { stages })
    }

    pub fn from_stages(stages: Vec<FittedStage>) -> Self {
        FittedPipeline { stages }
    }

    pub fn stages(&self) -> &[FittedStage] {
        &self.stages
    }

    fn davis(&self) -> Option<&FittedStage> {
        self.stages
            .iter()
            .find(|s| matches!(s, FittedStage::DavisM | FittedStage::DavisMuSigma { .. }))
    }

    /// Shaped features for a split.
    pub fn apply(&self, input: PipelineInput<'_>) -> Result<FeatureBatch> {
        let mut current = input.initial(self.davis())?;
        for s in &self.stages {
            if matches!(s, FittedStage::DavisM | FittedStage::DavisMuSigma { .. }) {
                continue;
            }
            current = apply_feature_stage(s, current)?;
        }
        Ok(current)
    }

    pub fn dice_mask(&self) -> Option<&DiceMask> {
        self.stages.iter().find_map(|s| match s {
            FittedStage::Dice { mask } => Some(mask),
            _ => None,
        })
    }

    /// The head used for scoring: masked when the pipeline has a DICE stage.
    pub fn head(&self, head: &ClassifierHead) -> Result<ClassifierHead> {
        match self.dice_mask() {
            Some(mask) => mask.apply(head),
            None => Ok(head.clone()),
        }
    }

    /// Shaped logits for a split.
    pub fn logits(&self, input: PipelineInput<'_>, head: &ClassifierHead) -> Result<LogitBatch> {
        logits(&self.apply(input)?, &self.head(head)?)
    }

    /// Write fit artifacts as JSON, with each DICE mask in a sibling NPY file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
        let mut saved = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            saved.push(match s {
                FittedStage::Identity => SavedStage::Identity,
                FittedStage::DavisM => SavedStage::DavisM,
                FittedStage::DavisMuSigma { gamma } => SavedStage::DavisMuSigma { gamma: *gamma },
                FittedStage::React { threshold } => SavedStage::React {
                    threshold: *threshold,
                },
                FittedStage::AshS { percentile, rule } => SavedStage::AshS {
                    percentile: *percentile,
                    rule: *rule,
                },
                FittedStage::Scale { percentile, rule } => SavedStage::Scale {
                    percentile: *percentile,
                    rule: *rule,
                },
                FittedStage::Dice { mask } => {
                    let file = PathBuf::from(format!("{stem}.dice_mask.{i}.npy"));
                    write_tensor(&mask.to_tensor(), path.with_file_name(&file))?;
                    SavedStage::Dice {
                        keep_count: mask.keep_count(),
                        mask: file,
                    }
                }
            });
        }
        let json =
            serde_json::to_string_pretty(&SavedPipeline { stages: saved }).expect("plain data");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedPipeline =
            serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut stages = Vec::with_capacity(saved.stages.len());
        for s in saved.stages {
            stages.push(match s {
                SavedStage::Identity => FittedStage::Identity,
                SavedStage::DavisM => FittedStage::DavisM,
                SavedStage::DavisMuSigma { gamma } => FittedStage::DavisMuSigma { gamma },
                SavedStage::React { threshold } => FittedStage::React { threshold },
                SavedStage::AshS { percentile, rule } => FittedStage::AshS { percentile, rule },
                SavedStage::Scale { percentile, rule } => FittedStage::Scale { percentile, rule },
                SavedStage::Dice { keep_count, mask } => {
                    let mask = DiceMask::from_tensor(&read_tensor(base.join(mask))?)?;
                    if mask.keep_count() != keep_count {
                        return Err(Error::SchemaViolation {
                            path: path.to_path_buf(),
                            reason: format!(
                                "dice keep_count {keep_count} disagrees with mask ({})",
                                mask.keep_count()
                            ),
                        });
                    }
                    FittedStage::Dice { mask }
                }
            });
        }
        Ok(FittedPipeline { stages })
    }
}

#[derive(Serialize, Deserialize)]
struct SavedPipeline {
    stages: Vec<SavedStage>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
enum SavedStage {
    Identity,
    DavisM,
    DavisMuSigma {
        gamma: f64,
    },
    React {
        threshold: f64,
    },
    Dice {
        keep_count: usize,
        mask: PathBuf,
    },
    AshS {
        percentile: f64,
        rule: PercentileRule,
    },
    Scale {
        percentile: f64,
        rule: PercentileRule,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fb(rows: &[&[f64]]) -> FeatureBatch {
        FeatureBatch::new(rows.len(), rows[0].len(), rows.concat(), StatKind::Mean).unwrap()
    }

    #[test]
    fn linear_percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 90.0, PercentileRule::Linear).unwrap() - 90.1).abs() < 1e-9);
        assert_eq!(
            percentile(&v, 100.0, PercentileRule::Linear).unwrap(),
            100.0
        );
        assert_eq!(percentile(&v, 0.0, PercentileRule::Linear).unwrap(), 1.0);
        assert_eq!(
            percentile(&[3.5; 7], 37.0, PercentileRule::Linear).unwrap(),
            3.5
        );
        assert_eq!(
            percentile(&[1.0, 2.0, 3.0, 4.0], 50.0, PercentileRule::Linear).unwrap(),
            2.5
        );
    }

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 90.0, PercentileRule::Nearest).unwrap(), 90.0);
        assert_eq!(percentile(&v, 0.0, PercentileRule::Nearest).unwrap(), 1.0);
        assert_eq!(
            percentile(&[1.0, 2.0, 3.0, 4.0], 50.0, PercentileRule::Nearest).unwrap(),
            2.0
        );
    }

    #[test]
    fn percentile_rejects_bad_input() {
        assert!(matches!(
            percentile(&[], 50.0, PercentileRule::Linear),
            Err(Error::EmptyBatch(_))
        ));
        assert!(percentile(&[1.0], 101.0, PercentileRule::Linear).is_err());
        assert!(percentile(&[1.0], f64::NAN, PercentileRule::Linear).is_err());
    }

    fn stats_of(mean: &[f64], max: &[f64], std: &[f64]) -> ChannelStats {
        ChannelStats {
            mean: fb(&[mean]),
            max: fb(&[max]).with_kind(StatKind::Max),
            std: fb(&[std]).with_kind(StatKind::Std),
        }
    }

    #[test]
    fn davis_examples() {
        let s = stats_of(&[1.0, 2.0], &[4.0, 7.0], &[0.5, 1.0]);
        assert_eq!(davis_m(&s).values(), &[4.0, 7.0]);
        assert_eq!(davis_m(&s).kind(), StatKind::Shaped);
        assert_eq!(davis_mu_sigma(&s, 3.0).unwrap().values(), &[2.5, 5.0]);
        assert_eq!(davis_mu_sigma(&s, 0.0).unwrap().values(), s.mean.values());
        assert!(matches!(
            davis_mu_sigma(&s, -0.1),
            Err(Error::NegativeGamma(_))
        ));
    }

    #[test]
    fn davis_mu_sigma_at_zero_keeps_negative_zero_bits() {
        let s = stats_of(&[-0.0], &[0.0], &[0.25]);
        let out = davis_mu_sigma(&s, 0.0).unwrap();
        assert_eq!(out.values()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn react_examples() {
        let f = fb(&[&[0.5, 2.0, 9.0]]);
        assert_eq!(react(&f, 2.0).values(), &[0.5, 2.0, 2.0]);
        assert_eq!(react(&f, 9.0).values(), f.values());
        let once = react(&f, 1.0);
        assert_eq!(react(&once, 1.0), once);
        let c =
            react_threshold(&fb(&[&[2.0; 4], &[2.0; 4]]), 37.0, PercentileRule::Linear).unwrap();
        assert_eq!(c, 2.0);
    }

    fn head(inputs: usize, classes: usize, w: Vec<f64>) -> ClassifierHead {
        ClassifierHead::new(inputs, classes, w, vec![0.0; classes]).unwrap()
    }

    #[test]
    fn dice_mask_examples() {
        // mean features are all 1, so V = W
        let ones = fb(&[&[1.0; 4]]);
        let h = ClassifierHead::new(
            4,
            2,
            vec![0.1, 0.1, 0.9, 0.9, 0.4, 0.4, 0.2, 0.2],
            vec![0.0; 2],
        )
        .unwrap();
        let m = dice_mask(&ones, &h, 50.0).unwrap();
        assert_eq!(m.keep_count(), 2);
        let col: Vec<bool> = (0..4).map(|j| m.get(j, 0)).collect();
        assert_eq!(col, vec![false, true, true, false]);

        let all = dice_mask(&ones, &h, 0.0).unwrap();
        assert_eq!(all.column_sums(), vec![4, 4]);

        let tie = ClassifierHead::new(
            4,
            2,
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0; 2],
        )
        .unwrap();
        let t = dice_mask(&ones, &tie, 75.0).unwrap();
        assert_eq!(t.keep_count(), 1);
        let col: Vec<bool> = (0..4).map(|j| t.get(j, 1)).collect();
        assert_eq!(col, vec![true, false, false, false]);
    }

    #[test]
    fn dice_signed_zero_contributions_tie() {
        // channel 0 has zero mean, so its contributions are -0.0 and +0.0
        let f = fb(&[&[0.0, 0.0, 1.0]]);
        let h = head(3, 2, vec![-1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        let m = dice_mask(&f, &h, 34.0).unwrap();
        assert_eq!(m.keep_count(), 2);
        // both columns keep channel 0 ahead of the equal-valued channel 1
        for c in 0..2 {
            assert_eq!(
                (0..3).map(|j| m.get(j, c)).collect::<Vec<_>>(),
                vec![true, true, false]
            );
        }
    }

    #[test]
    fn dice_keep_count_has_floor_of_one() {
        assert_eq!(dice_keep_count(4, 50.0), 2);
        assert_eq!(dice_keep_count(10, 70.0), 3);
        assert_eq!(dice_keep_count(3, 100.0), 1);
        assert_eq!(dice_keep_count(2048, 70.0), 615);
    }

    #[test]
    fn dice_all_ones_mask_reproduces_plain_logits() {
        let f = fb(&[&[0.3, -1.2, 2.5], &[1.0, 0.0, 4.0]]);
        let h = head(3, 2, vec![0.5, -0.25, 1.5, 0.75, -2.0, 0.125]);
        let m = dice_mask(&f, &h, 0.0).unwrap();
        assert_eq!(dice_logits(&f, &h, &m).unwrap(), logits(&f, &h).unwrap());
    }

    #[test]
    fn dice_shape_mismatch() {
        let f = fb(&[&[0.3, -1.2]]);
        let h = head(3, 2, vec![0.0; 6]);
        assert!(matches!(
            dice_mask(&f, &h, 50.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ash_s_examples() {
        let out = ash_s(&fb(&[&[1.0, 2.0, 3.0, 4.0]]), 50.0, PercentileRule::Linear).unwrap();
        // t = 2.5, survivors {3, 4}, s1 = 10, s2 = 7
        let e = (10.0f64 / 7.0).exp();
        assert_eq!(out.values(), &[0.0, 0.0, 3.0 * e, 4.0 * e]);

        let c = ash_s(&fb(&[&[0.5; 6]]), 60.0, PercentileRule::Linear).unwrap();
        let e1 = 1f64.exp();
        assert!(c.values().iter().all(|&v| v == 0.5 * e1));

        let z = ash_s(&fb(&[&[0.0; 5]]), 90.0, PercentileRule::Linear).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_examples() {
        let e = 1f64.exp();
        let c = scale_shape(&fb(&[&[2.0; 4]]), 50.0, PercentileRule::Linear).unwrap();
        assert!(c.values().iter().all(|&v| v == 2.0 * e));
        let s = scale_shape(&fb(&[&[0.0, 0.0, 0.0, 10.0]]), 75.0, PercentileRule::Linear).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0, 0.0, 10.0 * e]);
        let z = scale_shape(&fb(&[&[0.0; 3]]), 75.0, PercentileRule::Linear).unwrap();
        assert_eq!(z.values(), &[0.0; 3]);
    }

    fn acts() -> ActivationBatch {
        let v: Vec<f32> = (0..3 * 4 * 4)
            .map(|i| ((i * 13 % 7) as f32) * 0.5)
            .collect();
        ActivationBatch::new(3, 4, 2, v).unwrap()
    }

    #[test]
    fn compose_identity_pipelines() {
        let a = acts();
        let h = head(4, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let gap = channel_mean(&a);

        let p = FittedPipeline::fit(
            &[ShapingConfig::Identity],
            PipelineInput::Activations(&a),
            &h,
        )
        .unwrap();
        assert_eq!(
            p.apply(PipelineInput::Activations(&a)).unwrap().values(),
            gap.values()
        );

        let f = gap.clone();
        let p = FittedPipeline::fit(&[ShapingConfig::Identity], PipelineInput::Features(&f), &h)
            .unwrap();
        assert_eq!(p.apply(PipelineInput::Features(&f)).unwrap(), f);

        let cfg = [
            ShapingConfig::DavisMuSigma { gamma: 0.0 },
            ShapingConfig::React {
                percentile: 100.0,
                threshold: None,
                rule: PercentileRule::Linear,
            },
        ];
        let p = FittedPipeline::fit(&cfg, PipelineInput::Activations(&a), &h).unwrap();
        assert_eq!(
            p.apply(PipelineInput::Activations(&a)).unwrap().values(),
            gap.values()
        );
    }

    #[test]
    fn compose_fits_dice_on_shaped_features() {
        let a = acts();
        let h = head(4, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8]);
        let cfg = [
            ShapingConfig::DavisM,
            ShapingConfig::Dice { percentile: 50.0 },
        ];
        let p = FittedPipeline::fit(&cfg, PipelineInput::Activations(&a), &h).unwrap();
        let expected = dice_mask(&davis_m(&stats_from_batch(&a)), &h, 50.0).unwrap();
        assert_eq!(p.dice_mask(), Some(&expected));
        let l = p.logits(PipelineInput::Activations(&a), &h).unwrap();
        assert_eq!(
            l,
            dice_logits(&davis_m(&stats_from_batch(&a)), &h, &expected).unwrap()
        );
    }

    #[test]
    fn compose_rejects_misplaced_davis() {
        let a = acts();
        let h = head(4, 2, vec![0.0; 8]);
        let late = [
            ShapingConfig::Dice { percentile: 50.0 },
            ShapingConfig::DavisM,
        ];
        assert!(FittedPipeline::fit(&late, PipelineInput::Activations(&a), &h).is_err());
        let f = channel_mean(&a);
        assert!(
            FittedPipeline::fit(&[ShapingConfig::DavisM], PipelineInput::Features(&f), &h).is_err()
        );
        let twice = [
            ShapingConfig::Dice { percentile: 10.0 },
            ShapingConfig::Dice { percentile: 20.0 },
        ];
        assert!(FittedPipeline::fit(&twice, PipelineInput::Features(&f), &h).is_err());
    }

    #[test]
    fn config_json_shape() {
        let cfg: Vec<ShapingConfig> = serde_json::from_str(
            r#"[{"method":"davis_mu_sigma","gamma":3.0},{"method":"react","percentile":90},
                {"method":"ash_s","percentile":90,"rule":"nearest"}]"#,
        )
        .unwrap();
        assert_eq!(cfg[0], ShapingConfig::DavisMuSigma { gamma: 3.0 });
        assert_eq!(
            pipeline_label(&cfg),
            "davis_mu_sigma(gamma=3)+react(p=90)+ash_s(p=90)"
        );
        assert!(serde_json::from_str::<ShapingConfig>(r#"{"method":"davis_mu_sigma"}"#).is_err());
    }

    #[test]
    fn fit_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = acts();
        let h = head(4, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8]);
        let cfg = [
            ShapingConfig::DavisM,
            ShapingConfig::React {
                percentile: 90.0,
                threshold: None,
                rule: PercentileRule::Linear,
            },
            ShapingConfig::Dice { percentile: 50.0 },
        ];
        let p = FittedPipeline::fit(&cfg, PipelineInput::Activations(&a), &h).unwrap();
        let path = dir.path().join("fit.json");
        p.save(&path).unwrap();
        assert!(dir.path().join("fit.dice_mask.2.npy").exists());
        assert_eq!(FittedPipeline::load(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn react_bounded_idempotent_monotone(v in prop::collection::vec(-10.0f64..10.0, 1..40), c in -5.0f64..5.0, bump in 0.0f64..3.0) {
            let f = FeatureBatch::new(1, v.len(), v.clone(), StatKind::Mean).unwrap();
            let r = react(&f, c);
            prop_assert!(r.values().iter().all(|&x| x <= c));
            let clipped = react(&r, c);
            prop_assert_eq!(clipped.values(), r.values());
            let up = f.map_values(StatKind::Mean, |x| x + bump);
            let ru = react(&up, c);
            prop_assert!(ru.values().iter().zip(r.values()).all(|(a, b)| a >= b));
        }

        #[test]
        fn react_threshold_scales_and_dice_mask_invariant(
            v in prop::collection::vec(0.0f64..5.0, 12),
            w in prop::collection::vec(-1.0f64..1.0, 8),
            shift in -3i32..4,
        ) {
            // powers of two scale exactly, so the comparison can be exact
            let alpha = 2f64.powi(shift);
            let f = FeatureBatch::new(3, 4, v.clone(), StatKind::Mean).unwrap();
            let g = f.map_values(StatKind::Mean, |x| x * alpha);
            let c1 = react_threshold(&f, 90.0, PercentileRule::Linear).unwrap();
            let c2 = react_threshold(&g, 90.0, PercentileRule::Linear).unwrap();
            prop_assert!((c2 - alpha * c1).abs() <= 1e-12 * (1.0 + c2.abs()));
            let h = ClassifierHead::new(4, 2, w, vec![0.0; 2]).unwrap();
            prop_assert_eq!(dice_mask(&f, &h, 60.0).unwrap(), dice_mask(&g, &h, 60.0).unwrap());
        }

        #[test]
        fn scale_is_single_factor_at_least_one(v in prop::collection::vec(0.0f64..10.0, 2..30), p in 1.0f64..99.0) {
            let f = FeatureBatch::new(1, v.len(), v.clone(), StatKind::Mean).unwrap();
            let out = scale_shape(&f, p, PercentileRule::Linear).unwrap();
            let s1: f64 = v.iter().sum();
            let t = percentile(&v, p, PercentileRule::Linear).unwrap();
            let s2: f64 = v.iter().filter(|&&x| x >= t).sum();
            let factor = if s2 != 0.0 { (s1 / s2).exp() } else { 1.0 };
            prop_assert!(factor >= 1.0);
            for (o, x) in out.values().iter().zip(&v) {
                prop_assert_eq!(*o, x * factor);
            }
        }
    }
}
