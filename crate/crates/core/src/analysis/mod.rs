//! Empirical checks of the separation-gap argument behind statistic-based
//! shaping.
//!
//! Exact algebraic facts (linearity of the logit gap, the mean/std gap
//! identity, the uniform-shift logit increase) are asserted to floating-point
//! tolerance. Distributional premises, such as ID maps having larger means,
//! maxima and spreads than OOD maps, are only reported as violation rates:
//! they are properties of data, not theorems.

pub mod rng;
mod synthetic;

pub use synthetic::{generate_synthetic, theory_seeds, Nonlinearity, SyntheticData, SyntheticSpec};
pub(crate) use synthetic::{labels_for, Split};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auroc, fpr_at_tpr, DEFAULT_TPR};
use crate::scoring::{energy_score, logits, ClassifierHead, LogitBatch};
use crate::shaping::{davis_m, davis_mu_sigma};
use crate::stats::{stats_from_batch, ChannelStats};
use crate::tensorio::{ActivationBatch, FeatureBatch};

/// Tolerance for the logit-gap linearity identity.
pub const LINEARITY_TOL: f64 = 1e-5;
/// Tolerance for the mean/std gap identity.
pub const LEMMA_TOL: f64 = 1e-6;

/// Per-channel gap vector plus its channel average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub per_channel: Vec<f64>,
    pub mean: f64,
}

impl Gap {
    fn between(id: &FeatureBatch, ood: &FeatureBatch) -> Self {
        let per_channel: Vec<f64> = id
            .column_means()
            .iter()
            .zip(ood.column_means())
            .map(|(a, b)| a - b)
            .collect();
        let mean = per_channel.iter().sum::<f64>() / per_channel.len() as f64;
        Gap { per_channel, mean }
    }

    fn violation_rate(&self, pred: impl Fn(usize, f64) -> bool) -> f64 {
        let bad = self
            .per_channel
            .iter()
            .enumerate()
            .filter(|(j, v)| pred(*j, **v))
            .count();
        bad as f64 / self.per_channel.len() as f64
    }
}

/// Rates at which the per-channel ordering premises fail on this data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseViolations {
    /// Channels with `Δμ < 0`.
    pub mean_gap_negative: f64,
    /// Channels with `Δm < 0`.
    pub max_gap_negative: f64,
    /// Channels with `Δσ < 0`.
    pub std_gap_negative: f64,
    /// Channels with `Δm < Δμ`.
    pub max_below_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gamma: f64,
    pub delta_mu: Gap,
    pub delta_m: Gap,
    pub delta_sigma: Gap,
    pub delta_mu_sigma: Gap,
    /// `E[f(x_in)] − E[f(x_out)]` per class, GAP features.
    pub logit_gap_baseline: Vec<f64>,
    /// Same with max features.
    pub logit_gap_m: Vec<f64>,
    /// Same with `mean + γ·std` features.
    pub logit_gap_mu_sigma: Vec<f64>,
    /// Mean energy-score gaps `E[S(x_in)] − E[S(x_out)]`.
    pub score_gap_baseline: f64,
    pub score_gap_m: f64,
    pub score_gap_mu_sigma: f64,
    /// Largest deviation of a logit gap from `Wᵀ(feature gap)`, relative to
    /// the magnitude of the summed terms.
    pub linearity_max_rel_error: f64,
    pub linearity_holds: bool,
    pub premise_violations: PremiseViolations,
}

fn check_channels(id: usize, ood: usize, head: &ClassifierHead) -> Result<()> {
    if id != ood || id != head.inputs() {
        return Err(Error::shape(
            format!("ID/OOD channels ({id}/{ood})"),
            format!("head inputs ({})", head.inputs()),
            "channel counts must agree",
        ));
    }
    Ok(())
}

/// Max over classes of `|gap − Wᵀ(feature gap)| / Σ_j |W_jc|(|E h_in_j| + |E h_out_j|)`.
fn linearity_error(
    head: &ClassifierHead,
    id_features: &FeatureBatch,
    ood_features: &FeatureBatch,
    id_logits: &LogitBatch,
    ood_logits: &LogitBatch,
) -> f64 {
    let mi = id_features.column_means();
    let mo = ood_features.column_means();
    let feature_gap: Vec<f64> = mi.iter().zip(&mo).map(|(a, b)| a - b).collect();
    let predicted = head.apply_weights(&feature_gap);
    let observed: Vec<f64> = id_logits
        .column_means()
        .iter()
        .zip(ood_logits.column_means())
        .map(|(a, b)| a - b)
        .collect();
    let magnitude: Vec<f64> = {
        let abs_head = head.map_weights(|_, _, w| w.abs());
        let spread: Vec<f64> = mi.iter().zip(&mo).map(|(a, b)| a.abs() + b.abs()).collect();
        abs_head
            .apply_weights(&spread)
            .iter()
            .zip(head.bias())
            .map(|(m, b)| m + 2.0 * b.abs())
            .collect()
    };
    observed
        .iter()
        .zip(&predicted)
        .zip(&magnitude)
        .map(|((o, p), m)| {
            if *m == 0.0 {
                (o - p).abs()
            } else {
                (o - p).abs() / m
            }
        })
        .fold(0.0, f64::max)
}

struct Side {
    stats: ChannelStats,
    mu_sigma: FeatureBatch,
    max: FeatureBatch,
}

impl Side {
    fn new(stats: ChannelStats, gamma: f64) -> Result<Self> {
        let mu_sigma = davis_mu_sigma(&stats, gamma)?;
        let max = davis_m(&stats);
        Ok(Side {
            stats,
            mu_sigma,
            max,
        })
    }
}

fn logit_gap(id: &LogitBatch, ood: &LogitBatch) -> Vec<f64> {
    id.column_means()
        .iter()
        .zip(ood.column_means())
        .map(|(a, b)| a - b)
        .collect()
}

fn score_gap(id: &LogitBatch, ood: &LogitBatch) -> Result<f64> {
    Ok(energy_score(id, "id")?.mean() - energy_score(ood, "ood")?.mean())
}

/// Separation gaps of every statistic and of the resulting logits and scores.
pub fn gap_report(
    id_acts: &ActivationBatch,
    ood_acts: &ActivationBatch,
    head: &ClassifierHead,
    gamma: f64,
) -> Result<GapReport> {
    gap_report_from_stats(
        stats_from_batch(id_acts),
        stats_from_batch(ood_acts),
        head,
        gamma,
    )
}

/// [`gap_report`] on precomputed channel statistics.
pub fn gap_report_from_stats(
    id_stats: ChannelStats,
    ood_stats: ChannelStats,
    head: &ClassifierHead,
    gamma: f64,
) -> Result<GapReport> {
    check_channels(id_stats.channels(), ood_stats.channels(), head)?;
    let id = Side::new(id_stats, gamma)?;
    let ood = Side::new(ood_stats, gamma)?;

    let delta_mu = Gap::between(&id.stats.mean, &ood.stats.mean);
    let delta_m = Gap::between(&id.stats.max, &ood.stats.max);
    let delta_sigma = Gap::between(&id.stats.std, &ood.stats.std);
    let delta_mu_sigma = Gap::between(&id.mu_sigma, &ood.mu_sigma);

    let pairs = [
        (&id.stats.mean, &ood.stats.mean),
        (&id.max, &ood.max),
        (&id.mu_sigma, &ood.mu_sigma),
    ];
    let mut gaps = Vec::with_capacity(3);
    let mut scores = Vec::with_capacity(3);
    let mut worst = 0.0f64;
    for (fi, fo) in pairs {
        let li = logits(fi, head)?;
        let lo = logits(fo, head)?;
        worst = worst.max(linearity_error(head, fi, fo, &li, &lo));
        gaps.push(logit_gap(&li, &lo));
        scores.push(score_gap(&li, &lo)?);
    }

    let premise_violations = PremiseViolations {
        mean_gap_negative: delta_mu.violation_rate(|_, v| v < 0.0),
        max_gap_negative: delta_m.violation_rate(|_, v| v < 0.0),
        std_gap_negative: delta_sigma.violation_rate(|_, v| v < 0.0),
        max_below_mean: delta_m.violation_rate(|j, v| v < delta_mu.per_channel[j]),
    };
    let mut gaps = gaps.into_iter();
    Ok(GapReport {
        gamma,
        delta_mu,
        delta_m,
        delta_sigma,
        delta_mu_sigma,
        logit_gap_baseline: gaps.next().expect("three pairs"),
        logit_gap_m: gaps.next().expect("three pairs"),
        logit_gap_mu_sigma: gaps.next().expect("three pairs"),
        score_gap_baseline: scores[0],
        score_gap_m: scores[1],
        score_gap_mu_sigma: scores[2],
        linearity_max_rel_error: worst,
        linearity_holds: worst <= LINEARITY_TOL,
        premise_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    pub gamma: f64,
    /// Channel-averaged `Δμσ − Δμ`.
    pub lhs: f64,
    /// Channel-averaged `γ·(E[σ_in] − E[σ_out])`.
    pub rhs: f64,
    /// Worst per-channel deviation between the two sides, relative to the
    /// magnitude of the expectations involved.
    pub max_rel_error: f64,
    pub identity_exact: bool,
    /// Aggregate sign premise `E[σ_in] ≥ E[σ_out]` (channel average).
    pub holds: bool,
    /// Fraction of channels where `E[σ_in] < E[σ_out]`.
    pub sign_violation_rate: f64,
}

/// Check `Δμσ − Δμ = γ·(E[σ_in] − E[σ_out])` per channel, computing the left
/// side from the shaped features and the right side from the std features.
pub fn check_lemma1(id: &ChannelStats, ood: &ChannelStats, gamma: f64) -> Result<Lemma1Check> {
    if id.channels() != ood.channels() {
        return Err(Error::shape(
            format!("ID stats ({} channels)", id.channels()),
            format!("OOD stats ({} channels)", ood.channels()),
            "channel counts must agree",
        ));
    }
    let si = davis_mu_sigma(id, gamma)?.column_means();
    let so = davis_mu_sigma(ood, gamma)?.column_means();
    let mi = id.mean.column_means();
    let mo = ood.mean.column_means();
    let sdi = id.std.column_means();
    let sdo = ood.std.column_means();

    let n = mi.len();
    let (mut lhs_sum, mut rhs_sum, mut worst, mut bad) = (0.0, 0.0, 0.0f64, 0usize);
    for j in 0..n {
        let lhs = (si[j] - so[j]) - (mi[j] - mo[j]);
        let rhs = gamma * (sdi[j] - sdo[j]);
        let magnitude = si[j].abs() + so[j].abs() + mi[j].abs() + mo[j].abs();
        let err = (lhs - rhs).abs();
        worst = worst.max(if magnitude == 0.0 {
            err
        } else {
            err / magnitude
        });
        lhs_sum += lhs;
        rhs_sum += rhs;
        if sdi[j] < sdo[j] {
            bad += 1;
        }
    }
    let sigma_gap = sdi.iter().sum::<f64>() - sdo.iter().sum::<f64>();
    Ok(Lemma1Check {
        gamma,
        lhs: lhs_sum / n as f64,
        rhs: rhs_sum / n as f64,
        max_rel_error: worst,
        identity_exact: worst <= LEMMA_TOL,
        holds: sigma_gap >= 0.0,
        sign_violation_rate: bad as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Fix {
    pub head: ClassifierHead,
    pub alpha: f64,
    /// Whether every sample of the supplied batch keeps its predicted class.
    pub argmax_preserved: Option<bool>,
}

/// Make `Wᵀ1 ≥ 0` by adding one constant `α` to every weight.
///
/// `α = max_c(−Σ_j W_jc)/n + ε` with `ε = 1e-6·max(1, max|W|)`, or 0 when the
/// head already satisfies the condition. The shift moves every logit of a
/// sample by the same `α·Σ_j h_j`, so predictions and softmax outputs are
/// unchanged; the optional feature batch is used to confirm that.
pub fn enforce_assumption1(
    head: &ClassifierHead,
    features: Option<&FeatureBatch>,
) -> Result<Assumption1Fix> {
    let sums = head.column_sums();
    let worst = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha = if worst >= 0.0 {
        0.0
    } else {
        let wmax = head.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let eps = 1e-6 * wmax.max(1.0);
        -worst / head.inputs() as f64 + eps
    };
    let shifted = if alpha == 0.0 {
        head.clone()
    } else {
        head.map_weights(|_, _, w| w + alpha)
    };
    let argmax_preserved = features
        .map(|f| -> Result<bool> {
            Ok(logits(f, head)?.predictions() == logits(f, &shifted)?.predictions())
        })
        .transpose()?;
    Ok(Assumption1Fix {
        head: shifted,
        alpha,
        argmax_preserved,
    })
}

/// Which DAVIS feature to compare against the GAP baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DavisVariant {
    DavisM,
    DavisMuSigma { gamma: f64 },
}

impl DavisVariant {
    fn features(&self, stats: &ChannelStats) -> Result<FeatureBatch> {
        match self {
            DavisVariant::DavisM => Ok(davis_m(stats)),
            DavisVariant::DavisMuSigma { gamma } => davis_mu_sigma(stats, *gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    pub variant: DavisVariant,
    pub logit_gap_baseline: Vec<f64>,
    pub logit_gap_shaped: Vec<f64>,
    /// Per class: shaped logit gap ≥ baseline logit gap.
    pub logit_gap_dominance: Vec<bool>,
    pub baseline_score_gap: f64,
    pub shaped_score_gap: f64,
    pub baseline_auroc: f64,
    pub shaped_auroc: f64,
    pub baseline_fpr95: f64,
    pub shaped_fpr95: f64,
}

/// Compare logit and energy-score separation of DAVIS features against GAP
/// features. The head must already satisfy `Wᵀ1 ≥ 0`.
pub fn check_theorem1(
    id_acts: &ActivationBatch,
    ood_acts: &ActivationBatch,
    head: &ClassifierHead,
    variant: DavisVariant,
) -> Result<Theorem1Check> {
    check_theorem1_from_stats(
        &stats_from_batch(id_acts),
        &stats_from_batch(ood_acts),
        head,
        variant,
    )
}

/// [`check_theorem1`] on precomputed channel statistics.
pub fn check_theorem1_from_stats(
    si: &ChannelStats,
    so: &ChannelStats,
    head: &ClassifierHead,
    variant: DavisVariant,
) -> Result<Theorem1Check> {
    check_channels(si.channels(), so.channels(), head)?;
    let negative: Vec<usize> = head
        .column_sums()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s < 0.0)
        .map(|(c, _)| c)
        .collect();
    if !negative.is_empty() {
        return Err(Error::AssumptionViolated { columns: negative });
    }
    let base_i = logits(&si.mean, head)?;
    let base_o = logits(&so.mean, head)?;
    let shaped_i = logits(&variant.features(si)?, head)?;
    let shaped_o = logits(&variant.features(so)?, head)?;

    let logit_gap_baseline = logit_gap(&base_i, &base_o);
    let logit_gap_shaped = logit_gap(&shaped_i, &shaped_o);
    let logit_gap_dominance = logit_gap_shaped
        .iter()
        .zip(&logit_gap_baseline)
        .map(|(s, b)| s >= b)
        .collect();

    let (ebi, ebo) = (energy_score(&base_i, "id")?, energy_score(&base_o, "ood")?);
    let (esi, eso) = (
        energy_score(&shaped_i, "id")?,
        energy_score(&shaped_o, "ood")?,
    );
    Ok(Theorem1Check {
        variant,
        logit_gap_baseline,
        logit_gap_shaped,
        logit_gap_dominance,
        baseline_score_gap: ebi.mean() - ebo.mean(),
        shaped_score_gap: esi.mean() - eso.mean(),
        baseline_auroc: auroc(&ebi.scores, &ebo.scores)?,
        shaped_auroc: auroc(&esi.scores, &eso.scores)?,
        baseline_fpr95: fpr_at_tpr(&ebi.scores, &ebo.scores, DEFAULT_TPR)?,
        shaped_fpr95: fpr_at_tpr(&esi.scores, &eso.scores, DEFAULT_TPR)?,
    })
}

/// The uniform-shift construction: raise every ID feature by `delta` and
/// measure how much each class's logit gap grows.
///
/// Returns `(observed increase, δ·Wᵀ1)`.
pub fn uniform_shift_gap_increase(
    id_features: &FeatureBatch,
    ood_features: &FeatureBatch,
    head: &ClassifierHead,
    delta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lo = logits(ood_features, head)?;
    let before = logit_gap(&logits(id_features, head)?, &lo);
    let shifted = id_features.map_values(id_features.kind(), |v| v + delta);
    let after = logit_gap(&logits(&shifted, head)?, &lo);
    let observed = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    let predicted = head.column_sums().iter().map(|s| delta * s).collect();
    Ok((observed, predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub baseline_auroc: f64,
    pub shaped_auroc: f64,
    pub baseline_fpr95: f64,
    pub shaped_fpr95: f64,
    pub linearity_max_rel_error: f64,
    pub lemma1_max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryVerification {
    pub spec: SyntheticSpec,
    pub variant: DavisVariant,
    pub lemma_gamma: f64,
    pub trials: Vec<TrialResult>,
    /// Trials where shaped AUROC ≥ baseline AUROC.
    pub wins: usize,
    pub required_wins: usize,
    /// Mean of `baseline_fpr95 − shaped_fpr95`.
    pub mean_fpr95_improvement: f64,
    pub identities_hold: bool,
    pub statistical_pass: bool,
    pub passed: bool,
}

/// Fraction of trials the shaped pipeline must win.
pub const REQUIRED_WIN_FRACTION: f64 = 0.95;

/// Monte-Carlo check over seeds: per trial, generate a synthetic ID/OOD pair,
/// verify the exact identities, and compare energy-score detection with
/// DAVIS features against GAP features. Trials run in parallel and are
/// reported in seed order.
pub fn verify_theory(
    spec: &SyntheticSpec,
    seeds: &[u64],
    variant: DavisVariant,
    lemma_gamma: f64,
) -> Result<TheoryVerification> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let trials = seeds
        .par_iter()
        .map(|&seed| -> Result<TrialResult> {
            let data = generate_synthetic(&SyntheticSpec {
                seed,
                ..spec.clone()
            })?;
            let (si, so) = (stats_from_batch(&data.id), stats_from_batch(&data.ood));
            let t = check_theorem1_from_stats(&si, &so, &data.head, variant)?;
            let lemma = check_lemma1(&si, &so, lemma_gamma)?;
            let gaps = gap_report_from_stats(si, so, &data.head, lemma_gamma)?;
            Ok(TrialResult {
                seed,
                baseline_auroc: t.baseline_auroc,
                shaped_auroc: t.shaped_auroc,
                baseline_fpr95: t.baseline_fpr95,
                shaped_fpr95: t.shaped_fpr95,
                linearity_max_rel_error: gaps.linearity_max_rel_error,
                lemma1_max_rel_error: lemma.max_rel_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let wins = trials
        .iter()
        .filter(|t| t.shaped_auroc >= t.baseline_auroc)
        .count();
    let required_wins = (REQUIRED_WIN_FRACTION * trials.len() as f64).ceil() as usize;
    let mean_fpr95_improvement = trials
        .iter()
        .map(|t| t.baseline_fpr95 - t.shaped_fpr95)
        .sum::<f64>()
        / trials.len() as f64;
    let identities_hold = trials
        .iter()
        .all(|t| t.linearity_max_rel_error <= LINEARITY_TOL && t.lemma1_max_rel_error <= LEMMA_TOL);
    let statistical_pass = wins >= required_wins && mean_fpr95_improvement > 0.0;
    Ok(TheoryVerification {
        spec: spec.clone(),
        variant,
        lemma_gamma,
        trials,
        wins,
        required_wins,
        mean_fpr95_improvement,
        identities_hold,
        statistical_pass,
        passed: identities_hold && statistical_pass,
    })
}
