//! Detection metrics: FPR at a fixed TPR, AUROC, and the threshold that
//! admits a target fraction of ID samples.
//!
//! Scores follow the toolkit convention (higher = ID). A sample is accepted
//! as ID when its score is `>= λ`. There is no ROC interpolation: FPR95 is
//! read at the empirical operating point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreSet;

pub const DEFAULT_TPR: f64 = 0.95;

fn nonempty(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        Err(Error::EmptySet(what.to_string()))
    } else {
        Ok(())
    }
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Smallest number of ID samples that must be accepted to reach `tpr`.
fn required_accepts(n: usize, tpr: f64) -> usize {
    let x = tpr * n as f64;
    // absorb representation error such as 0.95 * 100 = 95.00000000000001
    let r = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (r as usize).clamp(1, n)
}

fn check_tpr(tpr: f64) -> Result<()> {
    if tpr > 0.0 && tpr <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "TPR target must lie in (0, 1], got {tpr}"
        )))
    }
}

/// Largest threshold `λ` such that at least `tpr` of the ID scores are `>= λ`.
///
/// With ID scores sorted ascending and `r = ceil(tpr·N)`, this is the value
/// at zero-based index `N − r`.
pub fn calibrate_lambda(id_scores: &[f64], tpr: f64) -> Result<f64> {
    nonempty(id_scores, "ID scores")?;
    check_tpr(tpr)?;
    let s = sorted(id_scores);
    let r = required_accepts(s.len(), tpr);
    Ok(s[s.len() - r])
}

fn fraction_at_or_above(scores: &[f64], lambda: f64) -> f64 {
    scores.iter().filter(|&&s| s >= lambda).count() as f64 / scores.len() as f64
}

/// Fraction of OOD scores accepted at the calibrated threshold.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    nonempty(ood_scores, "OOD scores")?;
    let lambda = calibrate_lambda(id_scores, tpr)?;
    Ok(fraction_at_or_above(ood_scores, lambda))
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half. Computed from one sort of each set.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    nonempty(id_scores, "ID scores")?;
    nonempty(ood_scores, "OOD scores")?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);

    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < id.len() {
        let v = id[i];
        while j < ood.len() && ood[j] < v {
            j += 1;
        }
        let below = j as u128;
        let mut k = j;
        while k < ood.len() && ood[k] == v {
            k += 1;
        }
        let equal = (k - j) as u128;
        let mut group = 0u128;
        while i < id.len() && id[i] == v {
            group += 1;
            i += 1;
        }
        twice_u += group * (2 * below + equal);
    }
    let pairs = 2 * id.len() as u128 * ood.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ood_set: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub lambda: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

pub fn evaluate(id: &ScoreSet, ood: &ScoreSet, tpr: f64) -> Result<EvalResult> {
    let lambda = calibrate_lambda(&id.scores, tpr)?;
    nonempty(&ood.scores, &format!("OOD scores of `{}`", ood.split_name))?;
    Ok(EvalResult {
        ood_set: ood.split_name.clone(),
        fpr95: fraction_at_or_above(&ood.scores, lambda),
        auroc: auroc(&id.scores, &ood.scores)?,
        lambda,
        id_count: id.len(),
        ood_count: ood.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub fpr95: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEvaluation {
    pub tpr: f64,
    pub results: Vec<EvalResult>,
    pub average: MacroAverage,
}

impl SuiteEvaluation {
    /// CSV with columns `ood_set,fpr95,auroc,lambda,id_count,ood_count` and a
    /// final `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ood_set,fpr95,auroc,lambda,id_count,ood_count\n");
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.ood_set, r.fpr95, r.auroc, r.lambda, r.id_count, r.ood_count
            ));
        }
        out.push_str(&format!(
            "average,{},{},,,\n",
            self.average.fpr95, self.average.auroc
        ));
        out
    }
}

/// Evaluate every OOD set against one ID set and macro-average FPR95 and
/// AUROC (unweighted by set size).
pub fn evaluate_suite(id: &ScoreSet, ood_sets: &[ScoreSet], tpr: f64) -> Result<SuiteEvaluation> {
    if ood_sets.is_empty() {
        return Err(Error::EmptySet("no OOD sets to evaluate".into()));
    }
    let results = ood_sets
        .par_iter()
        .map(|ood| evaluate(id, ood, tpr))
        .collect::<Result<Vec<_>>>()?;
    let k = results.len() as f64;
    let average = MacroAverage {
        fpr95: results.iter().map(|r| r.fpr95).sum::<f64>() / k,
        auroc: results.iter().map(|r| r.auroc).sum::<f64>() / k,
    };
    Ok(SuiteEvaluation {
        tpr,
        results,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreKind;
    use proptest::prelude::*;

    fn range(a: i32, b: i32) -> Vec<f64> {
        (a..=b).map(f64::from).collect()
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(calibrate_lambda(&range(1, 100), 0.95).unwrap(), 6.0);
        assert_eq!(calibrate_lambda(&[2.5; 9], 0.95).unwrap(), 2.5);
        assert_eq!(calibrate_lambda(&[-4.0], 0.95).unwrap(), -4.0);
        assert!(matches!(
            calibrate_lambda(&[], 0.95),
            Err(Error::EmptySet(_))
        ));
        assert!(calibrate_lambda(&[1.0], 0.0).is_err());
        assert_eq!(calibrate_lambda(&range(1, 10), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(
            fpr_at_tpr(&[2.0, 3.0, 4.0], &[0.0, 1.0], 0.95).unwrap(),
            0.0
        );
        assert_eq!(
            fpr_at_tpr(&range(1, 100), &range(1, 100), 0.95).unwrap(),
            0.95
        );
        assert_eq!(fpr_at_tpr(&[1.0, 2.0], &[5.0, 6.0], 0.95).unwrap(), 1.0);
        assert!(fpr_at_tpr(&[1.0], &[], 0.95).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.25);
        assert_eq!(
            auroc(&[1.0, 2.0, 2.0, 5.0], &[5.0, 2.0, 1.0, 2.0]).unwrap(),
            0.5
        );
        assert!(auroc(&[], &[1.0]).is_err());
    }

    fn set(name: &str, v: Vec<f64>) -> ScoreSet {
        ScoreSet::new(name, ScoreKind::Energy, v).unwrap()
    }

    #[test]
    fn suite_average_is_unweighted() {
        let id = set("id", range(1, 10));
        // FPR 0.2 (2 of 10 at or above λ = 2) and 0.4 (2 of 5)
        let a = set(
            "a",
            vec![-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 0.5, 0.7, 2.0, 3.0],
        );
        let b = set("b", vec![-1.0, 0.0, 1.0, 5.0, 6.0]);
        let ev = evaluate_suite(&id, &[a.clone(), b], 0.9).unwrap();
        assert_eq!(ev.results[0].lambda, 2.0);
        assert_eq!(ev.results[0].fpr95, 0.2);
        assert_eq!(ev.results[1].fpr95, 0.4);
        assert!((ev.average.fpr95 - 0.3).abs() < 1e-15);

        let single = evaluate_suite(&id, &[a], 0.9).unwrap();
        assert_eq!(single.average.fpr95, single.results[0].fpr95);
        assert_eq!(single.average.auroc, single.results[0].auroc);
        assert!(single
            .to_csv()
            .ends_with(&format!("average,{},{},,,\n", 0.2, single.results[0].auroc)));
    }

    fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut total = 0.0;
        for &a in id {
            for &b in ood {
                total += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (id.len() * ood.len()) as f64
    }

    // scores on a coarse grid so ties are frequent
    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-20i32..20).prop_map(|v| f64::from(v) * 0.5), 1..60)
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_count(id in scores(), ood in scores()) {
            prop_assert_eq!(auroc(&id, &ood).unwrap(), brute_auroc(&id, &ood));
        }

        #[test]
        fn auroc_antisymmetric(id in scores(), ood in scores()) {
            prop_assert_eq!(auroc(&id, &ood).unwrap() + auroc(&ood, &id).unwrap(), 1.0);
        }

        #[test]
        fn metrics_invariant_under_affine_maps(id in scores(), ood in scores(), a in 1i32..8, b in -10i32..10) {
            // a power of two scale and an integer shift keep the grid exact
            let f = |v: &f64| v * f64::from(1 << (a % 4)) + f64::from(b);
            let id2: Vec<f64> = id.iter().map(f).collect();
            let ood2: Vec<f64> = ood.iter().map(f).collect();
            prop_assert_eq!(auroc(&id, &ood).unwrap(), auroc(&id2, &ood2).unwrap());
            prop_assert_eq!(fpr_at_tpr(&id, &ood, 0.95).unwrap(), fpr_at_tpr(&id2, &ood2, 0.95).unwrap());
        }

        #[test]
        fn lambda_is_tight(id in scores(), tpr in 0.05f64..1.0) {
            let lambda = calibrate_lambda(&id, tpr).unwrap();
            let achieved = fraction_at_or_above(&id, lambda);
            prop_assert!(achieved + 1e-12 >= tpr);
            if let Some(next) = id.iter().copied().filter(|&v| v > lambda).reduce(f64::min) {
                prop_assert!(fraction_at_or_above(&id, next) + 1e-12 < tpr);
            }
        }

        #[test]
        fn shifting_id_up_never_raises_fpr(id in scores(), ood in scores(), delta in 0.0f64..5.0) {
            let up: Vec<f64> = id.iter().map(|v| v + delta).collect();
            prop_assert!(fpr_at_tpr(&up, &ood, 0.95).unwrap() <= fpr_at_tpr(&id, &ood, 0.95).unwrap());
        }
    }
}
