//! Suite orchestration: load every split once, fit a shaping pipeline on the
//! ID training split, score all splits, evaluate, and optionally sweep one
//! hyperparameter against the proxy validation split first.
//!
//! Reports carry no timestamps or absolute paths, so the same inputs and
//! configuration always serialise to the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{labels_for, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_suite, EvalResult, SuiteEvaluation, DEFAULT_TPR};
use crate::scoring::{
    accuracy, energy_score, logits, msp_score, ClassifierHead, LogitBatch, ScoreSet,
};
use crate::shaping::{pipeline_label, FittedPipeline, PipelineInput, ShapingConfig};
use crate::stats::{stats_from_batch, ChannelStats};
use crate::tensorio::{
    load_manifest, load_split, load_suite, read_json, write_labels, write_tensor, DatasetManifest,
    FeatureBatch, SuiteManifest,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_temperature() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreMethod {
    #[default]
    Energy,
    Msp,
    /// MSP with temperature scaling; 1000 by default.
    MspTemp {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

impl ScoreMethod {
    pub fn score(&self, logits: &LogitBatch, split_name: &str) -> Result<ScoreSet> {
        match self {
            ScoreMethod::Energy => energy_score(logits, split_name),
            ScoreMethod::Msp => msp_score(logits, 1.0, split_name),
            ScoreMethod::MspTemp { temperature } => msp_score(logits, *temperature, split_name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Fpr95,
    Auroc,
}

impl SelectionMetric {
    fn value(&self, r: &EvalResult) -> f64 {
        match self {
            SelectionMetric::Fpr95 => r.fpr95,
            SelectionMetric::Auroc => r.auroc,
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        match self {
            SelectionMetric::Fpr95 => a < b,
            SelectionMetric::Auroc => a > b,
        }
    }
}

fn default_proxy() -> String {
    "proxy_val".into()
}

/// One-dimensional hyperparameter sweep. Exactly one grid must be given.
/// `method` names the stage whose percentile is swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default = "default_proxy")]
    pub proxy_split: String,
}

impl SweepConfig {
    pub fn gamma(grid: Vec<f64>) -> Self {
        SweepConfig {
            gamma_grid: Some(grid),
            percentile_grid: None,
            method: None,
            selection_metric: SelectionMetric::Fpr95,
            proxy_split: default_proxy(),
        }
    }

    pub fn percentile(method: &str, grid: Vec<f64>) -> Self {
        SweepConfig {
            gamma_grid: None,
            percentile_grid: Some(grid),
            method: Some(method.into()),
            ..SweepConfig::gamma(Vec::new())
        }
    }

    fn grid(&self) -> Result<&[f64]> {
        let grid = match (&self.gamma_grid, &self.percentile_grid) {
            (Some(g), None) | (None, Some(g)) => g,
            _ => {
                return Err(Error::InvalidConfig(
                    "a sweep needs exactly one of gamma_grid and percentile_grid".into(),
                ))
            }
        };
        if grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "sweep grid values must be finite".into(),
            ));
        }
        Ok(grid)
    }

    /// The pipeline evaluated at one grid point.
    fn instantiate(&self, base: &[ShapingConfig], value: f64) -> Result<Vec<ShapingConfig>> {
        let mut stages = base.to_vec();
        if self.gamma_grid.is_some() {
            match stages.iter_mut().find(|s| s.is_davis()) {
                Some(ShapingConfig::DavisMuSigma { gamma }) => *gamma = value,
                Some(_) => {
                    return Err(Error::InvalidConfig(
                        "gamma sweep needs a davis_mu_sigma stage, found davis_m".into(),
                    ))
                }
                None => stages.insert(0, ShapingConfig::DavisMuSigma { gamma: value }),
            }
        } else {
            let method = self
                .method
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("percentile sweep needs `method`".into()))?;
            let stage = stages
                .iter_mut()
                .find(|s| s.method_name() == method)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("pipeline has no `{method}` stage to sweep"))
                })?;
            if !stage.set_percentile(value) {
                return Err(Error::InvalidConfig(format!(
                    "`{method}` has no percentile"
                )));
            }
        }
        Ok(stages)
    }
}

/// The file a `run` consumes. `suite` is relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub suite: PathBuf,
    #[serde(default)]
    pub pipeline: Vec<ShapingConfig>,
    #[serde(default)]
    pub score: ScoreMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_tpr")]
    pub tpr: f64,
}

fn default_tpr() -> f64 {
    DEFAULT_TPR
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<(RunConfig, PathBuf)> {
    let path = path.as_ref();
    let cfg: RunConfig = read_json(path)?;
    let suite = if cfg.suite.is_absolute() {
        cfg.suite.clone()
    } else {
        path.parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&cfg.suite)
    };
    Ok((cfg, suite))
}

/// A split reduced to what scoring needs: channel statistics when
/// activations were dumped, pooled features otherwise.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub name: String,
    pub stats: Option<ChannelStats>,
    pub features: Option<FeatureBatch>,
    pub labels: Option<Vec<i64>>,
}

impl PreparedSplit {
    fn from_manifest(m: &DatasetManifest) -> Result<(Self, ClassifierHead)> {
        let split = load_split(m)?;
        let stats = split.activations.as_ref().map(stats_from_batch);
        let prepared = PreparedSplit {
            name: split.name,
            features: if stats.is_some() {
                None
            } else {
                split.features
            },
            stats,
            labels: split.labels,
        };
        Ok((prepared, split.head))
    }

    pub fn input(&self) -> PipelineInput<'_> {
        match (&self.stats, &self.features) {
            (Some(s), _) => PipelineInput::Stats(s),
            (None, Some(f)) => PipelineInput::Features(f),
            (None, None) => unreachable!("manifests always carry activations or features"),
        }
    }

    /// GAP features, the input of the unshaped branch.
    pub fn raw_features(&self) -> &FeatureBatch {
        match (&self.stats, &self.features) {
            (Some(s), _) => &s.mean,
            (None, Some(f)) => f,
            (None, None) => unreachable!("manifests always carry activations or features"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    /// SHA-256 of the suite file and of every split manifest, keyed by the
    /// path as written in the suite.
    pub manifest_sha256: BTreeMap<String, String>,
    /// `seed` entries found in split manifest metadata.
    pub seeds: Vec<u64>,
}

/// A loaded suite with the classifier head shared by its splits.
#[derive(Debug, Clone)]
pub struct Suite {
    pub id: PreparedSplit,
    /// Split used for fit-time statistics; the ID split when the suite has none.
    pub id_train: PreparedSplit,
    pub proxy_val: Option<PreparedSplit>,
    pub ood: Vec<PreparedSplit>,
    pub head: ClassifierHead,
    pub provenance: Provenance,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

impl Suite {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = load_suite(path)?;
        Suite::from_manifest(&manifest)
    }

    pub fn from_manifest(suite: &SuiteManifest) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        let suite_key = suite
            .source
            .file_name()
            .map_or_else(|| "suite".into(), |n| n.to_string_lossy().into_owned());
        hashes.insert(suite_key, sha256_file(&suite.source)?);
        let mut seeds = Vec::new();
        let mut head: Option<ClassifierHead> = None;

        let mut load = |rel: &Path| -> Result<PreparedSplit> {
            let path = suite.resolve(rel);
            hashes.insert(rel.to_string_lossy().into_owned(), sha256_file(&path)?);
            let m = load_manifest(&path)?;
            if let Some(seed) = m.metadata.get("seed").and_then(|v| v.as_u64()) {
                seeds.push(seed);
            }
            let (split, h) = PreparedSplit::from_manifest(&m)?;
            match &head {
                None => head = Some(h),
                Some(first) if first.inputs() != h.inputs() || first.classes() != h.classes() => {
                    return Err(Error::shape(
                        format!("head of `{}` ({}x{})", split.name, h.inputs(), h.classes()),
                        format!("suite head ({}x{})", first.inputs(), first.classes()),
                        "every split must share one classifier head",
                    ))
                }
                Some(first) if *first != h => {
                    log::warn!(
                        "split `{}` ships different head weights; using the ID split's head",
                        split.name
                    )
                }
                Some(_) => {}
            }
            Ok(split)
        };

        let id = load(&suite.id)?;
        let id_train = match &suite.id_train {
            Some(p) => load(p)?,
            None => {
                log::warn!(
                    "suite has no id_train split; fitting shaping statistics on the ID test split"
                );
                id.clone()
            }
        };
        let proxy_val = suite.proxy_val.as_deref().map(&mut load).transpose()?;
        let ood = suite
            .ood
            .iter()
            .map(|p| load(p))
            .collect::<Result<Vec<_>>>()?;
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Suite {
            id,
            id_train,
            proxy_val,
            ood,
            head: head.expect("the ID split was loaded"),
            provenance: Provenance {
                toolkit_version: TOOLKIT_VERSION.into(),
                manifest_sha256: hashes,
                seeds,
            },
        })
    }

    /// The proxy split, found by name among the proxy and OOD splits.
    pub fn split_named(&self, name: &str) -> Result<&PreparedSplit> {
        self.proxy_val
            .iter()
            .chain(&self.ood)
            .find(|s| s.name == name)
            .ok_or_else(|| Error::MissingSplit(name.into()))
    }

    /// Accuracy of the unshaped GAP branch on the labelled ID split.
    pub fn id_accuracy(&self) -> Result<Option<f64>> {
        self.id
            .labels
            .as_ref()
            .map(|labels| accuracy(&logits(self.id.raw_features(), &self.head)?, labels))
            .transpose()
    }
}

/// Scores of the given splits under a fitted pipeline.
pub fn score_splits(
    fitted: &FittedPipeline,
    head: &ClassifierHead,
    method: ScoreMethod,
    splits: &[&PreparedSplit],
) -> Result<Vec<ScoreSet>> {
    let head = fitted.head(head)?;
    splits
        .iter()
        .map(|s| method.score(&logits(&fitted.apply(s.input())?, &head)?, &s.name))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub pipeline: String,
    pub proxy: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    /// Grid points in grid order.
    pub points: Vec<SweepPoint>,
    pub chosen_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: String,
    pub stages: Vec<ShapingConfig>,
    pub score: ScoreMethod,
    pub tpr: f64,
    /// ID accuracy of the unshaped GAP branch; shaping only feeds the detector.
    pub id_accuracy: Option<f64>,
    pub evaluation: SuiteEvaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepReport>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialise");
        s.push('\n');
        s
    }
}

/// Fit on the ID training split, score ID and every OOD split, evaluate.
pub fn run_suite(
    suite: &Suite,
    pipeline: &[ShapingConfig],
    score: ScoreMethod,
    tpr: f64,
) -> Result<RunReport> {
    if suite.ood.is_empty() {
        return Err(Error::EmptySet("suite has no OOD splits".into()));
    }
    let fitted = FittedPipeline::fit(pipeline, suite.id_train.input(), &suite.head)?;
    let mut splits = vec![&suite.id];
    splits.extend(&suite.ood);
    let mut scores = score_splits(&fitted, &suite.head, score, &splits)?;
    let ood = scores.split_off(1);
    Ok(RunReport {
        pipeline: pipeline_label(pipeline),
        stages: pipeline.to_vec(),
        score,
        tpr,
        id_accuracy: suite.id_accuracy()?,
        evaluation: evaluate_suite(&scores[0], &ood, tpr)?,
        sweep: None,
        provenance: suite.provenance.clone(),
    })
}

/// Index of the best grid point: best metric, ties to the smaller value.
pub fn select(points: &[SweepPoint], metric: SelectionMetric) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let (a, b) = (metric.value(&p.proxy), metric.value(&points[best].proxy));
        if metric.better(a, b) || (a == b && p.value < points[best].value) {
            best = i;
        }
    }
    best
}

/// Evaluate every grid point on (ID, proxy), pick one, then report the
/// held-out OOD results at the chosen point.
pub fn sweep(
    suite: &Suite,
    base: &[ShapingConfig],
    score: ScoreMethod,
    config: &SweepConfig,
    tpr: f64,
) -> Result<RunReport> {
    let grid = config.grid()?;
    let proxy = suite.split_named(&config.proxy_split)?;
    let points = grid
        .par_iter()
        .map(|&value| -> Result<SweepPoint> {
            let stages = config.instantiate(base, value)?;
            let fitted = FittedPipeline::fit(&stages, suite.id_train.input(), &suite.head)?;
            let s = score_splits(&fitted, &suite.head, score, &[&suite.id, proxy])?;
            Ok(SweepPoint {
                value,
                pipeline: pipeline_label(&stages),
                proxy: evaluate(&s[0], &s[1], tpr)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = points[select(&points, config.selection_metric)].value;
    let mut report = run_suite(suite, &config.instantiate(base, chosen)?, score, tpr)?;
    report.sweep = Some(SweepReport {
        config: config.clone(),
        points,
        chosen_value: chosen,
    });
    Ok(report)
}

pub fn sweep_gamma(
    suite: &Suite,
    grid: Vec<f64>,
    metric: SelectionMetric,
    score: ScoreMethod,
    tpr: f64,
) -> Result<RunReport> {
    let config = SweepConfig {
        selection_metric: metric,
        ..SweepConfig::gamma(grid)
    };
    sweep(
        suite,
        &[ShapingConfig::DavisMuSigma { gamma: 0.0 }],
        score,
        &config,
        tpr,
    )
}

/// Percentile sweep of the `method` stage of `base`.
pub fn sweep_percentile(
    suite: &Suite,
    base: &[ShapingConfig],
    method: &str,
    grid: Vec<f64>,
    metric: SelectionMetric,
    score: ScoreMethod,
    tpr: f64,
) -> Result<RunReport> {
    let config = SweepConfig {
        selection_metric: metric,
        ..SweepConfig::percentile(method, grid)
    };
    sweep(suite, base, score, &config, tpr)
}

/// Execute a run config: a sweep when one is configured, a plain run otherwise.
pub fn execute(config: &RunConfig, suite: &Suite) -> Result<RunReport> {
    match &config.sweep {
        Some(s) => sweep(suite, &config.pipeline, config.score, s, config.tpr),
        None => run_suite(suite, &config.pipeline, config.score, config.tpr),
    }
}

/// Methods-by-OOD-set table: one row per report, FPR95 and AUROC columns for
/// every OOD set and the average. All reports must cover the same OOD sets.
pub fn methods_csv(reports: &[RunReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::EmptySet("no reports to tabulate".into()));
    };
    let sets: Vec<&str> = first
        .evaluation
        .results
        .iter()
        .map(|r| r.ood_set.as_str())
        .collect();
    let mut out = String::from("method");
    for s in sets.iter().copied().chain(["average"]) {
        out.push_str(&format!(",{s}_fpr95,{s}_auroc"));
    }
    out.push('\n');
    for r in reports {
        let these: Vec<&str> = r
            .evaluation
            .results
            .iter()
            .map(|e| e.ood_set.as_str())
            .collect();
        if these != sets {
            return Err(Error::InvalidConfig(format!(
                "report `{}` covers OOD sets {these:?}, expected {sets:?}",
                r.pipeline
            )));
        }
        out.push_str(&r.pipeline.replace(',', ";"));
        for e in &r.evaluation.results {
            out.push_str(&format!(",{},{}", e.fpr95, e.auroc));
        }
        out.push_str(&format!(
            ",{},{}\n",
            r.evaluation.average.fpr95, r.evaluation.average.auroc
        ));
    }
    Ok(out)
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a complete synthetic suite (ID, ID training, proxy validation and
/// one OOD split sharing one head) into `dir` and return the suite path.
///
/// The proxy split is drawn from the OOD parameters with its own stream, so
/// it stands in for the noise-perturbed validation set that real extractions
/// provide.
pub fn write_synthetic_suite(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let head = spec.draw_head()?;
    let (w, b) = head.to_tensors();
    write_tensor(&w, dir.join("head_weights.npy"))?;
    write_tensor(&b, dir.join("head_bias.npy"))?;

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), serde_json::json!("synthetic"));
    metadata.insert("seed".to_string(), serde_json::json!(spec.seed));
    metadata.insert(
        "spec".to_string(),
        serde_json::to_value(spec).expect("spec serialises"),
    );

    let splits = [
        ("id_test", Split::Id, true),
        ("id_train", Split::IdTrain, true),
        ("proxy_val", Split::Proxy, false),
        ("synthetic_ood", Split::Ood, false),
    ];
    for (name, split, labelled) in splits {
        let acts = spec.draw_split(split)?;
        let act_file = format!("{name}_activations.npy");
        write_tensor(&acts.to_tensor(), dir.join(&act_file))?;
        let labels = if labelled {
            let file = format!("{name}_labels.npy");
            write_labels(&labels_for(&acts, &head)?, dir.join(&file))?;
            Some(PathBuf::from(file))
        } else {
            None
        };
        let manifest = DatasetManifest {
            split_name: name.into(),
            activations: Some(act_file.into()),
            features: None,
            labels,
            head_weights: "head_weights.npy".into(),
            head_bias: "head_bias.npy".into(),
            metadata: metadata.clone(),
            source: PathBuf::new(),
        };
        write_json(&manifest, &dir.join(format!("{name}.json")))?;
    }
    let suite = SuiteManifest {
        id: "id_test.json".into(),
        id_train: Some("id_train.json".into()),
        proxy_val: Some("proxy_val.json".into()),
        ood: vec!["synthetic_ood.json".into()],
        source: PathBuf::new(),
    };
    let path = dir.join("suite.json");
    write_json(&suite, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(value: f64, fpr95: f64, auroc: f64) -> SweepPoint {
        SweepPoint {
            value,
            pipeline: String::new(),
            proxy: EvalResult {
                ood_set: "p".into(),
                fpr95,
                auroc,
                lambda: 0.0,
                id_count: 1,
                ood_count: 1,
            },
        }
    }

    #[test]
    fn selection_prefers_metric_then_smaller_value() {
        let pts = [
            point(3.0, 0.1, 0.9),
            point(0.5, 0.1, 0.8),
            point(1.0, 0.2, 0.95),
        ];
        assert_eq!(select(&pts, SelectionMetric::Fpr95), 1);
        assert_eq!(select(&pts, SelectionMetric::Auroc), 2);
        assert_eq!(select(&pts[..1], SelectionMetric::Fpr95), 0);
    }

    #[test]
    fn sweep_config_instantiation() {
        let g = SweepConfig::gamma(vec![1.0]);
        assert_eq!(
            g.instantiate(&[], 2.0).unwrap(),
            vec![ShapingConfig::DavisMuSigma { gamma: 2.0 }]
        );
        assert!(g.instantiate(&[ShapingConfig::DavisM], 2.0).is_err());
        let p = SweepConfig::percentile("dice", vec![70.0]);
        let base = [
            ShapingConfig::DavisM,
            ShapingConfig::Dice { percentile: 90.0 },
        ];
        assert_eq!(
            p.instantiate(&base, 70.0).unwrap()[1],
            ShapingConfig::Dice { percentile: 70.0 }
        );
        assert!(p.instantiate(&[ShapingConfig::DavisM], 70.0).is_err());
        let both = SweepConfig {
            gamma_grid: Some(vec![1.0]),
            ..SweepConfig::percentile("dice", vec![70.0])
        };
        assert!(both.grid().is_err());
        assert!(SweepConfig::gamma(vec![]).grid().is_err());
    }

    #[test]
    fn run_config_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"suite":"s.json","pipeline":[{"method":"davis_mu_sigma","gamma":3.0},{"method":"dice","percentile":70}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.score, ScoreMethod::Energy);
        assert_eq!(cfg.tpr, 0.95);
        assert_eq!(cfg.pipeline.len(), 2);
        let t: ScoreMethod = serde_json::from_str(r#"{"method":"msp_temp"}"#).unwrap();
        assert_eq!(
            t,
            ScoreMethod::MspTemp {
                temperature: 1000.0
            }
        );
        assert!(serde_json::from_str::<RunConfig>(r#"{"suite":"s","bogus":1}"#).is_err());
    }

    #[test]
    fn methods_csv_layout() {
        let ev = SuiteEvaluation {
            tpr: 0.95,
            results: vec![point(0.0, 0.5, 0.75).proxy],
            average: crate::metrics::MacroAverage {
                fpr95: 0.5,
                auroc: 0.75,
            },
        };
        let r = RunReport {
            pipeline: "davis_m".into(),
            stages: vec![ShapingConfig::DavisM],
            score: ScoreMethod::Energy,
            tpr: 0.95,
            id_accuracy: None,
            evaluation: ev,
            sweep: None,
            provenance: Provenance {
                toolkit_version: TOOLKIT_VERSION.into(),
                manifest_sha256: BTreeMap::new(),
                seeds: vec![],
            },
        };
        assert_eq!(
            methods_csv(&[r]).unwrap(),
            "method,p_fpr95,p_auroc,average_fpr95,average_auroc\ndavis_m,0.5,0.75,0.5,0.75\n"
        );
    }
}
