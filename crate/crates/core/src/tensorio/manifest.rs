//! Per-split dataset manifests and the suite file that groups them.
//!
//! Relative paths inside a manifest resolve against the manifest's own
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{read_header, read_labels, read_tensor};
use super::{ActivationBatch, FeatureBatch, StatKind};
use crate::error::{Error, Result};
use crate::scoring::ClassifierHead;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub split_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub head_weights: PathBuf,
    pub head_bias: PathBuf,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub source: PathBuf,
}

impl DatasetManifest {
    fn base_dir(&self) -> &Path {
        self.source.parent().unwrap_or_else(|| Path::new(""))
    }

    /// Resolve a manifest-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Parse a split manifest. Does not touch referenced files; see
/// [`validate_manifest`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut m: DatasetManifest = read_json(path)?;
    m.source = path.to_path_buf();
    if m.activations.is_none() && m.features.is_none() {
        return Err(Error::SchemaViolation {
            path: path.to_path_buf(),
            reason: "one of `activations` or `features` is required".into(),
        });
    }
    Ok(m)
}

/// Check that every referenced file exists and that shapes agree.
pub fn validate_manifest(m: &DatasetManifest) -> Result<()> {
    let header = |key: &str, p: &Path| -> Result<Vec<usize>> {
        let full = m.resolve(p);
        if !full.exists() {
            return Err(Error::SchemaViolation {
                path: m.source.clone(),
                reason: format!("`{key}` file {} does not exist", full.display()),
            });
        }
        Ok(read_header(&full)?.shape)
    };

    let w = header("head_weights", &m.head_weights)?;
    let b = header("head_bias", &m.head_bias)?;
    let (n, c) = match w[..] {
        [n, c] => (n, c),
        _ => {
            return Err(Error::InvalidShape {
                shape: w,
                reason: "head_weights must be rank 2".into(),
            })
        }
    };
    if b != [c] {
        return Err(Error::shape(
            format!("head_bias {b:?}"),
            format!("head_weights {w:?}"),
            format!("expected bias shape [{c}]"),
        ));
    }

    let mut samples = None;
    if let Some(p) = &m.features {
        let f = header("features", p)?;
        match f[..] {
            [rows, width] if width == n => samples = Some((rows, "features")),
            [_, width] => {
                return Err(Error::shape(
                    format!("features {f:?}"),
                    format!("head_weights {w:?}"),
                    format!("feature width {width} != head inputs {n}"),
                ))
            }
            _ => {
                return Err(Error::InvalidShape {
                    shape: f,
                    reason: "features must be rank 2".into(),
                })
            }
        }
    }
    if let Some(p) = &m.activations {
        let a = header("activations", p)?;
        let (rows, channels) = match a[..] {
            [rows, channels, h, w2] if h == w2 => (rows, channels),
            _ => {
                return Err(Error::InvalidShape {
                    shape: a,
                    reason: "activations must be rank 4 with square maps".into(),
                })
            }
        };
        if channels != n {
            return Err(Error::shape(
                format!("activations {a:?}"),
                format!("head_weights {w:?}"),
                format!("channel count {channels} != head inputs {n}"),
            ));
        }
        if let Some((other, name)) = samples {
            if other != rows {
                return Err(Error::shape(
                    format!("activations {a:?}"),
                    name,
                    format!("sample counts {rows} and {other} differ"),
                ));
            }
        }
        samples = Some((rows, "activations"));
    }
    if let Some(p) = &m.labels {
        let l = header("labels", p)?;
        let (rows, name) = samples.expect("load_manifest guarantees a data file");
        if l != [rows] {
            return Err(Error::shape(
                format!("labels {l:?}"),
                name,
                format!("expected {rows} labels"),
            ));
        }
    }
    Ok(())
}

/// A fully loaded split.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub name: String,
    pub activations: Option<ActivationBatch>,
    pub features: Option<FeatureBatch>,
    pub labels: Option<Vec<i64>>,
    pub head: ClassifierHead,
}

impl LoadedSplit {
    pub fn samples(&self) -> usize {
        self.activations
            .as_ref()
            .map(|a| a.samples())
            .or_else(|| self.features.as_ref().map(|f| f.samples()))
            .unwrap_or(0)
    }
}

pub fn load_split(m: &DatasetManifest) -> Result<LoadedSplit> {
    validate_manifest(m)?;
    let head = ClassifierHead::from_tensors(
        &read_tensor(m.resolve(&m.head_weights))?,
        &read_tensor(m.resolve(&m.head_bias))?,
    )?;
    let activations = m
        .activations
        .as_ref()
        .map(|p| read_tensor(m.resolve(p)).and_then(ActivationBatch::from_tensor))
        .transpose()?;
    let features = m
        .features
        .as_ref()
        .map(|p| {
            read_tensor(m.resolve(p)).and_then(|t| FeatureBatch::from_tensor(&t, StatKind::RawGap))
        })
        .transpose()?;
    let labels = m
        .labels
        .as_ref()
        .map(|p| read_labels(m.resolve(p)))
        .transpose()?;
    Ok(LoadedSplit {
        name: m.split_name.clone(),
        activations,
        features,
        labels,
        head,
    })
}

/// Top-level suite: one ID test split, an optional ID training split for
/// fit-time statistics, an optional proxy validation split, and any number
/// of named OOD splits. Entries are paths to split manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub id: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_val: Option<PathBuf>,
    #[serde(default)]
    pub ood: Vec<PathBuf>,
    #[serde(skip)]
    pub source: PathBuf,
}

impl SuiteManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.source
                .parent()
                .unwrap_or_else(|| Path::new(""))
                .join(p)
        }
    }

    /// Every split manifest path, resolved, in suite order.
    pub fn manifest_paths(&self) -> Vec<PathBuf> {
        std::iter::once(&self.id)
            .chain(&self.id_train)
            .chain(&self.proxy_val)
            .chain(&self.ood)
            .map(|p| self.resolve(p))
            .collect()
    }
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<SuiteManifest> {
    let path = path.as_ref();
    let mut s: SuiteManifest = read_json(path)?;
    s.source = path.to_path_buf();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{write_labels, write_tensor, TensorFile};

    fn put(dir: &Path, name: &str, shape: &[usize]) {
        let n = shape.iter().product();
        write_tensor(
            &TensorFile::new(shape.to_vec(), vec![0.5; n]).unwrap(),
            dir.join(name),
        )
        .unwrap();
    }

    fn manifest(dir: &Path, body: &str) -> Result<DatasetManifest> {
        let p = dir.join("split.json");
        fs::write(&p, body).unwrap();
        load_manifest(&p)
    }

    #[test]
    fn valid_feature_manifest() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), "f.npy", &[5, 8]);
        put(dir.path(), "w.npy", &[8, 3]);
        put(dir.path(), "b.npy", &[3]);
        write_labels(&[0, 1, 2, 0, 1], dir.path().join("y.npy")).unwrap();
        let m = manifest(
            dir.path(),
            r#"{"split_name":"id_test","features":"f.npy","labels":"y.npy",
                "head_weights":"w.npy","head_bias":"b.npy","metadata":{"model":"toy"}}"#,
        )
        .unwrap();
        validate_manifest(&m).unwrap();
        let split = load_split(&m).unwrap();
        assert_eq!(split.samples(), 5);
        assert_eq!(split.head.classes(), 3);
    }

    #[test]
    fn head_width_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), "f.npy", &[5, 8]);
        put(dir.path(), "w.npy", &[7, 3]);
        put(dir.path(), "b.npy", &[3]);
        let m = manifest(
            dir.path(),
            r#"{"split_name":"id_test","features":"f.npy","head_weights":"w.npy","head_bias":"b.npy"}"#,
        )
        .unwrap();
        match validate_manifest(&m) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert!(left.contains("features"));
                assert!(right.contains("head_weights"));
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn needs_activations_or_features() {
        let dir = tempfile::tempdir().unwrap();
        let err = manifest(
            dir.path(),
            r#"{"split_name":"id_test","head_weights":"w.npy","head_bias":"b.npy"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SchemaViolation { .. }));
    }

    #[test]
    fn unknown_key_and_missing_file_are_schema_violations() {
        let dir = tempfile::tempdir().unwrap();
        let err = manifest(
            dir.path(),
            r#"{"split_name":"x","feature":"f.npy","head_weights":"w.npy","head_bias":"b.npy"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SchemaViolation { .. }));

        let m = manifest(
            dir.path(),
            r#"{"split_name":"x","features":"missing.npy","head_weights":"w.npy","head_bias":"b.npy"}"#,
        )
        .unwrap();
        assert!(matches!(
            validate_manifest(&m),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn label_count_and_activation_channels_checked() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), "a.npy", &[4, 6, 2, 2]);
        put(dir.path(), "w.npy", &[6, 2]);
        put(dir.path(), "b.npy", &[2]);
        write_labels(&[0, 1, 1], dir.path().join("y.npy")).unwrap();
        let m = manifest(
            dir.path(),
            r#"{"split_name":"x","activations":"a.npy","labels":"y.npy","head_weights":"w.npy","head_bias":"b.npy"}"#,
        )
        .unwrap();
        assert!(matches!(
            validate_manifest(&m),
            Err(Error::ShapeMismatch { .. })
        ));

        put(dir.path(), "w5.npy", &[5, 2]);
        let m = manifest(
            dir.path(),
            r#"{"split_name":"x","activations":"a.npy","head_weights":"w5.npy","head_bias":"b.npy"}"#,
        )
        .unwrap();
        assert!(matches!(
            validate_manifest(&m),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
