//! Batch orchestration over a case manifest. Every stage reads and writes
//! plain files under one output directory:
//!
//! ```text
//! preprocessed/<case>/{s0.nii, s1.nii, provenance.json}
//! masks/<method>/<operator>/<case>/{breast.nii, fgt.nii, [vessel.nii], segmentation.json}
//! metrics/metrics.csv
//! report/{report.json, report.txt}
//! status/<stage>.json
//! ```
//!
//! A case that fails is recorded in the stage status and skipped; it never
//! aborts the batch.

mod config;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{DlConfig, EffectiveFcm, FcmConfig, PipelineConfig, ReportConfig};
pub use manifest::{check_label, CaseManifest, DensityCategory, FcmOverrides, Manifest};
pub use report::{
    read_labels_csv, read_scores_csv, render_text, run_report, write_labels_csv, write_report,
    write_scores_csv, AgreementEntry, CaseLabel, ComparisonEntry, CorrelationEntry, DiceEntry,
    DiceSummary, Outcome, ReaderScores, Report, ReportInputs, ScoreRow, ScoreTest,
    SCORES_HEADER,
};
pub use stages::{run_metrics, run_preprocess, run_segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fcm,
    Dl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fcm => "fcm",
            Method::Dl => "dl",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "fcm" => Ok(Method::Fcm),
            "dl" => Ok(Method::Dl),
            _ => Err(Error::Config(format!("method must be fcm or dl, got {s:?}"))),
        }
    }
}

/// A method run by one operator, written `method/operator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Selection {
    pub method: Method,
    pub operator: String,
}

impl Selection {
    pub fn new(method: Method, operator: &str) -> Result<Selection> {
        check_label("operator", operator)?;
        Ok(Selection {
            method,
            operator: operator.to_string(),
        })
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.method.as_str(), self.operator)
    }
}

impl FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Selection> {
        let (m, op) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("selection {s:?} is not method/operator")))?;
        Selection::new(m.parse()?, op)
    }
}

/// Paths inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn preprocessed(&self, case: &str) -> PathBuf {
        self.root.join("preprocessed").join(case)
    }

    pub fn masks(&self, sel: &Selection, case: &str) -> PathBuf {
        self.root
            .join("masks")
            .join(sel.method.as_str())
            .join(&sel.operator)
            .join(case)
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics").join("metrics.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn status(&self, stage: &str) -> PathBuf {
        self.root.join("status").join(format!("{stage}.json"))
    }

    /// Every `method/operator` with at least one segmented case, sorted. A
    /// run where every case failed leaves nothing to discover.
    pub fn discover_selections(&self) -> Result<Vec<Selection>> {
        let mut out = Vec::new();
        for method in [Method::Fcm, Method::Dl] {
            let dir = self.root.join("masks").join(method.as_str());
            let entries = match std::fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(Error::io(&dir, e)),
            };
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let segmented = std::fs::read_dir(entry.path())
                    .map(|cases| cases.flatten().any(|c| c.path().join("fgt.nii").exists()))
                    .unwrap_or(false);
                if segmented {
                    if let Some(name) = entry.file_name().to_str() {
                        out.push(Selection::new(method, name)?);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub stage: String,
    pub case_id: String,
    pub error: String,
}

/// Outcome of one stage over the manifest, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub succeeded: Vec<String>,
    pub failures: Vec<CaseFailure>,
}

impl StageReport {
    fn collect(stage: String, ids: &[String], results: Vec<Result<()>>) -> StageReport {
        let mut succeeded = Vec::new();
        let mut failures = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r {
                Ok(()) => succeeded.push(id.clone()),
                Err(e) => {
                    log::warn!("{stage}: case {id} failed: {e}");
                    failures.push(CaseFailure {
                        stage: stage.clone(),
                        case_id: id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        StageReport {
            stage,
            succeeded,
            failures,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn write(&self, layout: &Layout) -> Result<()> {
        write_json(&layout.status(&self.stage), self)
    }
}

/// Failures recorded by earlier stages, read from `status/*.json`.
pub fn recorded_failures(layout: &Layout) -> Result<Vec<CaseFailure>> {
    let dir = layout.root.join("status");
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let r: StageReport = serde_json::from_str(&text)?;
        out.extend(r.failures);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Pretty JSON with a trailing newline, written atomically.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    crate::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_round_trip() {
        let s: Selection = "fcm/op1".parse().unwrap();
        assert_eq!(s.to_string(), "fcm/op1");
        assert!("fcm".parse::<Selection>().is_err());
        assert!("svm/op1".parse::<Selection>().is_err());
        assert!("dl/a/b".parse::<Selection>().is_err());
        // semi-automated namespaces sort first
        assert!(Selection::from_str("fcm/z").unwrap() < Selection::from_str("dl/a").unwrap());
    }

    #[test]
    fn discovers_mask_namespaces() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        assert!(layout.discover_selections().unwrap().is_empty());
        for s in ["fcm/op2", "dl/default", "fcm/op1", "dl/failed"] {
            let dir = layout.masks(&s.parse().unwrap(), "c1");
            std::fs::create_dir_all(&dir).unwrap();
            if s != "dl/failed" {
                std::fs::write(dir.join("fgt.nii"), b"").unwrap();
            }
        }
        let found: Vec<String> = layout
            .discover_selections()
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(found, ["fcm/op1", "fcm/op2", "dl/default"]);
    }
}
