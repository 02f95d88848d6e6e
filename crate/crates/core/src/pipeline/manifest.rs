use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{EllipseExclusion, IntensityThreshold};
use crate::stats::QualitativeBpe;

/// BI-RADS breast density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DensityCategory {
    #[serde(rename = "fatty")]
    Fatty,
    #[serde(rename = "scattered")]
    Scattered,
    #[serde(rename = "heterogeneously dense")]
    HeterogeneouslyDense,
    #[serde(rename = "extremely dense")]
    ExtremelyDense,
}

impl DensityCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityCategory::Fatty => "fatty",
            DensityCategory::Scattered => "scattered",
            DensityCategory::HeterogeneouslyDense => "heterogeneously dense",
            DensityCategory::ExtremelyDense => "extremely dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::Config(format!(
                "unknown density category {s:?}; expected fatty, scattered, heterogeneously dense or extremely dense"
            ))
        })
    }
}

/// Operator adjustments to the semi-automated route. Unset fields fall
/// through to the next layer down.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcmOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<IntensityThreshold>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipse: Option<EllipseExclusion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_threshold: Option<f64>,
}

impl FcmOverrides {
    /// `other` wins wherever it is set.
    pub fn overlay(&self, other: &FcmOverrides) -> FcmOverrides {
        FcmOverrides {
            threshold: other.threshold.or(self.threshold),
            ellipse: other.ellipse.or(self.ellipse),
            prob_threshold: other.prob_threshold.or(self.prob_threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub case_id: String,
    /// Pre-contrast volume; relative paths resolve against the manifest.
    pub s0: PathBuf,
    /// First post-contrast volume.
    pub s1: PathBuf,
    #[serde(default)]
    pub qualitative_bpe: Option<QualitativeBpe>,
    #[serde(default)]
    pub density_category: Option<DensityCategory>,
    #[serde(default)]
    pub fcm: FcmOverrides,
    /// Per-operator overrides for this case, keyed by operator label.
    #[serde(default)]
    pub operators: BTreeMap<String, FcmOverrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub cases: Vec<CaseManifest>,
    /// Directory relative paths were resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Case ids and operator labels become directory names, so they are kept
/// to a conservative character set.
pub fn check_label(kind: &str, s: &str) -> Result<()> {
    let ok = !s.is_empty()
        && s.len() <= 128
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{kind} {s:?} must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'"
        )))
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn from_cases(cases: Vec<CaseManifest>, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
        let m = Manifest {
            cases,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::Config("manifest lists no cases".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cases {
            check_label("case_id", &c.case_id)?;
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::Config(format!("duplicate case_id {:?}", c.case_id)));
            }
            for op in c.operators.keys() {
                check_label("operator", op)?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn case(&self, id: &str) -> Option<&CaseManifest> {
        self.cases.iter().find(|c| c.case_id == id)
    }
}
