use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{check_label, FcmOverrides};
use crate::bpe::BpeParams;
use crate::error::{Error, Result};
use crate::fcm::{EllipseExclusion, FcmParams, IntensityThreshold};
use crate::patch::{BackendSpec, DEFAULT_PATCH_SIZE};
use crate::preprocess::PreprocParams;
use crate::stats::BootstrapParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcmConfig {
    pub params: FcmParams,
    pub threshold: IntensityThreshold,
    /// `None` uses [`EllipseExclusion::default_for`] the case's grid.
    pub ellipse: Option<EllipseExclusion>,
    /// Defaults per operator label.
    pub operators: BTreeMap<String, FcmOverrides>,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            params: FcmParams::default(),
            threshold: IntensityThreshold::default(),
            ellipse: None,
            operators: BTreeMap::new(),
        }
    }
}

/// Settings of the semi-automated route after all overrides are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveFcm {
    pub params: FcmParams,
    pub threshold: IntensityThreshold,
    pub ellipse: EllipseExclusion,
}

impl FcmConfig {
    /// Merge order, lowest first: config, config operator, case, case
    /// operator.
    pub fn effective(
        &self,
        operator: &str,
        case: &FcmOverrides,
        case_ops: &BTreeMap<String, FcmOverrides>,
        dims: [usize; 3],
    ) -> Result<EffectiveFcm> {
        let none = FcmOverrides::default();
        let merged = FcmOverrides {
            threshold: Some(self.threshold),
            ellipse: self.ellipse,
            prob_threshold: Some(self.params.prob_threshold),
        }
        .overlay(self.operators.get(operator).unwrap_or(&none))
        .overlay(case)
        .overlay(case_ops.get(operator).unwrap_or(&none));
        let mut params = self.params.clone();
        params.prob_threshold = merged.prob_threshold.unwrap_or(params.prob_threshold);
        params.validate()?;
        let ellipse = merged.ellipse.unwrap_or_else(|| EllipseExclusion::default_for(dims));
        ellipse.validate()?;
        Ok(EffectiveFcm {
            params,
            threshold: merged.threshold.unwrap_or_default(),
            ellipse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlConfig {
    pub patch_size: [usize; 3],
    pub breast: Option<BackendSpec>,
    pub fgt_vessel: Option<BackendSpec>,
}

impl Default for DlConfig {
    fn default() -> Self {
        DlConfig {
            patch_size: DEFAULT_PATCH_SIZE,
            breast: None,
            fgt_vessel: None,
        }
    }
}

/// Bootstrap settings of the report; the seed comes from the pipeline seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub resamples: usize,
    pub level: f64,
    pub max_redraws: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let b = BootstrapParams::default();
        ReportConfig {
            resamples: b.resamples,
            level: b.level,
            max_redraws: b.max_redraws,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocParams,
    pub fcm: FcmConfig,
    pub bpe: BpeParams,
    pub dl: DlConfig,
    pub report: ReportConfig,
    pub out: Option<PathBuf>,
    /// The only source of randomness in a run.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        if let Some(out) = &c.out {
            if out.is_relative() {
                c.out = Some(path.parent().unwrap_or(Path::new("")).join(out));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.preprocess.validate().map_err(wrap)?;
        self.fcm.params.validate().map_err(wrap)?;
        if let Some(e) = &self.fcm.ellipse {
            e.validate().map_err(wrap)?;
        }
        for (op, o) in &self.fcm.operators {
            check_label("operator", op)?;
            if let Some(e) = &o.ellipse {
                e.validate().map_err(wrap)?;
            }
        }
        self.bpe.validate().map_err(wrap)?;
        if self.dl.patch_size.contains(&0) {
            return Err(Error::Config("dl.patch_size must be positive".into()));
        }
        self.bootstrap().validate().map_err(wrap)?;
        Ok(())
    }

    pub fn bootstrap(&self) -> BootstrapParams {
        BootstrapParams {
            resamples: self.report.resamples,
            level: self.report.level,
            seed: self.seed,
            max_redraws: self.report.max_redraws,
        }
    }
}
