use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    sha256_file, write_json, CaseFailure, EffectiveFcm, Layout, Manifest, Method, PipelineConfig,
    Selection, StageReport,
};
use crate::bpe::{
    compute_bpe_mask, compute_metrics, compute_pe_map, write_metrics_csv, MetricsRow,
};
use crate::error::{Error, Result};
use crate::fcm::{apply_probability_threshold, fcm_cluster, threshold_breast_mask};
use crate::io::{read_mask, read_volume, write_atomic, write_mask, write_volume};
use crate::patch::segment_dl;
use crate::preprocess::{register_inplane, resample_isotropic, Affine2D, PreprocParams};
use crate::volume::{DceSeries, Volume3D};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RegistrationRecord {
    transform: Affine2D,
    identity_fallback: bool,
    objective_identity: f64,
    objective: f64,
    correlation: f64,
}

#[derive(Serialize)]
struct Provenance<'a> {
    case_id: &'a str,
    tool_version: &'static str,
    inputs: [InputRecord; 2],
    params: &'a PreprocParams,
    registration: RegistrationRecord,
    outputs: [InputRecord; 2],
}

/// Registers S1 to S0, resamples both to the target spacing and writes
/// them with a provenance record.
pub fn run_preprocess(manifest: &Manifest, config: &PipelineConfig, layout: &Layout) -> Result<StageReport> {
    config.validate()?;
    let results: Vec<Result<()>> = manifest
        .cases
        .par_iter()
        .map(|c| {
            let (p0, p1) = (manifest.resolve(&c.s0), manifest.resolve(&c.s1));
            let (s0, s1) = (read_volume(&p0)?, read_volume(&p1)?);
            let reg = register_inplane(&s1, &s0, &config.preprocess)?;
            if reg.identity_fallback {
                log::info!("{}: registration kept the identity", c.case_id);
            }
            let spacing = config.preprocess.target_spacing;
            let s0r = resample_isotropic(&s0, spacing)?;
            let s1r = resample_isotropic(&reg.resampled, spacing)?;

            let dir = layout.preprocessed(&c.case_id);
            ensure_dir(&dir)?;
            let (o0, o1) = (dir.join("s0.nii"), dir.join("s1.nii"));
            write_volume(&s0r, &o0)?;
            write_volume(&s1r, &o1)?;
            let record = |shown: &Path, actual: &Path| -> Result<InputRecord> {
                Ok(InputRecord {
                    path: shown.display().to_string(),
                    sha256: sha256_file(actual)?,
                })
            };
            let prov = Provenance {
                case_id: &c.case_id,
                tool_version: env!("CARGO_PKG_VERSION"),
                inputs: [record(&c.s0, &p0)?, record(&c.s1, &p1)?],
                params: &config.preprocess,
                registration: RegistrationRecord {
                    transform: reg.transform,
                    identity_fallback: reg.identity_fallback,
                    objective_identity: reg.objective_identity,
                    objective: reg.objective,
                    correlation: reg.correlation,
                },
                outputs: [
                    record(Path::new("s0.nii"), &o0)?,
                    record(Path::new("s1.nii"), &o1)?,
                ],
            };
            write_json(&dir.join("provenance.json"), &prov)
        })
        .collect();
    finish("preprocess".into(), manifest, results, layout)
}

fn finish(stage: String, manifest: &Manifest, results: Vec<Result<()>>, layout: &Layout) -> Result<StageReport> {
    let ids: Vec<String> = manifest.cases.iter().map(|c| c.case_id.clone()).collect();
    let report = StageReport::collect(stage, &ids, results);
    report.write(layout)?;
    Ok(report)
}

fn read_preprocessed(layout: &Layout, case: &str, name: &str) -> Result<Volume3D> {
    let path = layout.preprocessed(case).join(name);
    if !path.exists() {
        return Err(Error::CaseData(format!(
            "{} is missing; run preprocess first",
            path.display()
        )));
    }
    read_volume(path)
}

#[derive(Serialize)]
struct FcmRecord<'a> {
    method: &'static str,
    operator: &'a str,
    settings: &'a EffectiveFcm,
    resolved_threshold: f64,
    centroids: [f64; 2],
    iterations: usize,
    converged: bool,
    objective: f64,
    breast_voxels: usize,
    fgt_voxels: usize,
}

#[derive(Serialize)]
struct DlRecord<'a> {
    method: &'static str,
    operator: &'a str,
    patch_size: [usize; 3],
    breast_backend: String,
    fgt_vessel_backend: String,
    breast_voxels: usize,
    fgt_voxels: usize,
    vessel_voxels: usize,
}

/// Segments every preprocessed case with `method`, writing masks under the
/// `method/operator` namespace so several operators' results coexist.
pub fn run_segment(
    manifest: &Manifest,
    config: &PipelineConfig,
    layout: &Layout,
    method: Method,
    operator: &str,
) -> Result<StageReport> {
    config.validate()?;
    let sel = Selection::new(method, operator)?;
    let backends = match method {
        Method::Fcm => None,
        Method::Dl => {
            let need = |b: &Option<crate::patch::BackendSpec>, name: &str| {
                b.as_ref()
                    .map(|s| s.build())
                    .ok_or_else(|| Error::Config(format!("dl segmentation needs dl.{name} in the config")))
            };
            Some((need(&config.dl.breast, "breast")?, need(&config.dl.fgt_vessel, "fgt_vessel")?))
        }
    };
    let results: Vec<Result<()>> = manifest
        .cases
        .par_iter()
        .map(|c| {
            let s0 = read_preprocessed(layout, &c.case_id, "s0.nii")?;
            let dir = layout.masks(&sel, &c.case_id);
            ensure_dir(&dir)?;
            match &backends {
                None => {
                    let eff = config.fcm.effective(operator, &c.fcm, &c.operators, s0.dims())?;
                    let breast = threshold_breast_mask(&s0, eff.threshold, &eff.ellipse)?;
                    let fcm = fcm_cluster(&s0, &breast, &eff.params)?;
                    let fgt = apply_probability_threshold(&fcm, eff.params.prob_threshold);
                    write_mask(&breast, dir.join("breast.nii"))?;
                    write_mask(&fgt, dir.join("fgt.nii"))?;
                    write_json(
                        &dir.join("segmentation.json"),
                        &FcmRecord {
                            method: method.as_str(),
                            operator,
                            settings: &eff,
                            resolved_threshold: eff.threshold.resolve(&s0),
                            centroids: fcm.centroids,
                            iterations: fcm.iterations,
                            converged: fcm.converged,
                            objective: fcm.objective,
                            breast_voxels: breast.count(),
                            fgt_voxels: fgt.count(),
                        },
                    )
                }
                Some((b, fv)) => {
                    let seg = segment_dl(&s0, b.as_ref(), fv.as_ref(), &config.preprocess, config.dl.patch_size)?;
                    write_mask(&seg.breast_mask, dir.join("breast.nii"))?;
                    write_mask(&seg.fgt_mask, dir.join("fgt.nii"))?;
                    write_mask(&seg.vessel_mask, dir.join("vessel.nii"))?;
                    write_json(
                        &dir.join("segmentation.json"),
                        &DlRecord {
                            method: method.as_str(),
                            operator,
                            patch_size: config.dl.patch_size,
                            breast_backend: b.describe(),
                            fgt_vessel_backend: fv.describe(),
                            breast_voxels: seg.breast_mask.count(),
                            fgt_voxels: seg.fgt_mask.count(),
                            vessel_voxels: seg.vessel_mask.count(),
                        },
                    )
                }
            }
        })
        .collect();
    finish(format!("segment-{}-{}", method.as_str(), operator), manifest, results, layout)
}

/// Computes the BPE metrics of every case under each selection (all mask
/// namespaces on disk when `selections` is empty) and writes
/// `metrics/metrics.csv`, case-major in manifest order.
pub fn run_metrics(
    manifest: &Manifest,
    config: &PipelineConfig,
    layout: &Layout,
    selections: &[Selection],
) -> Result<StageReport> {
    config.validate()?;
    let mut selections = selections.to_vec();
    if selections.is_empty() {
        selections = layout.discover_selections()?;
    }
    if selections.is_empty() {
        return Err(Error::Config(format!(
            "no segmentations found under {}",
            layout.root.join("masks").display()
        )));
    }
    let per_case: Vec<(Vec<MetricsRow>, Vec<String>)> = manifest
        .cases
        .par_iter()
        .map(|c| {
            let series = match (|| {
                let s0 = read_preprocessed(layout, &c.case_id, "s0.nii")?;
                let s1 = read_preprocessed(layout, &c.case_id, "s1.nii")?;
                DceSeries::new(vec![s0, s1])
            })() {
                Ok(s) => s,
                Err(e) => return (Vec::new(), vec![e.to_string()]),
            };
            let pe = match compute_pe_map(&series, &config.bpe) {
                Ok(pe) => pe,
                Err(e) => return (Vec::new(), vec![e.to_string()]),
            };
            let mut rows = Vec::new();
            let mut errors = Vec::new();
            for sel in &selections {
                let one = || -> Result<MetricsRow> {
                    let dir = layout.masks(sel, &c.case_id);
                    let read = |name: &str| {
                        let p = dir.join(name);
                        if !p.exists() {
                            return Err(Error::CaseData(format!("{} is missing", p.display())));
                        }
                        read_mask(p)
                    };
                    let (breast, fgt) = (read("breast.nii")?, read("fgt.nii")?);
                    let bpe = compute_bpe_mask(&pe, &fgt, &config.bpe)?;
                    Ok(MetricsRow {
                        case_id: c.case_id.clone(),
                        method: sel.to_string(),
                        metrics: compute_metrics(&breast, &fgt, &bpe, &pe)?,
                    })
                };
                match one() {
                    Ok(r) => rows.push(r),
                    Err(e) => errors.push(format!("{sel}: {e}")),
                }
            }
            (rows, errors)
        })
        .collect();

    let mut rows = Vec::new();
    let mut report = StageReport {
        stage: "metrics".into(),
        succeeded: Vec::new(),
        failures: Vec::new(),
    };
    for (c, (r, errors)) in manifest.cases.iter().zip(per_case) {
        rows.extend(r);
        if errors.is_empty() {
            report.succeeded.push(c.case_id.clone());
        }
        for e in errors {
            log::warn!("metrics: case {} failed: {e}", c.case_id);
            report.failures.push(CaseFailure {
                stage: "metrics".into(),
                case_id: c.case_id.clone(),
                error: e,
            });
        }
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf)?;
    let path = layout.metrics_csv();
    ensure_dir(path.parent().expect("metrics path has a parent"))?;
    write_atomic(&path, &buf)?;
    report.write(layout)?;
    Ok(report)
}
