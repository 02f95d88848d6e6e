//! Percent enhancement and the BPE metrics derived from it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{volume_of_mask, DceSeries, Mask3D, Volume3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeParams {
    /// Minimum PE (percent) for an FGT voxel to count as enhancing.
    pub pe_threshold: f64,
    /// PE is undefined where `S0 <= s0_floor`.
    pub s0_floor: f64,
}

impl Default for BpeParams {
    fn default() -> Self {
        BpeParams {
            pe_threshold: 50.0,
            s0_floor: 1e-6,
        }
    }
}

impl BpeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pe_threshold >= 0.0) || !self.pe_threshold.is_finite() || !self.s0_floor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pe_threshold must be finite and >= 0, s0_floor finite; got {} and {}",
                self.pe_threshold, self.s0_floor
            )));
        }
        Ok(())
    }
}

/// Percent enhancement `100 (S1 - S0) / S0`, zero where undefined.
#[derive(Debug, Clone)]
pub struct PeMap {
    pub pe: Volume3D,
    pub valid: Mask3D,
}

pub fn compute_pe_map(series: &DceSeries, params: &BpeParams) -> Result<PeMap> {
    params.validate()?;
    let (s0, s1) = (series.pre(), series.first_post());
    s0.geometry().check_same_frame(s1.geometry(), "S0 vs S1")?;
    let n = s0.data().len();
    let mut pe = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (&a, &b) in s0.data().iter().zip(s1.data()) {
        let a = a as f64;
        if a > params.s0_floor {
            pe.push((100.0 * (b as f64 - a) / a) as f32);
            valid.push(1);
        } else {
            pe.push(0.0);
            valid.push(0);
        }
    }
    Ok(PeMap {
        pe: Volume3D::new(s0.geometry().clone(), pe)?,
        valid: Mask3D::new(s0.geometry().clone(), valid)?,
    })
}

/// FGT voxels with a defined PE of at least `pe_threshold`.
pub fn compute_bpe_mask(pe: &PeMap, fgt: &Mask3D, params: &BpeParams) -> Result<Mask3D> {
    params.validate()?;
    pe.pe.geometry().check_aligned(fgt.geometry(), "PE map vs FGT mask")?;
    let t = params.pe_threshold;
    let data = fgt
        .data()
        .iter()
        .zip(pe.valid.data())
        .zip(pe.pe.data())
        .map(|((&f, &v), &p)| (f != 0 && v != 0 && p as f64 >= t) as u8)
        .collect();
    Mask3D::new(fgt.geometry().clone(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpeMetrics {
    pub breast_volume_mm3: f64,
    pub fgt_volume_mm3: f64,
    pub bpe_volume_mm3: f64,
    /// `None` when the FGT mask is empty.
    pub bpe_fgt_ratio_pct: Option<f64>,
    /// `None` when the breast mask is empty.
    pub bpe_breast_ratio_pct: Option<f64>,
    /// BPE volume times mean PE over BPE voxels, in mm³·%.
    pub bpe_integrated_intensity: f64,
}

pub fn compute_metrics(
    breast: &Mask3D,
    fgt: &Mask3D,
    bpe: &Mask3D,
    pe: &PeMap,
) -> Result<BpeMetrics> {
    let g = bpe.geometry();
    g.check_aligned(breast.geometry(), "BPE vs breast mask")?;
    g.check_aligned(fgt.geometry(), "BPE vs FGT mask")?;
    g.check_aligned(pe.pe.geometry(), "BPE mask vs PE map")?;
    if !bpe.is_subset_of(fgt)? {
        return Err(Error::NotSubset("BPE mask is not contained in the FGT mask".into()));
    }
    let breast_v = volume_of_mask(breast);
    let fgt_v = volume_of_mask(fgt);
    let bpe_v = volume_of_mask(bpe);

    let (mut sum, mut n) = (0.0f64, 0usize);
    for (&b, &p) in bpe.data().iter().zip(pe.pe.data()) {
        if b != 0 {
            sum += p as f64;
            n += 1;
        }
    }
    let integrated = if n == 0 { 0.0 } else { bpe_v * (sum / n as f64) };
    let ratio = |den: f64| {
        if bpe_v == 0.0 {
            Some(0.0)
        } else if den == 0.0 {
            None
        } else {
            Some(100.0 * bpe_v / den)
        }
    };
    Ok(BpeMetrics {
        breast_volume_mm3: breast_v,
        fgt_volume_mm3: fgt_v,
        bpe_volume_mm3: bpe_v,
        bpe_fgt_ratio_pct: ratio(fgt_v),
        bpe_breast_ratio_pct: ratio(breast_v),
        bpe_integrated_intensity: integrated,
    })
}

/// The four quantities compared across methods and against radiologists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    FgtVolume,
    BpeVolume,
    BpeFgtRatio,
    BpeBreastRatio,
    BpeIntegratedIntensity,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::FgtVolume,
        MetricKind::BpeVolume,
        MetricKind::BpeFgtRatio,
        MetricKind::BpeBreastRatio,
        MetricKind::BpeIntegratedIntensity,
    ];
    /// The BPE metrics proper, without FGT volume.
    pub const BPE: [MetricKind; 4] = [
        MetricKind::BpeVolume,
        MetricKind::BpeFgtRatio,
        MetricKind::BpeBreastRatio,
        MetricKind::BpeIntegratedIntensity,
    ];

    pub fn column(self) -> &'static str {
        match self {
            MetricKind::FgtVolume => "fgt_volume_mm3",
            MetricKind::BpeVolume => "bpe_volume_mm3",
            MetricKind::BpeFgtRatio => "bpe_fgt_ratio_pct",
            MetricKind::BpeBreastRatio => "bpe_breast_ratio_pct",
            MetricKind::BpeIntegratedIntensity => "bpe_integrated_intensity",
        }
    }
}

impl BpeMetrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::FgtVolume => Some(self.fgt_volume_mm3),
            MetricKind::BpeVolume => Some(self.bpe_volume_mm3),
            MetricKind::BpeFgtRatio => self.bpe_fgt_ratio_pct,
            MetricKind::BpeBreastRatio => self.bpe_breast_ratio_pct,
            MetricKind::BpeIntegratedIntensity => Some(self.bpe_integrated_intensity),
        }
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub case_id: String,
    pub method: String,
    pub metrics: BpeMetrics,
}

pub const METRICS_HEADER: [&str; 8] = [
    "case_id",
    "method",
    "breast_volume_mm3",
    "fgt_volume_mm3",
    "bpe_volume_mm3",
    "bpe_fgt_ratio_pct",
    "bpe_breast_ratio_pct",
    "bpe_integrated_intensity",
];

const UNDEFINED: &str = "NA";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.case_id.clone(),
            r.method.clone(),
            m.breast_volume_mm3.to_string(),
            m.fgt_volume_mm3.to_string(),
            m.bpe_volume_mm3.to_string(),
            fmt_opt(m.bpe_fgt_ratio_pct),
            fmt_opt(m.bpe_breast_ratio_pct),
            m.bpe_integrated_intensity.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("metrics csv", e))?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Config(format!(
            "metrics header {header:?} differs from {METRICS_HEADER:?}"
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<Option<f64>> {
            let s = rec[k].trim();
            if s == UNDEFINED {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| {
                Error::Config(format!("row {}: {} = {s:?} is not a number", line + 2, METRICS_HEADER[k]))
            })
        };
        let req = |k: usize| -> Result<f64> {
            num(k)?.ok_or_else(|| {
                Error::Config(format!("row {}: {} may not be NA", line + 2, METRICS_HEADER[k]))
            })
        };
        rows.push(MetricsRow {
            case_id: rec[0].to_string(),
            method: rec[1].to_string(),
            metrics: BpeMetrics {
                breast_volume_mm3: req(2)?,
                fgt_volume_mm3: req(3)?,
                bpe_volume_mm3: req(4)?,
                bpe_fgt_ratio_pct: num(5)?,
                bpe_breast_ratio_pct: num(6)?,
                bpe_integrated_intensity: req(7)?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    fn series(s0: &[f32], s1: &[f32]) -> DceSeries {
        let g = Geometry::unit([s0.len(), 1, 1]).unwrap();
        DceSeries::new(vec![
            Volume3D::new(g.clone(), s0.to_vec()).unwrap(),
            Volume3D::new(g, s1.to_vec()).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn pe_examples() {
        let pe = compute_pe_map(&series(&[100.0, 200.0, 0.0], &[150.0, 200.0, 50.0]), &BpeParams::default())
            .unwrap();
        assert_eq!(pe.pe.data(), &[50.0, 0.0, 0.0]);
        assert_eq!(pe.valid.data(), &[1, 1, 0]);
    }

    #[test]
    fn bpe_threshold_is_inclusive() {
        let g = Geometry::unit([4, 1, 1]).unwrap();
        let pe = PeMap {
            pe: Volume3D::new(g.clone(), vec![50.0, 49.999, 500.0, 80.0]).unwrap(),
            valid: Mask3D::full(g.clone()).unwrap(),
        };
        let fgt = Mask3D::new(g, vec![1, 1, 0, 1]).unwrap();
        let bpe = compute_bpe_mask(&pe, &fgt, &BpeParams::default()).unwrap();
        assert_eq!(bpe.data(), &[1, 0, 0, 1]);
    }

    #[test]
    fn invalid_voxels_never_enter_bpe() {
        let pe = compute_pe_map(&series(&[0.0, 100.0], &[100.0, 300.0]), &BpeParams::default()).unwrap();
        let fgt = Mask3D::full(pe.pe.geometry().clone()).unwrap();
        let p = BpeParams { pe_threshold: 0.0, ..BpeParams::default() };
        assert_eq!(compute_bpe_mask(&pe, &fgt, &p).unwrap().data(), &[0, 1]);
    }

    fn masks(n: usize, breast: usize, fgt: usize, bpe: usize) -> (Mask3D, Mask3D, Mask3D) {
        let g = Geometry::unit([n, 1, 1]).unwrap();
        (
            Mask3D::from_fn(g.clone(), |x, _, _| x < breast).unwrap(),
            Mask3D::from_fn(g.clone(), |x, _, _| x < fgt).unwrap(),
            Mask3D::from_fn(g, |x, _, _| x < bpe).unwrap(),
        )
    }

    #[test]
    fn metric_examples() {
        let (b, f, e) = masks(1000, 1000, 200, 50);
        let pe = PeMap {
            pe: Volume3D::filled(b.geometry().clone(), 80.0).unwrap(),
            valid: Mask3D::full(b.geometry().clone()).unwrap(),
        };
        let m = compute_metrics(&b, &f, &e, &pe).unwrap();
        assert_eq!(m.bpe_volume_mm3, 50.0);
        assert_eq!(m.bpe_fgt_ratio_pct, Some(25.0));
        assert_eq!(m.bpe_breast_ratio_pct, Some(5.0));
        assert_eq!(m.bpe_integrated_intensity, 4000.0);

        let (b, f, e) = masks(1000, 1000, 200, 0);
        let m = compute_metrics(&b, &f, &e, &pe).unwrap();
        assert_eq!(
            (m.bpe_volume_mm3, m.bpe_fgt_ratio_pct, m.bpe_breast_ratio_pct, m.bpe_integrated_intensity),
            (0.0, Some(0.0), Some(0.0), 0.0)
        );
    }

    #[test]
    fn integrated_intensity_uses_mean_pe() {
        let g = Geometry::unit([3, 1, 1]).unwrap();
        let pe = PeMap {
            pe: Volume3D::new(g.clone(), vec![60.0, 100.0, 7.0]).unwrap(),
            valid: Mask3D::full(g.clone()).unwrap(),
        };
        let bpe = Mask3D::new(g.clone(), vec![1, 1, 0]).unwrap();
        let full = Mask3D::full(g).unwrap();
        let m = compute_metrics(&full, &full, &bpe, &pe).unwrap();
        let listed = [60.0, 100.0];
        let oracle = listed.len() as f64 * (listed.iter().sum::<f64>() / listed.len() as f64);
        assert_eq!(m.bpe_integrated_intensity, oracle);
        assert_eq!(oracle, 160.0);
    }

    #[test]
    fn empty_denominators_are_undefined_and_subset_is_checked() {
        let g = Geometry::unit([4, 1, 1]).unwrap();
        let pe = PeMap {
            pe: Volume3D::filled(g.clone(), 80.0).unwrap(),
            valid: Mask3D::full(g.clone()).unwrap(),
        };
        let empty = Mask3D::empty(g.clone()).unwrap();
        let some = Mask3D::new(g.clone(), vec![1, 1, 0, 0]).unwrap();
        let m = compute_metrics(&empty, &some, &some, &pe).unwrap();
        assert_eq!(m.bpe_breast_ratio_pct, None);
        assert_eq!(m.bpe_fgt_ratio_pct, Some(100.0));
        let m = compute_metrics(&some, &empty, &empty, &pe).unwrap();
        assert_eq!(m.bpe_fgt_ratio_pct, Some(0.0));
        assert!(matches!(
            compute_metrics(&some, &empty, &some, &pe),
            Err(Error::NotSubset(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricsRow {
                case_id: "c1".into(),
                method: "fcm".into(),
                metrics: BpeMetrics {
                    breast_volume_mm3: 1000.5,
                    fgt_volume_mm3: 0.0,
                    bpe_volume_mm3: 0.0,
                    bpe_fgt_ratio_pct: None,
                    bpe_breast_ratio_pct: Some(0.1 + 0.2),
                    bpe_integrated_intensity: 0.0,
                },
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("case_id,method,breast_volume_mm3,"));
        assert!(text.contains(",NA,"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
        assert!(read_metrics_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn pe_is_scale_invariant(s0 in proptest::collection::vec(1u16..1000, 1..50),
                                 gain in proptest::collection::vec(0u16..300, 50),
                                 k in 1u32..8) {
            let s0: Vec<f32> = s0.iter().map(|&v| v as f32).collect();
            let s1: Vec<f32> = s0.iter().zip(&gain).map(|(a, g)| a * (1.0 + *g as f32 / 100.0)).collect();
            let f = 2f32.powi(k as i32);
            let a = compute_pe_map(&series(&s0, &s1), &BpeParams::default()).unwrap();
            let scaled0: Vec<f32> = s0.iter().map(|v| v * f).collect();
            let scaled1: Vec<f32> = s1.iter().map(|v| v * f).collect();
            let b = compute_pe_map(&series(&scaled0, &scaled1), &BpeParams::default()).unwrap();
            prop_assert_eq!(a.pe.data(), b.pe.data());
        }

        #[test]
        fn raising_threshold_never_grows_bpe(pe in proptest::collection::vec(-50f32..300.0, 1..60),
                                             t1 in 0f64..200.0, t2 in 0f64..200.0) {
            let g = Geometry::unit([pe.len(), 1, 1]).unwrap();
            let map = PeMap { pe: Volume3D::new(g.clone(), pe).unwrap(), valid: Mask3D::full(g.clone()).unwrap() };
            let fgt = Mask3D::from_fn(g.clone(), |x, _, _| x % 3 != 0).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = compute_bpe_mask(&map, &fgt, &BpeParams { pe_threshold: lo, ..BpeParams::default() }).unwrap();
            let b = compute_bpe_mask(&map, &fgt, &BpeParams { pe_threshold: hi, ..BpeParams::default() }).unwrap();
            prop_assert!(b.is_subset_of(&a).unwrap());
            let full = Mask3D::full(g).unwrap();
            let m = compute_metrics(&full, &fgt, &b, &map).unwrap();
            prop_assert_eq!(m.bpe_volume_mm3, volume_of_mask(&b));
            prop_assert!(m.bpe_volume_mm3 <= m.fgt_volume_mm3);
            let r = m.bpe_fgt_ratio_pct.unwrap_or(0.0);
            prop_assert!((0.0..=100.0).contains(&r));
        }

        #[test]
        fn metrics_ignore_voxel_order(pe in proptest::collection::vec(50f32..300.0, 2..40), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = pe.len();
            let g = Geometry::unit([n, 1, 1]).unwrap();
            let fgt_bits: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let build = |order: &[usize]| {
                let pv: Vec<f32> = order.iter().map(|&i| pe[i]).collect();
                let fv: Vec<u8> = order.iter().map(|&i| fgt_bits[i]).collect();
                let map = PeMap { pe: Volume3D::new(g.clone(), pv).unwrap(), valid: Mask3D::full(g.clone()).unwrap() };
                let fgt = Mask3D::new(g.clone(), fv).unwrap();
                let bpe = compute_bpe_mask(&map, &fgt, &BpeParams::default()).unwrap();
                compute_metrics(&Mask3D::full(g.clone()).unwrap(), &fgt, &bpe, &map).unwrap()
            };
            let ident: Vec<usize> = (0..n).collect();
            let a = build(&ident);
            let b = build(&perm);
            prop_assert_eq!(a.bpe_volume_mm3, b.bpe_volume_mm3);
            prop_assert!((a.bpe_integrated_intensity - b.bpe_integrated_intensity).abs()
                <= 1e-9 * a.bpe_integrated_intensity.abs().max(1.0));
        }
    }
}
