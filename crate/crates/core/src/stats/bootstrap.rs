use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spearman::spearman_rho;
use super::{ccc, ccc_slices, spearman, PairedSample, QualitativeBpe};
use crate::error::{Error, Result};
use crate::preprocess::nearest_rank_index;

/// Resample `b` draws its case indices from ChaCha8 seeded with the run
/// seed, on stream `b`, so results do not depend on thread scheduling.
pub const RNG_ALGORITHM: &str = "chacha8-stream-per-resample";

/// Below this many cases a bootstrap CI is reported but flagged.
const MIN_RELIABLE_N: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Redraws allowed per resample when the drawn cases are degenerate.
    pub max_redraws: usize,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            resamples: 2000,
            level: 0.95,
            seed: 0,
            max_redraws: 100,
        }
    }
}

impl BootstrapParams {
    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 || !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bootstrap needs resamples >= 1 and level in (0, 1), got {} and {}",
                self.resamples, self.level
            )));
        }
        Ok(())
    }
}

/// Runs `stat` on `resamples` case resamples. A resample whose statistic is
/// undefined is redrawn from the same stream, up to `max_redraws` times.
fn resample_stats<F>(n: usize, p: &BootstrapParams, stat: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    (0..p.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(b as u64);
            let mut idx = vec![0usize; n];
            for _ in 0..=p.max_redraws {
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n);
                }
                if let Ok(v) = stat(&idx) {
                    return Ok(v);
                }
            }
            Err(Error::Bootstrap(format!(
                "resample {b} stayed degenerate after {} redraws",
                p.max_redraws
            )))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    /// Set when n is below 8.
    pub unreliable: bool,
}

/// CCC with a percentile bootstrap interval (nearest-rank quantiles of the
/// resampled CCCs). The interval is widened if needed so that it contains
/// the point estimate.
pub fn ccc_ci(s: &PairedSample, params: &BootstrapParams) -> Result<CccInterval> {
    params.validate()?;
    let estimate = ccc(s)?;
    let (x, y) = (s.x(), s.y());
    let mut stats = resample_stats(s.len(), params, |idx| {
        let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        ccc_slices(&xs, &ys)
    })?;
    stats.sort_by(f64::total_cmp);
    let tail = 100.0 * (1.0 - params.level) / 2.0;
    let lo = stats[nearest_rank_index(stats.len(), tail)];
    let hi = stats[nearest_rank_index(stats.len(), 100.0 - tail)];
    Ok(CccInterval {
        estimate,
        lo: lo.min(estimate),
        hi: hi.max(estimate),
        level: params.level,
        resamples: params.resamples,
        unreliable: s.len() < MIN_RELIABLE_N,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapComparison {
    pub rho_1: f64,
    pub rho_2: f64,
    /// `rho_1 - rho_2`.
    pub delta_rho: f64,
    pub p_value: f64,
    pub resamples: usize,
    pub unreliable: bool,
}

/// Paired case bootstrap of `rho(q, m1) - rho(q, m2)`. The two-sided p is
/// twice the smaller of the shares of resampled differences `<= 0` and
/// `>= 0`, capped at 1.
pub fn bootstrap_compare_spearman(
    q: &[QualitativeBpe],
    m1: &[f64],
    m2: &[f64],
    params: &BootstrapParams,
) -> Result<BootstrapComparison> {
    params.validate()?;
    if q.len() != m1.len() || q.len() != m2.len() {
        return Err(Error::InvalidSample(format!(
            "lists differ in length: {}, {}, {}",
            q.len(),
            m1.len(),
            m2.len()
        )));
    }
    let qf: Vec<f64> = q.iter().map(|v| v.value() as f64).collect();
    let rho_1 = spearman(&qf, m1)?.rho;
    let rho_2 = spearman(&qf, m2)?.rho;
    let deltas = resample_stats(q.len(), params, |idx| {
        let pick = |v: &[f64]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
        let qs = pick(&qf);
        Ok(spearman_rho(&qs, &pick(m1))? - spearman_rho(&qs, &pick(m2))?)
    })?;
    let b = deltas.len() as f64;
    let le = deltas.iter().filter(|&&d| d <= 0.0).count() as f64 / b;
    let ge = deltas.iter().filter(|&&d| d >= 0.0).count() as f64 / b;
    Ok(BootstrapComparison {
        rho_1,
        rho_2,
        delta_rho: rho_1 - rho_2,
        p_value: (2.0 * le.min(ge)).min(1.0),
        resamples: params.resamples,
        unreliable: q.len() < MIN_RELIABLE_N,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> PairedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        PairedSample::new(x, y).unwrap()
    }

    #[test]
    fn identical_samples_give_degenerate_interval() {
        let x: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let s = PairedSample::new(x.clone(), x).unwrap();
        let ci = ccc_ci(&s, &BootstrapParams::default()).unwrap();
        assert_eq!((ci.estimate, ci.lo, ci.hi), (1.0, 1.0, 1.0));
        assert!(!ci.unreliable);
    }

    #[test]
    fn same_seed_same_interval() {
        let s = gaussian_pairs(30, 0.7, 1);
        let p = BootstrapParams { seed: 42, ..BootstrapParams::default() };
        let a = ccc_ci(&s, &p).unwrap();
        let b = ccc_ci(&s, &p).unwrap();
        assert_eq!(a, b);
        let c = ccc_ci(&s, &BootstrapParams { seed: 43, ..p }).unwrap();
        assert_ne!((a.lo, a.hi), (c.lo, c.hi));
    }

    #[test]
    fn correlated_gaussian_interval() {
        let s = gaussian_pairs(50, 0.9, 7);
        let ci = ccc_ci(&s, &BootstrapParams::default()).unwrap();
        assert!(ci.lo <= ci.estimate && ci.estimate <= ci.hi);
        assert!(ci.hi - ci.lo < 0.3, "{ci:?}");

        // reference: plain serial bootstrap of the same streams
        let mut stats = Vec::new();
        for b in 0..2000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            rng.set_stream(b);
            loop {
                let idx: Vec<usize> = (0..50).map(|_| rng.random_range(0..50)).collect();
                let xs: Vec<f64> = idx.iter().map(|&i| s.x()[i]).collect();
                let ys: Vec<f64> = idx.iter().map(|&i| s.y()[i]).collect();
                if let Ok(v) = ccc(&PairedSample::new(xs, ys).unwrap()) {
                    stats.push(v);
                    break;
                }
            }
        }
        stats.sort_by(f64::total_cmp);
        assert_eq!(ci.lo, stats[49].min(ci.estimate));
        assert_eq!(ci.hi, stats[1949].max(ci.estimate));
    }

    #[test]
    fn small_samples_are_flagged() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0, 5.0], vec![1.5, 2.0, 2.5, 6.0]).unwrap();
        let ci = ccc_ci(&s, &BootstrapParams { resamples: 200, ..BootstrapParams::default() }).unwrap();
        assert!(ci.unreliable);
    }

    fn grades(n: usize) -> Vec<QualitativeBpe> {
        (0..n).map(|i| QualitativeBpe::try_from((i % 4) as u8 + 1).unwrap()).collect()
    }

    #[test]
    fn identical_methods_compare_to_p_one() {
        let q = grades(20);
        let m: Vec<f64> = (0..20).map(|i| ((i * 13) % 17) as f64).collect();
        let r = bootstrap_compare_spearman(&q, &m, &m, &BootstrapParams::default()).unwrap();
        assert_eq!((r.delta_rho, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn informative_method_beats_noise() {
        let q = grades(50);
        let m1: Vec<f64> = q.iter().map(|g| (g.value() as f64).powi(2) * 10.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m2: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = BootstrapParams::default();
        let r = bootstrap_compare_spearman(&q, &m1, &m2, &p).unwrap();
        assert!(r.p_value < 0.05, "{r:?}");
        assert_eq!(r.rho_1, 1.0);
        assert_eq!(r, bootstrap_compare_spearman(&q, &m1, &m2, &p).unwrap());
    }

    #[test]
    fn hopeless_resamples_error_out() {
        // one distinct case among many constants: most resamples are constant
        let q = grades(3);
        let p = BootstrapParams { resamples: 50, max_redraws: 0, ..BootstrapParams::default() };
        let r = bootstrap_compare_spearman(&q, &[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0], &p);
        assert!(matches!(r, Err(Error::Bootstrap(_))));
    }
}
