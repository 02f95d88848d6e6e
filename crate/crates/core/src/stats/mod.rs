//! Agreement statistics: Dice, Lin's CCC, Spearman, Wilcoxon signed-rank and
//! case-level bootstrap.

mod bootstrap;
mod spearman;
mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Mask3D;

pub use bootstrap::{
    bootstrap_compare_spearman, ccc_ci, BootstrapComparison, BootstrapParams, CccInterval,
    RNG_ALGORITHM,
};
pub use spearman::{spearman, SpearmanMethod, SpearmanResult, EXACT_SPEARMAN_MAX_N};
pub use wilcoxon::{
    wilcoxon_from_differences, wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult,
    EXACT_WILCOXON_MAX_N,
};

/// Two equal-length, finite, case-paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidSample(format!(
                "paired lists differ in length: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InvalidSample(format!("need at least 2 pairs, got {}", x.len())));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("non-finite value at position {}", i % x.len())));
        }
        Ok(PairedSample { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Radiologist BPE grade: 1 minimal, 2 mild, 3 moderate, 4 marked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QualitativeBpe(u8);

impl QualitativeBpe {
    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for QualitativeBpe {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        if (1..=4).contains(&v) {
            Ok(QualitativeBpe(v))
        } else {
            Err(Error::InvalidSample(format!("qualitative BPE must be 1-4, got {v}")))
        }
    }
}

impl From<QualitativeBpe> for u8 {
    fn from(q: QualitativeBpe) -> u8 {
        q.0
    }
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`.
pub fn dice(a: &Mask3D, b: &Mask3D) -> Result<f64> {
    let both = a.and(b)?.count();
    let total = a.count() + b.count();
    if total == 0 {
        return Err(Error::UndefinedDice);
    }
    Ok(2.0 * both as f64 / total as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population moments `(mean_x, mean_y, var_x, var_y, cov)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let (mut vx, mut vy, mut c) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        c += (a - mx) * (b - my);
    }
    (mx, my, vx / n, vy / n, c / n)
}

fn ccc_slices(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my, vx, vy, c) = moments(x, y);
    if vx == 0.0 && vy == 0.0 {
        return Err(Error::UndefinedCorrelation("both samples are constant".into()));
    }
    Ok((2.0 * c / (vx + vy + (mx - my) * (mx - my))).clamp(-1.0, 1.0))
}

/// Lin's concordance correlation coefficient with population moments.
pub fn ccc(s: &PairedSample) -> Result<f64> {
    ccc_slices(&s.x, &s.y)
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (_, _, vx, vy, c) = moments(x, y);
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedCorrelation("a sample is constant".into()));
    }
    Ok((c / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given the average of the ranks they span.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the tie groups in `v` (groups of one included).
pub(crate) fn tie_groups(v: &[f64]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        out.push(j - i + 1);
        i = j + 1;
    }
    out
}
