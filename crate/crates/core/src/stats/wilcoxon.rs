use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{midranks, tie_groups, PairedSample};
use crate::error::{Error, Result};

/// Largest number of nonzero differences with an exact p-value.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Exact up to [`EXACT_WILCOXON_MAX_N`] pairs, normal beyond.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Two-sided Wilcoxon signed-rank test on `x - y`.
pub fn wilcoxon_signed_rank(s: &PairedSample) -> Result<WilcoxonResult> {
    let d: Vec<f64> = s.x().iter().zip(s.y()).map(|(a, b)| a - b).collect();
    wilcoxon_from_differences(&d, WilcoxonMethod::Auto)
}

/// Zero differences are dropped, tied |d| share midranks.
pub fn wilcoxon_from_differences(d: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite difference".into()));
    }
    let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::NoNonzeroPairs);
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|&r| (2.0 * r) as usize).collect();
    let plus2: usize = doubled.iter().zip(&nz).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
    let total2 = n * (n + 1);
    let minus2 = total2 - plus2;
    let w2 = plus2.min(minus2);

    let method = match method {
        WilcoxonMethod::Auto if n <= EXACT_WILCOXON_MAX_N => WilcoxonMethod::Exact,
        WilcoxonMethod::Auto => WilcoxonMethod::Normal,
        m => m,
    };
    let p = match method {
        WilcoxonMethod::Exact => exact_p(&doubled, w2),
        _ => normal_p(n, &abs, w2 as f64 / 2.0),
    };
    Ok(WilcoxonResult {
        statistic: w2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        n_used: n,
        p_value: p,
        method,
    })
}

/// `min(1, 2 P(W+ <= w))` under the null. The distribution of the doubled
/// W+ over all 2^n sign assignments is built by subset-sum counting, which
/// gives the same counts as enumerating the assignments.
fn exact_p(doubled: &[usize], w2: usize) -> f64 {
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2f64.powi(doubled.len() as i32);
    let tail: f64 = counts[..=w2].iter().sum();
    (2.0 * tail / total).min(1.0)
}

fn normal_p(n: usize, abs: &[f64], w: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_groups(abs)
        .iter()
        .map(|&t| (t * t * t - t) as f64)
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}
