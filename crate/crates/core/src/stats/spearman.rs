use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::factorial::ln_factorial;

use super::{midranks, pearson, tie_groups};
use crate::error::{Error, Result};

/// Largest n whose p-value is computed by enumerating all n! permutations.
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpearmanMethod {
    ExactPermutation,
    TDistribution,
    PerfectRankCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: SpearmanMethod,
}

/// Rho alone, without the p-value.
pub(crate) fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&midranks(x), &midranks(y))
}

/// Spearman's rho (Pearson correlation of midranks) with a two-sided p.
///
/// For n up to [`EXACT_SPEARMAN_MAX_N`] the p-value is the share of all
/// permutations of `y` whose |rho| reaches the observed |rho|. Larger
/// samples use the t approximation with n - 2 degrees of freedom, except
/// that |rho| = 1 gets the permutation share of perfectly ranked orders.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidSample(format!(
            "lists differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidSample(format!("Spearman needs n >= 3, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite value".into()));
    }
    let (rx, ry) = (midranks(x), midranks(y));
    let rho = pearson(&rx, &ry)?;

    if n <= EXACT_SPEARMAN_MAX_N {
        return Ok(SpearmanResult {
            rho,
            p_value: exact_p(&rx, &ry),
            n,
            method: SpearmanMethod::ExactPermutation,
        });
    }
    if rho.abs() >= 1.0 - 1e-12 {
        // orders reproducing the observed ranking: permutations within ties
        let ln_same: f64 = tie_groups(y).iter().map(|&t| ln_factorial(t as u64)).sum();
        let p = (2.0 * (ln_same - ln_factorial(n as u64)).exp()).min(1.0);
        return Ok(SpearmanResult {
            rho,
            p_value: p,
            n,
            method: SpearmanMethod::PerfectRankCount,
        });
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidSample(e.to_string()))?;
    Ok(SpearmanResult {
        rho,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
        n,
        method: SpearmanMethod::TDistribution,
    })
}

/// Share of permutations of `ry` with `|Σ a_i b_π(i)| >= |Σ a_i b_i|`,
/// where `a`, `b` are the doubled, centred midranks (all integers, so the
/// comparison is exact). Heap's algorithm, one swap per permutation.
fn exact_p(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len();
    let centred = |r: &[f64]| -> Vec<i64> {
        r.iter().map(|&v| (2.0 * v) as i64 - (n as i64 + 1)).collect()
    };
    let a = centred(rx);
    let mut b = centred(ry);
    let dot = |b: &[i64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<i64>();
    let mut current = dot(&b);
    let target = current.abs();

    let mut hits: u64 = 1;
    let mut total: u64 = 1;
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            // swapping b[i] and b[j] changes the dot by (a_i - a_j)(b_j - b_i)
            current += (a[i] - a[j]) * (b[j] - b[i]);
            b.swap(i, j);
            total += 1;
            if current.abs() >= target {
                hits += 1;
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}
