//! pass^k (all-of-k succeed), pass@k (any-of-k succeeds) and per-setting
//! summaries.
//!
//! Both estimators are per-task ratios of binomial coefficients averaged over
//! tasks. The ratio `C(a, k) / C(n, k)` is evaluated as the telescoping
//! product `prod_{i<k} (a - i) / (n - i)` on reduced integers, so the only
//! rounding step per task is one final division. Task averages use pairwise
//! summation in canonical task order.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::integer::Integer;
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::outcome::{OutcomeMatrix, ReliabilityCategory, SettingLabel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("k={k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid k list '{0}': expected comma-separated positive integers")]
    InvalidKList(String),
}

fn check_k(k: usize, n: usize) -> Result<(), MetricsError> {
    if k == 0 || k > n {
        Err(MetricsError::KOutOfRange { k, n })
    } else {
        Ok(())
    }
}

/// `C(a, k) / C(n, k)` as a reduced fraction, or `None` on u128 overflow.
fn binomial_ratio_u128(a: usize, n: usize, k: usize) -> Option<(u128, u128)> {
    if a < k {
        return Some((0, 1));
    }
    let (mut num, mut den) = (1u128, 1u128);
    for i in 0..k {
        let (x, y) = ((a - i) as u128, (n - i) as u128);
        // Cross-reduce before multiplying to keep both sides small.
        let g1 = x.gcd(&den);
        let g2 = y.gcd(&num);
        num = (num / g2).checked_mul(x / g1)?;
        den = (den / g1).checked_mul(y / g2)?;
    }
    Some((num, den))
}

/// `C(a, k) / C(n, k)` exactly.
pub fn binomial_ratio_exact(a: usize, n: usize, k: usize) -> BigRational {
    if a < k {
        return BigRational::zero();
    }
    (0..k).fold(BigRational::from_integer(BigInt::from(1)), |acc, i| {
        acc * BigRational::new(BigInt::from(a - i), BigInt::from(n - i))
    })
}

/// `C(a, k) / C(n, k)`, or its complement `1 - C(a, k) / C(n, k)`, as f64
/// with one rounding division.
fn binomial_ratio_f64(a: usize, n: usize, k: usize, complement: bool) -> f64 {
    match binomial_ratio_u128(a, n, k) {
        Some((num, den)) => {
            let num = if complement { den - num } else { num };
            num as f64 / den as f64
        }
        None => {
            let r = binomial_ratio_exact(a, n, k);
            let r = if complement {
                BigRational::from_integer(BigInt::from(1)) - r
            } else {
                r
            };
            r.to_f64().unwrap_or(f64::NAN)
        }
    }
}

/// Per-task pass^k term `C(c, k) / C(n, k)`.
pub fn task_pass_hat(c: usize, n: usize, k: usize) -> f64 {
    binomial_ratio_f64(c, n, k, false)
}

/// Per-task pass@k term `1 - C(n - c, k) / C(n, k)`.
pub fn task_pass_at(c: usize, n: usize, k: usize) -> f64 {
    binomial_ratio_f64(n - c, n, k, true)
}

/// Pairwise (cascade) summation. Deterministic for a fixed input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

/// pass^k from raw success counts (all with the same `n`).
pub fn pass_hat_from_counts(counts: &[usize], n: usize, k: usize) -> Result<f64, MetricsError> {
    check_k(k, n)?;
    let terms: Vec<f64> = counts.iter().map(|&c| task_pass_hat(c, n, k)).collect();
    Ok(mean_of(&terms))
}

/// pass@k from raw success counts (all with the same `n`).
pub fn pass_at_from_counts(counts: &[usize], n: usize, k: usize) -> Result<f64, MetricsError> {
    check_k(k, n)?;
    let terms: Vec<f64> = counts.iter().map(|&c| task_pass_at(c, n, k)).collect();
    Ok(mean_of(&terms))
}

/// Probability that `k` runs drawn without replacement from a task's `n`
/// runs all succeed, averaged over tasks.
pub fn pass_hat_k(matrix: &OutcomeMatrix, k: usize) -> Result<f64, MetricsError> {
    pass_hat_from_counts(&matrix.counts(), matrix.n(), k)
}

/// Unbiased pass@k: probability that at least one of `k` drawn runs succeeds.
///
/// At `k = n` this is the plain any-success indicator averaged over tasks.
pub fn pass_at_k(matrix: &OutcomeMatrix, k: usize) -> Result<f64, MetricsError> {
    pass_at_from_counts(&matrix.counts(), matrix.n(), k)
}

pub fn pass_hat_k_exact(matrix: &OutcomeMatrix, k: usize) -> Result<BigRational, MetricsError> {
    let n = matrix.n();
    check_k(k, n)?;
    let sum = matrix
        .counts()
        .into_iter()
        .fold(BigRational::zero(), |acc, c| acc + binomial_ratio_exact(c, n, k));
    Ok(sum / BigRational::from_integer(BigInt::from(matrix.task_count())))
}

pub fn pass_at_k_exact(matrix: &OutcomeMatrix, k: usize) -> Result<BigRational, MetricsError> {
    let n = matrix.n();
    check_k(k, n)?;
    let one = BigRational::from_integer(BigInt::from(1));
    let sum = matrix
        .counts()
        .into_iter()
        .fold(BigRational::zero(), |acc, c| acc + (&one - binomial_ratio_exact(n - c, n, k)));
    Ok(sum / BigRational::from_integer(BigInt::from(matrix.task_count())))
}

/// Parses `"1,3,10"` into a sorted, duplicate-free list. Range checks
/// against `n` happen later, once `n` is known.
pub fn parse_k_list(text: &str) -> Result<Vec<usize>, MetricsError> {
    let bad = || MetricsError::InvalidKList(text.to_string());
    let mut ks = text
        .split(',')
        .map(|part| match part.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(bad()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

/// `[1, n]`, or `[1]` when `n == 1`.
pub fn default_ks(n: usize) -> Vec<usize> {
    if n <= 1 {
        vec![1]
    } else {
        vec![1, n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: SettingLabel,
    pub n: usize,
    pub task_count: usize,
    pub pass_hat: BTreeMap<usize, f64>,
    pub pass_at: BTreeMap<usize, f64>,
    pub category_counts: BTreeMap<ReliabilityCategory, usize>,
}

impl SettingSummary {
    pub fn consistently_solved(&self) -> usize {
        self.category_counts
            .get(&ReliabilityCategory::ConsistentlySolved)
            .copied()
            .unwrap_or(0)
    }
}

pub fn setting_summary(matrix: &OutcomeMatrix, ks: &[usize]) -> Result<SettingSummary, MetricsError> {
    let n = matrix.n();
    let counts = matrix.counts();
    let mut pass_hat = BTreeMap::new();
    let mut pass_at = BTreeMap::new();
    for &k in ks {
        pass_hat.insert(k, pass_hat_from_counts(&counts, n, k)?);
        pass_at.insert(k, pass_at_from_counts(&counts, n, k)?);
    }
    Ok(SettingSummary {
        setting: matrix.setting().clone(),
        n,
        task_count: matrix.task_count(),
        pass_hat,
        pass_at,
        category_counts: matrix.category_counts(),
    })
}
