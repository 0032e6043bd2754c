//! Paired comparison of two settings over the same tasks.
//!
//! Two complementary tests:
//!
//! * McNemar on the consistently-solved indicator `z = [c == n]`. It counts
//!   tasks that became reliable (`b`) against tasks that stopped being
//!   reliable (`c`).
//! * Wilcoxon signed-rank on per-task success-count differences
//!   `d = c_new - c_base`, which picks up partial moves such as 1 -> 2
//!   successes that never reach full reliability.
//!
//! All p-values are two-sided. Both tests have an exact small-sample mode
//! selected automatically below fixed thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{setting_summary, MetricsError, SettingSummary};
use crate::outcome::{OutcomeError, PairedMatrix, SettingLabel};
use crate::special::{binomial_half_upper_tail, chi2_1_sf, normal_two_sided};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Auto mode uses the exact binomial McNemar test when `b + c` is below this.
pub const MCNEMAR_EXACT_BELOW: u64 = 25;
/// Auto mode enumerates the Wilcoxon null distribution up to this many
/// nonzero differences.
pub const WILCOXON_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairedError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), PairedError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PairedError::InvalidAlpha(alpha))
    }
}

/// 2x2 table of consistently-solved status, base vs new.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discordance {
    /// Not reliable in base, reliable in new.
    pub b: u64,
    /// Reliable in base, not reliable in new.
    pub c: u64,
    pub concordant_11: u64,
    pub concordant_00: u64,
}

impl Discordance {
    pub fn total(&self) -> u64 {
        self.b + self.c + self.concordant_11 + self.concordant_00
    }

    pub fn b_minus_c(&self) -> i64 {
        self.b as i64 - self.c as i64
    }
}

pub fn discordant_counts(paired: &PairedMatrix) -> Discordance {
    let n = paired.n();
    let mut d = Discordance {
        b: 0,
        c: 0,
        concordant_11: 0,
        concordant_00: 0,
    };
    for (cb, cn) in paired.count_pairs() {
        match (cb == n, cn == n) {
            (false, true) => d.b += 1,
            (true, false) => d.c += 1,
            (true, true) => d.concordant_11 += 1,
            (false, false) => d.concordant_00 += 1,
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarMethod {
    ChiSquare,
    ExactBinomial,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarMode {
    ChiSquare,
    ExactBinomial,
}

impl McNemarMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ChiSquare => "chi-square",
            Self::ExactBinomial => "exact-binomial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b_minus_c: i64,
    /// `(b - c)^2 / (b + c)`; `None` when there are no discordant tasks.
    pub chi_square: Option<f64>,
    pub p_value: f64,
    pub mode: McNemarMode,
    pub significant: bool,
}

pub fn mcnemar(disc: &Discordance, alpha: f64, method: McNemarMethod) -> Result<McNemarResult, PairedError> {
    check_alpha(alpha)?;
    let (b, c) = (disc.b, disc.c);
    let discordant = b + c;
    let mode = match method {
        McNemarMethod::ChiSquare => McNemarMode::ChiSquare,
        McNemarMethod::ExactBinomial => McNemarMode::ExactBinomial,
        McNemarMethod::Auto if discordant < MCNEMAR_EXACT_BELOW => McNemarMode::ExactBinomial,
        McNemarMethod::Auto => McNemarMode::ChiSquare,
    };
    if discordant == 0 {
        return Ok(McNemarResult {
            b_minus_c: 0,
            chi_square: None,
            p_value: 1.0,
            mode,
            significant: false,
        });
    }
    let diff = b as f64 - c as f64;
    let chi = diff * diff / discordant as f64;
    let p_value = match mode {
        McNemarMode::ChiSquare => chi2_1_sf(chi),
        McNemarMode::ExactBinomial => (2.0 * binomial_half_upper_tail(discordant, b.max(c))).min(1.0),
    };
    Ok(McNemarResult {
        b_minus_c: disc.b_minus_c(),
        chi_square: Some(chi),
        p_value,
        mode,
        significant: p_value < alpha,
    })
}

/// `c_new - c_base` per task, in canonical task order.
pub fn per_task_diffs(paired: &PairedMatrix) -> Vec<i64> {
    paired
        .count_pairs()
        .into_iter()
        .map(|(cb, cn)| cn as i64 - cb as i64)
        .collect()
}

/// Mean success-count change over all tasks, raw and divided by `n`.
///
/// The normalized value is the per-run success-rate change, the scale used
/// in published reliability tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDiff {
    pub raw: f64,
    pub normalized: f64,
}

pub fn mean_diff(diffs: &[i64], n: usize) -> MeanDiff {
    assert!(n >= 1, "run count must be positive");
    if diffs.is_empty() {
        return MeanDiff {
            raw: 0.0,
            normalized: 0.0,
        };
    }
    let sum: i64 = diffs.iter().sum();
    let raw = sum as f64 / diffs.len() as f64;
    MeanDiff {
        raw,
        normalized: sum as f64 / (diffs.len() as f64 * n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMode {
    Exact,
    NormalApprox,
}

impl WilcoxonMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::NormalApprox => "normal-approx",
        }
    }
}

/// How zero differences enter the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroMethod {
    /// Drop zeros, rank the nonzero differences only.
    #[default]
    Wilcox,
    /// Rank zeros together with everything else, then drop their ranks.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WilcoxonOptions {
    pub method: WilcoxonMethod,
    pub zero_method: ZeroMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_statistic: f64,
    pub nonzero_count: usize,
    /// Mean difference over all tasks, zeros included.
    pub delta_cx: f64,
    pub p_value: f64,
    pub mode: WilcoxonMode,
    pub significant: bool,
}

/// Signed, doubled ranks of the nonzero differences.
///
/// Doubling keeps average ranks integral: a tie group spanning 1-based
/// positions `lo..=hi` gets doubled rank `lo + hi`.
struct SignedRanks {
    /// `(doubled rank, is_positive)` for each nonzero difference.
    ranks: Vec<(u64, bool)>,
    /// Tie group sizes among the ranked values.
    tie_sizes: Vec<u64>,
}

fn signed_ranks(diffs: &[i64], zero_method: ZeroMethod) -> SignedRanks {
    let mut items: Vec<(u64, i64)> = diffs
        .iter()
        .filter(|&&d| zero_method == ZeroMethod::Pratt || d != 0)
        .map(|&d| (d.unsigned_abs(), d))
        .collect();
    items.sort_by_key(|&(a, _)| a);

    let mut ranks = Vec::with_capacity(items.len());
    let mut tie_sizes = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let mut end = start;
        while end + 1 < items.len() && items[end + 1].0 == items[start].0 {
            end += 1;
        }
        let doubled = (start + 1 + end + 1) as u64;
        tie_sizes.push((end - start + 1) as u64);
        for &(_, d) in &items[start..=end] {
            if d != 0 {
                ranks.push((doubled, d > 0));
            }
        }
        start = end + 1;
    }
    SignedRanks { ranks, tie_sizes }
}

/// Exact two-sided p-value: the share of the `2^m` sign assignments whose
/// positive-rank sum is at least as far from its null mean as the observed one.
fn exact_p(ranks: &[(u64, bool)]) -> f64 {
    let m = ranks.len();
    let total: u64 = ranks.iter().map(|r| r.0).sum();
    let observed: u64 = ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    // Compare |2 S - T| on doubled-rank sums; all integers.
    let dev = |s: u64| (2 * s as i128 - total as i128).unsigned_abs();
    let observed_dev = dev(observed);
    let max = total as usize;

    if m <= 127 {
        let mut counts = vec![0u128; max + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &(r, _) in ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let hits: u128 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| dev(*s as u64) >= observed_dev)
            .map(|(_, c)| *c)
            .sum();
        hits as f64 / 2f64.powi(m as i32)
    } else {
        let mut probs = vec![0f64; max + 1];
        probs[0] = 1.0;
        let mut reach = 0usize;
        for &(r, _) in ranks {
            let r = r as usize;
            for s in (0..=reach + r).rev() {
                let stay = probs[s] * 0.5;
                let moved = if s >= r { probs[s - r] * 0.5 } else { 0.0 };
                probs[s] = stay + moved;
            }
            reach += r;
        }
        probs
            .iter()
            .enumerate()
            .filter(|(s, _)| dev(*s as u64) >= observed_dev)
            .map(|(_, p)| *p)
            .sum::<f64>()
            .min(1.0)
    }
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
fn normal_p(sr: &SignedRanks, zero_method: ZeroMethod) -> f64 {
    let m = sr.ranks.len() as f64;
    let total: u64 = sr.ranks.iter().map(|r| r.0).sum();
    let observed: u64 = sr.ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    let w = observed as f64 / 2.0;
    let mean = total as f64 / 4.0;
    let variance = match zero_method {
        ZeroMethod::Wilcox => {
            let tie_term: f64 = sr.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 2.0;
            (m * (m + 1.0) * (2.0 * m + 1.0) - tie_term) / 24.0
        }
        // General form: each rank contributes r^2 / 4.
        ZeroMethod::Pratt => sr.ranks.iter().map(|&(r, _)| (r * r) as f64).sum::<f64>() / 16.0,
    };
    if variance <= 0.0 {
        return 1.0;
    }
    let dev = ((w - mean).abs() - 0.5).max(0.0);
    normal_two_sided(dev / variance.sqrt())
}

pub fn wilcoxon(diffs: &[i64], alpha: f64, method: WilcoxonMethod) -> Result<WilcoxonResult, PairedError> {
    wilcoxon_with(
        diffs,
        alpha,
        WilcoxonOptions {
            method,
            zero_method: ZeroMethod::Wilcox,
        },
    )
}

pub fn wilcoxon_with(diffs: &[i64], alpha: f64, options: WilcoxonOptions) -> Result<WilcoxonResult, PairedError> {
    check_alpha(alpha)?;
    let sr = signed_ranks(diffs, options.zero_method);
    let m = sr.ranks.len();
    let mode = match options.method {
        WilcoxonMethod::Exact => WilcoxonMode::Exact,
        WilcoxonMethod::NormalApprox => WilcoxonMode::NormalApprox,
        WilcoxonMethod::Auto if m <= WILCOXON_EXACT_MAX => WilcoxonMode::Exact,
        WilcoxonMethod::Auto => WilcoxonMode::NormalApprox,
    };
    let delta_cx = if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().sum::<i64>() as f64 / diffs.len() as f64
    };
    if m == 0 {
        return Ok(WilcoxonResult {
            w_statistic: 0.0,
            nonzero_count: 0,
            delta_cx,
            p_value: 1.0,
            mode,
            significant: false,
        });
    }
    let w_statistic = sr.ranks.iter().filter(|r| r.1).map(|r| r.0).sum::<u64>() as f64 / 2.0;
    let p_value = match mode {
        WilcoxonMode::Exact => exact_p(&sr.ranks),
        WilcoxonMode::NormalApprox => normal_p(&sr, options.zero_method),
    };
    Ok(WilcoxonResult {
        w_statistic,
        nonzero_count: m,
        delta_cx,
        p_value,
        mode,
        significant: p_value < alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub alpha: f64,
    /// Empty means the defaults `[1, n]`.
    pub ks: Vec<usize>,
    pub mcnemar: McNemarMethod,
    pub wilcoxon: WilcoxonOptions,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            ks: Vec::new(),
            mcnemar: McNemarMethod::Auto,
            wilcoxon: WilcoxonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base: SettingLabel,
    pub new: SettingLabel,
    pub base_summary: SettingSummary,
    pub new_summary: SettingSummary,
    pub discordance: Discordance,
    pub mcnemar: McNemarResult,
    pub wilcoxon: WilcoxonResult,
    pub mean_diff: MeanDiff,
    pub alpha: f64,
}

impl ComparisonReport {
    pub fn significant_any(&self) -> bool {
        self.mcnemar.significant || self.wilcoxon.significant
    }
}

pub fn compare(paired: &PairedMatrix, alpha: f64, ks: &[usize]) -> Result<ComparisonReport, PairedError> {
    compare_with(
        paired,
        &CompareOptions {
            alpha,
            ks: ks.to_vec(),
            ..CompareOptions::default()
        },
    )
}

pub fn compare_with(paired: &PairedMatrix, options: &CompareOptions) -> Result<ComparisonReport, PairedError> {
    check_alpha(options.alpha)?;
    let ks = if options.ks.is_empty() {
        crate::metrics::default_ks(paired.n())
    } else {
        options.ks.clone()
    };
    let base_summary = setting_summary(paired.base(), &ks)?;
    let new_summary = setting_summary(paired.new_setting(), &ks)?;
    let discordance = discordant_counts(paired);
    let mcnemar = mcnemar(&discordance, options.alpha, options.mcnemar)?;
    let diffs = per_task_diffs(paired);
    let wilcoxon = wilcoxon_with(&diffs, options.alpha, options.wilcoxon)?;
    Ok(ComparisonReport {
        base: paired.base().setting().clone(),
        new: paired.new_setting().setting().clone(),
        base_summary,
        new_summary,
        discordance,
        mcnemar,
        wilcoxon,
        mean_diff: mean_diff(&diffs, paired.n()),
        alpha: options.alpha,
    })
}
