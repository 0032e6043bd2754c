//! Repeated-run reliability analysis.
//!
//! Run every task `n` times, then ask two questions: how often do `k` runs all
//! succeed (pass^k), and did a change of setting move tasks into or out of
//! reliable execution (paired McNemar and Wilcoxon tests). The [`harness`]
//! module drives pluggable runners through repeated-run, retry and
//! plan-iteration protocols and emits traces that [`ingest`] reads back.
//! [`simlab`] holds Bernoulli policy simulations used to validate the
//! estimators and tests.

pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod outcome;
pub mod paired;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod special;

pub use metrics::{parse_k_list, pass_at_k, pass_hat_k, setting_summary, MetricsError, SettingSummary};
pub use outcome::{
    align_paired, build_matrix, OutcomeError, OutcomeMatrix, PairedMatrix, ReliabilityCategory, RunOutcome,
    SettingLabel, TaskId, TaskRuns,
};
pub use paired::{compare, compare_with, CompareOptions, ComparisonReport, PairedError};
