//! Synthetic Bernoulli policies and Monte Carlo experiments.
//!
//! Runs are drawn independently given each task's success probability. That
//! is a modeling assumption about the simulator, not a claim about real
//! agents: the experiments here check the estimators and tests, nothing more.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::harness::{
    run_retry_episode, stub::UpliftRunner, RetryProtocol, Task, BINARY_RETRY_SIGNAL,
};
use crate::metrics::{pairwise_sum, pass_at_from_counts, pass_hat_from_counts, MetricsError};
use crate::outcome::{align_paired, OutcomeMatrix, SettingLabel, TaskId};
use crate::paired::{check_alpha, compare_with, CompareOptions, McNemarMethod, PairedError, WilcoxonOptions};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("probability {value} at task {task} is outside [0, 1]")]
    BadProbability { task: usize, value: f64 },
    #[error("uplift has {uplift} entries for {tasks} tasks")]
    UpliftLength { tasks: usize, uplift: usize },
    #[error("policy has no tasks")]
    NoTasks,
    #[error("n must be at least 1")]
    ZeroRuns,
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Paired(#[from] PairedError),
}

/// Per-task success probabilities, with an optional probability that applies
/// once feedback has been injected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliPolicy {
    p: Vec<f64>,
    uplift: Option<Vec<f64>>,
}

fn check_probs(values: &[f64]) -> Result<(), SimError> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(task) => Err(SimError::BadProbability { task, value: values[task] }),
        None => Ok(()),
    }
}

impl BernoulliPolicy {
    pub fn new(p: Vec<f64>) -> Result<Self, SimError> {
        if p.is_empty() {
            return Err(SimError::NoTasks);
        }
        check_probs(&p)?;
        Ok(Self { p, uplift: None })
    }

    pub fn with_uplift(self, uplift: Vec<f64>) -> Result<Self, SimError> {
        if uplift.len() != self.p.len() {
            return Err(SimError::UpliftLength {
                tasks: self.p.len(),
                uplift: uplift.len(),
            });
        }
        check_probs(&uplift)?;
        Ok(Self {
            uplift: Some(uplift),
            ..self
        })
    }

    pub fn constant(task_count: usize, p: f64) -> Result<Self, SimError> {
        Self::new(vec![p; task_count])
    }

    /// `p_x ~ Uniform(0, 1)`, drawn from `seed`.
    pub fn uniform(task_count: usize, seed: u64) -> Result<Self, SimError> {
        let key = rng::child_str(seed, "policy");
        Self::new((0..task_count).map(|x| rng::unit_f64(rng::child(key, x as u64))).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn uplift(&self) -> Option<&[f64]> {
        self.uplift.as_deref()
    }

    pub fn task_count(&self) -> usize {
        self.p.len()
    }
}

/// Task id used for the `i`-th simulated task.
pub fn sim_task_id(i: usize) -> TaskId {
    TaskId::new(format!("t{i:04}")).expect("non-empty id")
}

fn sample_counts(policy: &BernoulliPolicy, n: usize, seed: u64) -> Vec<usize> {
    policy
        .p
        .iter()
        .enumerate()
        .map(|(x, &p)| {
            let task_key = rng::child(seed, x as u64);
            (0..n).filter(|&j| rng::bernoulli(rng::child(task_key, j as u64), p)).count()
        })
        .collect()
}

/// Draws an outcome matrix labeled `sim`. Run `j` of task `x` is a pure
/// function of `(seed, x, j)`.
pub fn sample_outcomes(policy: &BernoulliPolicy, n: usize, seed: u64) -> Result<OutcomeMatrix, SimError> {
    sample_setting(policy, SettingLabel::new("sim").expect("non-empty"), n, seed)
}

pub fn sample_setting(
    policy: &BernoulliPolicy,
    setting: SettingLabel,
    n: usize,
    seed: u64,
) -> Result<OutcomeMatrix, SimError> {
    if n == 0 {
        return Err(SimError::ZeroRuns);
    }
    let rows = policy.p.iter().enumerate().map(|(x, &p)| {
        let task_key = rng::child(seed, x as u64);
        let runs = (0..n).map(|j| rng::bernoulli(rng::child(task_key, j as u64), p)).collect();
        (sim_task_id(x), runs)
    });
    Ok(OutcomeMatrix::from_rows(setting, rows).expect("policy has tasks and n >= 1"))
}

/// Mean over tasks of `p_x^k`.
pub fn analytic_pass_hat_k(policy: &BernoulliPolicy, k: usize) -> f64 {
    let terms: Vec<f64> = policy.p.iter().map(|p| p.powi(k as i32)).collect();
    pairwise_sum(&terms) / terms.len() as f64
}

/// Mean over tasks of `1 - (1 - p_x)^k`.
pub fn analytic_pass_at_k(policy: &BernoulliPolicy, k: usize) -> f64 {
    let terms: Vec<f64> = policy.p.iter().map(|p| 1.0 - (1.0 - p).powi(k as i32)).collect();
    pairwise_sum(&terms) / terms.len() as f64
}

/// Episode success probability with first-attempt probability `p0`,
/// post-feedback probability `p1` and `budget` retries.
pub fn retry_success_probability(p0: f64, p1: f64, budget: u32) -> f64 {
    // Same as 1 - (1-p0)(1-p1)^budget, arranged so budget 0 returns p0 exactly.
    p0 + (1.0 - p0) * (1.0 - (1.0 - p1).powi(budget as i32))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let len = values.len() as f64;
    let mean = pairwise_sum(values) / len;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&sq) / (len - 1.0);
    (mean, (var / len).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PolicyDraw {
    /// Every task has the same probability.
    Constant(f64),
    /// Fresh `p_x ~ Uniform(0, 1)` per trial.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationConfig {
    pub task_count: usize,
    pub n: usize,
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
    pub draw: PolicyDraw,
    pub mcnemar: McNemarMethod,
    pub wilcoxon: WilcoxonOptions,
}

impl CalibrationConfig {
    pub fn new(task_count: usize, n: usize, trials: usize, alpha: f64, seed: u64) -> Self {
        Self {
            task_count,
            n,
            trials,
            alpha,
            seed,
            draw: PolicyDraw::Uniform,
            mcnemar: McNemarMethod::Auto,
            wilcoxon: WilcoxonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RejectionRate {
    pub rate: f64,
    /// Binomial Monte Carlo standard error of `rate`.
    pub se: f64,
    pub rejections: usize,
}

impl RejectionRate {
    fn from_count(rejections: usize, trials: usize) -> Self {
        let rate = rejections as f64 / trials as f64;
        Self {
            rate,
            se: (rate * (1.0 - rate) / trials as f64).sqrt(),
            rejections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub trials: usize,
    pub mcnemar: RejectionRate,
    pub wilcoxon: RejectionRate,
}

/// Runs `trials` null comparisons: both settings are sampled from the same
/// policy, so every rejection is a false positive.
pub fn calibration_experiment(config: &CalibrationConfig) -> Result<CalibrationResult, SimError> {
    if config.trials == 0 {
        return Err(SimError::ZeroTrials);
    }
    if config.n == 0 {
        return Err(SimError::ZeroRuns);
    }
    if config.task_count == 0 {
        return Err(SimError::NoTasks);
    }
    let options = CompareOptions {
        alpha: config.alpha,
        ks: vec![1],
        mcnemar: config.mcnemar,
        wilcoxon: config.wilcoxon,
    };
    check_alpha(config.alpha)?;

    let outcomes: Vec<(bool, bool)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let trial_key = rng::child(config.seed, trial as u64);
            let policy = match config.draw {
                PolicyDraw::Constant(p) => BernoulliPolicy::constant(config.task_count, p)?,
                PolicyDraw::Uniform => BernoulliPolicy::uniform(config.task_count, trial_key)?,
            };
            let base = sample_setting(&policy, SettingLabel::new("base").expect("non-empty"), config.n, rng::child(trial_key, 1))?;
            let new = sample_setting(&policy, SettingLabel::new("new").expect("non-empty"), config.n, rng::child(trial_key, 2))?;
            let paired = align_paired(base, new).expect("same task ids and n");
            let report = compare_with(&paired, &options)?;
            Ok((report.mcnemar.significant, report.wilcoxon.significant))
        })
        .collect::<Result<_, SimError>>()?;

    let mc = outcomes.iter().filter(|o| o.0).count();
    let wx = outcomes.iter().filter(|o| o.1).count();
    Ok(CalibrationResult {
        trials: config.trials,
        mcnemar: RejectionRate::from_count(mc, config.trials),
        wilcoxon: RejectionRate::from_count(wx, config.trials),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessConfig {
    pub task_count: usize,
    pub n: usize,
    pub reps: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl UnbiasednessConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            task_count: 200,
            n: 10,
            reps: 2000,
            ks: vec![1, 3, 10],
            seed,
        }
    }
}

/// Monte Carlo mean of one estimator next to its analytic value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorCheck {
    pub metric: &'static str,
    pub k: usize,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
}

impl EstimatorCheck {
    /// `|mc_mean - analytic|` in units of the Monte Carlo standard error.
    pub fn z(&self) -> f64 {
        if self.mc_se == 0.0 {
            if self.mc_mean == self.analytic {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mc_mean - self.analytic).abs() / self.mc_se
        }
    }
}

/// Draws one uniform policy, then `reps` matrices from it, and compares the
/// average pass^k and pass@k estimates with their analytic values.
pub fn unbiasedness_experiment(config: &UnbiasednessConfig) -> Result<Vec<EstimatorCheck>, SimError> {
    if config.reps == 0 {
        return Err(SimError::ZeroTrials);
    }
    if config.n == 0 {
        return Err(SimError::ZeroRuns);
    }
    let policy = BernoulliPolicy::uniform(config.task_count, config.seed)?;
    let n = config.n;
    for &k in &config.ks {
        pass_hat_from_counts(&[], n, k)?;
    }
    let estimates: Vec<Vec<(f64, f64)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let counts = sample_counts(&policy, n, rng::child(config.seed, rep as u64));
            config
                .ks
                .iter()
                .map(|&k| {
                    (
                        pass_hat_from_counts(&counts, n, k).expect("k checked"),
                        pass_at_from_counts(&counts, n, k).expect("k checked"),
                    )
                })
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    for (i, &k) in config.ks.iter().enumerate() {
        let hats: Vec<f64> = estimates.iter().map(|e| e[i].0).collect();
        let ats: Vec<f64> = estimates.iter().map(|e| e[i].1).collect();
        let (m, se) = mean_and_se(&hats);
        out.push(EstimatorCheck {
            metric: "pass_hat",
            k,
            analytic: analytic_pass_hat_k(&policy, k),
            mc_mean: m,
            mc_se: se,
        });
        let (m, se) = mean_and_se(&ats);
        out.push(EstimatorCheck {
            metric: "pass_at",
            k,
            analytic: analytic_pass_at_k(&policy, k),
            mc_mean: m,
            mc_se: se,
        });
    }
    Ok(out)
}

/// A policy where a block of tasks is always solved, a block never is and
/// the rest spread evenly over `(0, 1)`. At `n = 10` it separates pass@k from
/// pass^k by roughly forty points at `k = 10`.
pub fn divergence_policy() -> BernoulliPolicy {
    let solved = 63;
    let unsolved = 35;
    let spread = 102;
    let mut p = vec![1.0; solved];
    p.extend(std::iter::repeat_n(0.0, unsolved));
    p.extend((0..spread).map(|j| (j as f64 + 0.5) / spread as f64));
    BernoulliPolicy::new(p).expect("probabilities in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub pass_at: f64,
    pub pass_hat: f64,
    pub analytic_pass_at: f64,
    pub analytic_pass_hat: f64,
}

/// pass@k and pass^k for `k = 1..=n` on one sampled matrix of the
/// [`divergence_policy`].
pub fn divergence_curve(n: usize, seed: u64) -> Result<Vec<CurvePoint>, SimError> {
    if n == 0 {
        return Err(SimError::ZeroRuns);
    }
    let policy = divergence_policy();
    let counts = sample_counts(&policy, n, seed);
    (1..=n)
        .map(|k| {
            Ok(CurvePoint {
                k,
                pass_at: pass_at_from_counts(&counts, n, k)?,
                pass_hat: pass_hat_from_counts(&counts, n, k)?,
                analytic_pass_at: analytic_pass_at_k(&policy, k),
                analytic_pass_hat: analytic_pass_hat_k(&policy, k),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetryExperimentConfig {
    pub p0: f64,
    pub p1: f64,
    pub budget: u32,
    pub episodes: u32,
    pub seed: u64,
}

impl RetryExperimentConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            p0: 0.3,
            p1: 0.6,
            budget: 5,
            episodes: 100_000,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetryExperimentResult {
    pub episodes: u32,
    pub successes: u32,
    pub empirical: f64,
    pub se: f64,
    pub analytic: f64,
    /// Episodes that broke the attempt-count or outcome shape rules.
    pub shape_violations: u32,
    /// Injected messages that were not the binary retry string.
    pub signal_mismatches: u32,
    pub mean_attempts: f64,
}

/// Runs binary-retry episodes through the harness with an [`UpliftRunner`].
pub fn retry_experiment(config: &RetryExperimentConfig) -> Result<RetryExperimentResult, SimError> {
    if config.episodes == 0 {
        return Err(SimError::ZeroTrials);
    }
    check_probs(&[config.p0, config.p1])?;
    let protocol = RetryProtocol::binary(config.budget).expect("binary protocol accepts any budget");
    let task = Task::new(sim_task_id(0), "simulated task", "").expect("non-empty instruction");
    let setting = SettingLabel::new("retry-binary").expect("non-empty");

    let per_episode: Vec<(bool, bool, u32, usize)> = (0..config.episodes)
        .into_par_iter()
        .map(|run_index| {
            let mut runner = UpliftRunner {
                p0: config.p0,
                p1: config.p1,
            };
            let ep = run_retry_episode(&mut runner, None, &task, &setting, protocol, run_index, config.seed)
                .expect("retry protocol");
            let bad_signals = ep.feedback_injected.iter().filter(|m| *m != BINARY_RETRY_SIGNAL).count() as u32;
            (ep.final_success, ep.check_shape(config.budget).is_ok(), bad_signals, ep.attempts.len())
        })
        .collect();

    let successes = per_episode.iter().filter(|e| e.0).count() as u32;
    let total = config.episodes as f64;
    let empirical = successes as f64 / total;
    let attempts: usize = per_episode.iter().map(|e| e.3).sum();
    Ok(RetryExperimentResult {
        episodes: config.episodes,
        successes,
        empirical,
        se: (empirical * (1.0 - empirical) / total).sqrt(),
        analytic: retry_success_probability(config.p0, config.p1, config.budget),
        shape_violations: per_episode.iter().filter(|e| !e.1).count() as u32,
        signal_mismatches: per_episode.iter().map(|e| e.2).sum(),
        mean_attempts: attempts as f64 / total,
    })
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
