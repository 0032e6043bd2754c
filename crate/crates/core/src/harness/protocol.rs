use std::collections::BTreeMap;

use super::plan::{run_plan_iteration, FeedbackStore};
use super::{
    attempt_seed, clarify_signal, episode_seed, AttemptContext, AttemptResult, EpisodeRecord, FeedbackExtractor,
    FeedbackProvider, HarnessError, RetryKind, RetryProtocol, Task, TaskRunner, BINARY_RETRY_SIGNAL,
};
use crate::outcome::SettingLabel;

pub(crate) struct EpisodeSpec<'a> {
    pub task: &'a Task,
    pub setting: &'a SettingLabel,
    pub protocol: RetryProtocol,
    pub run_index: u32,
    pub seed: u64,
    pub plan: Option<&'a str>,
}

/// Runs one episode. Attempts are strictly sequential; the episode stops at
/// the first success or when the retry budget is spent.
pub(crate) fn run_episode(
    runner: &mut dyn TaskRunner,
    mut provider: Option<&mut dyn FeedbackProvider>,
    spec: EpisodeSpec<'_>,
) -> EpisodeRecord {
    let ep_seed = episode_seed(spec.seed, &spec.task.id, spec.run_index);
    let mut attempts: Vec<AttemptResult> = Vec::new();
    let mut injected: Vec<String> = Vec::new();
    let mut meta = BTreeMap::new();
    meta.insert("protocol".to_string(), spec.protocol.kind().as_str().to_string());
    if let Some(plan) = spec.plan {
        meta.insert("plan".to_string(), plan.to_string());
    }

    for attempt_index in 0..=spec.protocol.budget() {
        let reset = spec.protocol.resets_between_attempts();
        let visible: &[String] = if reset && !injected.is_empty() {
            &injected[injected.len() - 1..]
        } else {
            &injected
        };
        let context = AttemptContext {
            run_index: spec.run_index,
            attempt_index,
            plan: spec.plan,
            messages: visible,
            fresh_session: attempt_index == 0 || reset,
        };
        let result = match runner.attempt(spec.task, &context, attempt_seed(ep_seed, attempt_index)) {
            Ok(out) => AttemptResult {
                attempt_index,
                success: out.success,
                trajectory_summary: out.trajectory_summary,
            },
            Err(err) => {
                meta.insert(format!("attempt.{attempt_index}.runner_error"), err.0);
                AttemptResult {
                    attempt_index,
                    success: false,
                    trajectory_summary: String::new(),
                }
            }
        };
        let success = result.success;
        attempts.push(result);
        if success || attempt_index == spec.protocol.budget() {
            break;
        }

        let last = attempts.last().expect("just pushed");
        let signal = match spec.protocol.kind() {
            RetryKind::None => unreachable!("budget is zero without retries"),
            RetryKind::RetryBinary => BINARY_RETRY_SIGNAL.to_string(),
            RetryKind::RetryClarify => match provider.as_deref_mut().map(|p| p.feedback(spec.task, last)) {
                Some(Ok(text)) => clarify_signal(&text),
                Some(Err(err)) => {
                    meta.insert(format!("attempt.{attempt_index}.feedback_fallback"), err.0);
                    BINARY_RETRY_SIGNAL.to_string()
                }
                None => {
                    meta.insert(
                        format!("attempt.{attempt_index}.feedback_fallback"),
                        "no feedback provider".to_string(),
                    );
                    BINARY_RETRY_SIGNAL.to_string()
                }
            },
        };
        injected.push(signal);
    }

    let final_success = attempts.last().is_some_and(|a| a.success);
    EpisodeRecord {
        task: spec.task.id.clone(),
        setting: spec.setting.clone(),
        run_index: spec.run_index,
        attempts,
        feedback_injected: injected,
        final_success,
        meta,
    }
}

/// `n` independent single-attempt episodes of one task, run indices `0..n`.
///
/// A runner error marks that run as failed (with the message in the episode
/// meta) and the remaining runs still execute.
pub fn run_repeated(
    runner: &mut dyn TaskRunner,
    task: &Task,
    setting: &SettingLabel,
    n: u32,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    if n == 0 {
        return Err(HarnessError::ZeroRuns);
    }
    Ok((0..n)
        .map(|run_index| {
            run_episode(
                runner,
                None,
                EpisodeSpec {
                    task,
                    setting,
                    protocol: RetryProtocol::none(),
                    run_index,
                    seed,
                    plan: None,
                },
            )
        })
        .collect())
}

/// One retry episode: an initial attempt, then after every failure a retry
/// signal and another attempt, up to the protocol's budget.
///
/// Under [`RetryKind::RetryClarify`] the provider's text is wrapped in the
/// clarify template; if the provider fails, that retry falls back to the
/// binary signal and the episode meta records why.
pub fn run_retry_episode(
    runner: &mut dyn TaskRunner,
    provider: Option<&mut dyn FeedbackProvider>,
    task: &Task,
    setting: &SettingLabel,
    protocol: RetryProtocol,
    run_index: u32,
    seed: u64,
) -> Result<EpisodeRecord, HarnessError> {
    if protocol.kind() == RetryKind::None {
        return Err(HarnessError::InvalidProtocol {
            kind: RetryKind::None,
            budget: protocol.budget(),
        });
    }
    Ok(run_episode(
        runner,
        provider,
        EpisodeSpec {
            task,
            setting,
            protocol,
            run_index,
            seed,
            plan: None,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolChoice {
    Repeated,
    Retry(RetryProtocol),
    /// Iterations `0..=iterations` of plan extraction and refinement.
    PlanIterate { iterations: u32 },
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub tasks: Vec<Task>,
    pub n: u32,
    pub seed: u64,
    pub protocol: ProtocolChoice,
    /// Setting name for non-iterative protocols; plan iterations are named
    /// `iteration-<i>`.
    pub setting: SettingLabel,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub episodes: Vec<EpisodeRecord>,
    pub diagnostics: Vec<String>,
    pub store: FeedbackStore,
}

/// Runs a whole task set under one protocol. Output order is
/// (iteration, task id, run index); repetitions of a task never share
/// feedback with each other.
pub fn run_suite(
    config: &SuiteConfig,
    runner: &mut dyn TaskRunner,
    mut provider: Option<&mut dyn FeedbackProvider>,
    extractor: Option<&mut dyn FeedbackExtractor>,
) -> Result<SuiteOutcome, HarnessError> {
    if config.n == 0 {
        return Err(HarnessError::ZeroRuns);
    }
    let mut tasks: Vec<&Task> = config.tasks.iter().collect();
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = SuiteOutcome::default();

    match config.protocol {
        ProtocolChoice::Repeated => {
            for task in tasks {
                out.episodes
                    .extend(run_repeated(runner, task, &config.setting, config.n, config.seed)?);
            }
        }
        ProtocolChoice::Retry(protocol) => {
            for task in tasks {
                for run_index in 0..config.n {
                    let ep = if protocol.kind() == RetryKind::None {
                        run_episode(
                            runner,
                            None,
                            EpisodeSpec {
                                task,
                                setting: &config.setting,
                                protocol,
                                run_index,
                                seed: config.seed,
                                plan: None,
                            },
                        )
                    } else {
                        run_retry_episode(
                            runner,
                            provider.as_mut().map(|p| &mut **p as &mut dyn FeedbackProvider),
                            task,
                            &config.setting,
                            protocol,
                            run_index,
                            config.seed,
                        )?
                    };
                    out.episodes.push(ep);
                }
            }
        }
        ProtocolChoice::PlanIterate { iterations } => {
            let extractor = extractor.ok_or_else(|| HarnessError::ExtractorFailure {
                task: tasks
                    .first()
                    .map(|t| t.id.clone())
                    .unwrap_or_else(|| crate::outcome::TaskId::new("-").expect("non-empty")),
                iteration: 0,
                message: "no feedback extractor configured".into(),
            })?;
            let mut active: Vec<&Task> = tasks;
            for iteration in 0..=iterations {
                let mut still_active = Vec::with_capacity(active.len());
                for task in active {
                    match run_plan_iteration(runner, extractor, &out.store, task, config.n, iteration, config.seed) {
                        Ok((episodes, store)) => {
                            out.episodes.extend(episodes);
                            out.store = store;
                            still_active.push(task);
                        }
                        Err(err) => out.diagnostics.push(err.to_string()),
                    }
                }
                active = still_active;
            }
        }
    }
    Ok(out)
}
