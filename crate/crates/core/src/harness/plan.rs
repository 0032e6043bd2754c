//! Plan extraction and iterative refinement.
//!
//! Iteration 0 runs a task `n` times without help. After every iteration the
//! rollouts decide what happens next:
//!
//! | rollouts            | history has a success | decision                     |
//! |---------------------|-----------------------|------------------------------|
//! | all succeed         | any                   | no feedback                  |
//! | mixed               | any                   | extract from this iteration  |
//! | all fail            | yes                   | extract using past successes |
//! | all fail            | no                    | extract from partial success |
//!
//! The extracted text is attached to every run of the next iteration, and the
//! next extraction receives it back for refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::protocol::{run_episode, EpisodeSpec};
use super::{EpisodeRecord, FeedbackExtractor, HarnessError, RetryProtocol, Task, TaskRunner};
use crate::outcome::{SettingLabel, TaskId};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackDecision {
    NoFeedbackAllSuccess,
    ExtractMixed,
    ExtractAllFailPartial,
    ExtractAllFailHistorical,
}

impl FeedbackDecision {
    pub fn extracts(self) -> bool {
        self != Self::NoFeedbackAllSuccess
    }
}

pub fn select_feedback_mode(
    current_rollouts: &[EpisodeRecord],
    historical_success_available: bool,
) -> Result<FeedbackDecision, HarnessError> {
    if current_rollouts.is_empty() {
        return Err(HarnessError::EmptyRollouts);
    }
    let successes = current_rollouts.iter().filter(|e| e.final_success).count();
    Ok(if successes == current_rollouts.len() {
        FeedbackDecision::NoFeedbackAllSuccess
    } else if successes > 0 {
        FeedbackDecision::ExtractMixed
    } else if historical_success_available {
        FeedbackDecision::ExtractAllFailHistorical
    } else {
        FeedbackDecision::ExtractAllFailPartial
    })
}

/// Pointer to one rollout that fed an extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRef {
    pub iteration: u32,
    pub run_index: u32,
    pub success: bool,
    pub trajectory_summary: String,
}

impl RolloutRef {
    fn from_episode(iteration: u32, ep: &EpisodeRecord) -> Self {
        Self {
            iteration,
            run_index: ep.run_index,
            success: ep.final_success,
            trajectory_summary: ep.attempts.last().map(|a| a.trajectory_summary.clone()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreEntry {
    /// `None` when every rollout succeeded and nothing was extracted.
    pub feedback_text: Option<String>,
    pub decision: FeedbackDecision,
    /// Rollouts handed to the extractor.
    pub evidence: Vec<RolloutRef>,
    /// Successful rollouts of this iteration, kept for later all-fail
    /// iterations.
    pub successes: Vec<RolloutRef>,
}

/// Feedback per `(task, iteration)`, iterations contiguous from 0 per task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackStore {
    entries: BTreeMap<(TaskId, u32), StoreEntry>,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, task: &TaskId, iteration: u32) -> Option<&StoreEntry> {
        self.entries.get(&(task.clone(), iteration))
    }

    pub fn next_iteration(&self, task: &TaskId) -> u32 {
        self.entries
            .range((task.clone(), 0)..=(task.clone(), u32::MAX))
            .next_back()
            .map_or(0, |((_, i), _)| i + 1)
    }

    pub fn insert(&mut self, task: TaskId, iteration: u32, entry: StoreEntry) -> Result<(), HarnessError> {
        let expected = self.next_iteration(&task);
        if iteration != expected {
            return Err(HarnessError::NonContiguousIteration {
                task,
                iteration,
                expected,
            });
        }
        self.entries.insert((task, iteration), entry);
        Ok(())
    }

    /// Successful rollouts of `task` recorded before `iteration`.
    pub fn historical_successes(&self, task: &TaskId, iteration: u32) -> Vec<RolloutRef> {
        self.entries
            .range((task.clone(), 0)..(task.clone(), iteration))
            .flat_map(|(_, e)| e.successes.iter().cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TaskId, u32, &StoreEntry)> {
        self.entries.iter().map(|((t, i), e)| (t, *i, e))
    }
}

/// Everything an extractor gets to see.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionRequest<'a> {
    pub task: &'a Task,
    pub iteration: u32,
    pub decision: FeedbackDecision,
    pub rollouts: &'a [EpisodeRecord],
    /// Successful rollouts from earlier iterations; non-empty only for
    /// [`FeedbackDecision::ExtractAllFailHistorical`].
    pub historical_successes: &'a [RolloutRef],
    /// Feedback produced by the previous iteration, to be refined.
    pub previous_feedback: Option<&'a str>,
}

pub fn iteration_setting(iteration: u32) -> SettingLabel {
    SettingLabel::new(format!("iteration-{iteration}")).expect("non-empty")
}

/// Runs iteration `iteration` for one task and records the extracted
/// feedback at `(task, iteration)`.
///
/// Returns the episodes and an updated copy of the store. On extractor
/// failure the input store is left as it was.
pub fn run_plan_iteration(
    runner: &mut dyn TaskRunner,
    extractor: &mut dyn FeedbackExtractor,
    store: &FeedbackStore,
    task: &Task,
    n: u32,
    iteration: u32,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, FeedbackStore), HarnessError> {
    if n == 0 {
        return Err(HarnessError::ZeroRuns);
    }
    let previous_feedback = if iteration == 0 {
        None
    } else {
        let prev = store
            .get(&task.id, iteration - 1)
            .ok_or_else(|| HarnessError::MissingPreviousIteration {
                task: task.id.clone(),
                iteration,
                missing: iteration - 1,
            })?;
        prev.feedback_text.as_deref()
    };
    let expected = store.next_iteration(&task.id);
    if expected != iteration {
        return Err(HarnessError::NonContiguousIteration {
            task: task.id.clone(),
            iteration,
            expected,
        });
    }

    let setting = iteration_setting(iteration);
    let iteration_seed = rng::child(seed, iteration as u64);
    let episodes: Vec<EpisodeRecord> = (0..n)
        .map(|run_index| {
            run_episode(
                runner,
                None,
                EpisodeSpec {
                    task,
                    setting: &setting,
                    protocol: RetryProtocol::none(),
                    run_index,
                    seed: iteration_seed,
                    plan: previous_feedback,
                },
            )
        })
        .collect();

    let historical = store.historical_successes(&task.id, iteration);
    let decision = select_feedback_mode(&episodes, !historical.is_empty())?;
    let current_refs: Vec<RolloutRef> = episodes.iter().map(|e| RolloutRef::from_episode(iteration, e)).collect();
    let successes: Vec<RolloutRef> = current_refs.iter().filter(|r| r.success).cloned().collect();

    let (feedback_text, evidence) = if decision.extracts() {
        let historical_slice: &[RolloutRef] = if decision == FeedbackDecision::ExtractAllFailHistorical {
            &historical
        } else {
            &[]
        };
        let request = ExtractionRequest {
            task,
            iteration,
            decision,
            rollouts: &episodes,
            historical_successes: historical_slice,
            previous_feedback,
        };
        let text = extractor
            .extract(&request)
            .map_err(|err| HarnessError::ExtractorFailure {
                task: task.id.clone(),
                iteration,
                message: err.0,
            })?;
        let mut evidence = historical_slice.to_vec();
        evidence.extend(current_refs);
        (Some(text), evidence)
    } else {
        (None, Vec::new())
    };

    let mut updated = store.clone();
    updated.insert(
        task.id.clone(),
        iteration,
        StoreEntry {
            feedback_text,
            decision,
            evidence,
            successes,
        },
    )?;
    Ok((episodes, updated))
}
