//! Protocol engine for driving task runners.
//!
//! A [`TaskRunner`] executes one attempt of a task and reports a binary
//! outcome from its own evaluator. The harness owns everything around that:
//! repeated runs, retry episodes with injected failure signals, and the
//! plan extraction / refinement loop across iterations. Runners, feedback
//! providers and feedback extractors are traits; deterministic stubs live in
//! [`stub`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::outcome::{OutcomeError, SettingLabel, TaskId};
use crate::rng;

mod plan;
mod protocol;
pub mod stub;

pub use plan::{
    run_plan_iteration, select_feedback_mode, ExtractionRequest, FeedbackDecision, FeedbackStore, RolloutRef,
    StoreEntry,
};
pub use protocol::{run_repeated, run_retry_episode, run_suite, ProtocolChoice, SuiteConfig};

/// Injected after a failed attempt under the binary retry protocol.
pub const BINARY_RETRY_SIGNAL: &str =
    "Your previous attempt did not succeed. The task is not complete. Please try again.";

/// First line of the clarify retry message; the feedback text follows on
/// the next line.
pub const CLARIFY_RETRY_HEADER: &str = "Your previous attempt did not succeed. Here is feedback from the user:";

/// Default number of retries after the initial attempt.
pub const DEFAULT_RETRY_BUDGET: u32 = 5;

pub fn clarify_signal(feedback: &str) -> String {
    format!("{CLARIFY_RETRY_HEADER}\n{feedback}")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("task instruction must be non-empty")]
    EmptyInstruction,
    #[error("retry budget {budget} does not fit protocol {kind}: budget is 0 exactly when the kind is none")]
    InvalidProtocol { kind: RetryKind, budget: u32 },
    #[error("repeated runs need n >= 1")]
    ZeroRuns,
    #[error("feedback mode selection needs at least one rollout")]
    EmptyRollouts,
    #[error("task '{task}' iteration {iteration}: no store entry for iteration {missing}")]
    MissingPreviousIteration { task: TaskId, iteration: u32, missing: u32 },
    #[error("task '{task}': iteration {iteration} is not the next iteration (expected {expected})")]
    NonContiguousIteration { task: TaskId, iteration: u32, expected: u32 },
    #[error("feedback extraction failed for task '{task}' iteration {iteration}: {message}")]
    ExtractorFailure { task: TaskId, iteration: u32, message: String },
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
}

/// A task as seen by the harness: identifier, natural-language instruction and
/// an opaque reference to the initial environment state that only the runner
/// interprets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub instruction: String,
    #[serde(default)]
    pub initial_state_ref: String,
}

impl Task {
    pub fn new(id: TaskId, instruction: impl Into<String>, initial_state_ref: impl Into<String>) -> Result<Self, HarnessError> {
        let instruction = instruction.into();
        if instruction.is_empty() {
            return Err(HarnessError::EmptyInstruction);
        }
        Ok(Self {
            id,
            instruction,
            initial_state_ref: initial_state_ref.into(),
        })
    }
}

/// What a runner sees besides the task itself.
#[derive(Debug, Clone, Copy)]
pub struct AttemptContext<'a> {
    pub run_index: u32,
    pub attempt_index: u32,
    /// Plan or feedback carried over from an earlier iteration.
    pub plan: Option<&'a str>,
    /// Retry signals injected so far in this session. With a reset between
    /// attempts only the latest one is passed.
    pub messages: &'a [String],
    /// True when the runner must start from the initial state rather than
    /// continue the previous attempt's session.
    pub fresh_session: bool,
}

impl AttemptContext<'_> {
    pub fn has_feedback(&self) -> bool {
        self.plan.is_some() || !self.messages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerOutput {
    pub success: bool,
    pub trajectory_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct RunnerError(pub String);

/// Executes single attempts. The outcome comes from the runner's own
/// ground-truth evaluator.
///
/// Implementations must not carry state from one episode into the next;
/// everything an attempt may depend on arrives through the context and seed.
pub trait TaskRunner {
    fn attempt(&mut self, task: &Task, context: &AttemptContext<'_>, seed: u64) -> Result<RunnerOutput, RunnerError>;
}

/// Supplies targeted feedback after a failed attempt (the user side of the
/// clarify retry protocol).
pub trait FeedbackProvider {
    fn feedback(&mut self, task: &Task, last_attempt: &AttemptResult) -> Result<String, RunnerError>;
}

/// Turns rollouts into plan / feedback text for the next iteration.
pub trait FeedbackExtractor {
    fn extract(&mut self, request: &ExtractionRequest<'_>) -> Result<String, RunnerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptResult {
    pub attempt_index: u32,
    pub success: bool,
    pub trajectory_summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetryKind {
    None,
    RetryBinary,
    RetryClarify,
}

impl RetryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::RetryBinary => "retry-binary",
            Self::RetryClarify => "retry-clarify",
        }
    }
}

impl fmt::Display for RetryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryProtocol {
    kind: RetryKind,
    budget: u32,
    reset_between_attempts: bool,
}

impl RetryProtocol {
    pub fn new(kind: RetryKind, budget: u32) -> Result<Self, HarnessError> {
        if (budget == 0) != (kind == RetryKind::None) {
            return Err(HarnessError::InvalidProtocol { kind, budget });
        }
        Ok(Self {
            kind,
            budget,
            reset_between_attempts: false,
        })
    }

    pub fn none() -> Self {
        Self {
            kind: RetryKind::None,
            budget: 0,
            reset_between_attempts: false,
        }
    }

    pub fn binary(budget: u32) -> Result<Self, HarnessError> {
        Self::new(RetryKind::RetryBinary, budget)
    }

    pub fn clarify(budget: u32) -> Result<Self, HarnessError> {
        Self::new(RetryKind::RetryClarify, budget)
    }

    /// Restart each retry from the initial state instead of continuing the
    /// failed session. Only the latest signal is passed on.
    pub fn with_reset_between_attempts(mut self, reset: bool) -> Self {
        self.reset_between_attempts = reset;
        self
    }

    pub fn kind(&self) -> RetryKind {
        self.kind
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn resets_between_attempts(&self) -> bool {
        self.reset_between_attempts
    }
}

/// One scored run: the initial attempt plus any retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: TaskId,
    pub setting: SettingLabel,
    pub run_index: u32,
    pub attempts: Vec<AttemptResult>,
    pub feedback_injected: Vec<String>,
    pub final_success: bool,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl EpisodeRecord {
    /// Checks the episode shape: between 1 and `1 + budget` attempts, only the
    /// last may succeed, one injected message per retry and a final outcome
    /// equal to the last attempt's.
    pub fn check_shape(&self, budget: u32) -> Result<(), String> {
        let len = self.attempts.len();
        if len == 0 || len > 1 + budget as usize {
            return Err(format!("{len} attempts with budget {budget}"));
        }
        if self.attempts[..len - 1].iter().any(|a| a.success) {
            return Err("an attempt before the last succeeded".into());
        }
        if self.attempts.iter().enumerate().any(|(i, a)| a.attempt_index as usize != i) {
            return Err("attempt indices are not 0..len".into());
        }
        if self.feedback_injected.len() != len - 1 {
            return Err(format!("{} injected messages for {len} attempts", self.feedback_injected.len()));
        }
        if self.final_success != self.attempts[len - 1].success {
            return Err("final outcome differs from last attempt".into());
        }
        Ok(())
    }
}

/// Seed of one episode, a pure function of `(seed, task, run_index)`.
pub fn episode_seed(seed: u64, task: &TaskId, run_index: u32) -> u64 {
    rng::child(rng::child_str(seed, task.as_str()), run_index as u64)
}

/// Seed handed to the runner for one attempt of an episode.
pub fn attempt_seed(episode_seed: u64, attempt_index: u32) -> u64 {
    rng::child(episode_seed, attempt_index as u64)
}
