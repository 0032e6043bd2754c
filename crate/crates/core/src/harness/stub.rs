//! Deterministic stand-ins for runners, feedback providers and extractors.
//!
//! Every stub is a pure function of its inputs and the seed it is handed, so
//! whole suites replay bit for bit. Runner specs have the textual form
//! `kind[:key=value,...]`:
//!
//! ```text
//! always
//! never
//! bernoulli:p=0.5
//! uplift:p0=0.3,p1=0.6
//! spread:lo=0.1,hi=0.9,uplift=0.2
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{
    AttemptContext, AttemptResult, ExtractionRequest, FeedbackExtractor, FeedbackProvider, RunnerError, RunnerOutput,
    Task, TaskRunner,
};
use crate::rng;

/// Succeeds with a fixed probability, ignoring any feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliRunner {
    pub p: f64,
}

impl BernoulliRunner {
    pub fn new(p: f64) -> Self {
        Self { p }
    }
}

impl TaskRunner for BernoulliRunner {
    fn attempt(&mut self, task: &Task, ctx: &AttemptContext<'_>, seed: u64) -> Result<RunnerOutput, RunnerError> {
        let success = rng::bernoulli(seed, self.p);
        Ok(RunnerOutput {
            success,
            trajectory_summary: format!("{}#{}.{}:{}", task.id, ctx.run_index, ctx.attempt_index, u8::from(success)),
        })
    }
}

/// Succeeds with `p0` when it has no feedback and `p1` once any retry signal
/// or plan is in its context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpliftRunner {
    pub p0: f64,
    pub p1: f64,
}

impl TaskRunner for UpliftRunner {
    fn attempt(&mut self, task: &Task, ctx: &AttemptContext<'_>, seed: u64) -> Result<RunnerOutput, RunnerError> {
        let p = if ctx.has_feedback() { self.p1 } else { self.p0 };
        let success = rng::bernoulli(seed, p);
        Ok(RunnerOutput {
            success,
            trajectory_summary: format!("{}#{}.{}:{}", task.id, ctx.run_index, ctx.attempt_index, u8::from(success)),
        })
    }
}

/// Per-task success probability drawn uniformly from `[lo, hi]` by hashing
/// the task id, plus `uplift` (capped at 1) when feedback is present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadRunner {
    pub lo: f64,
    pub hi: f64,
    pub uplift: f64,
}

impl SpreadRunner {
    pub fn task_probability(&self, task: &Task) -> f64 {
        let u = rng::unit_f64(rng::fnv1a(task.id.as_str().as_bytes()));
        self.lo + (self.hi - self.lo) * u
    }
}

impl TaskRunner for SpreadRunner {
    fn attempt(&mut self, task: &Task, ctx: &AttemptContext<'_>, seed: u64) -> Result<RunnerOutput, RunnerError> {
        let mut p = self.task_probability(task);
        if ctx.has_feedback() {
            p = (p + self.uplift).min(1.0);
        }
        let success = rng::bernoulli(seed, p);
        Ok(RunnerOutput {
            success,
            trajectory_summary: format!("{}#{}.{}:{}", task.id, ctx.run_index, ctx.attempt_index, u8::from(success)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunnerSpecError {
    #[error("empty runner spec")]
    Empty,
    #[error("unknown runner kind '{0}'")]
    UnknownKind(String),
    #[error("malformed parameter '{0}', expected key=value")]
    MalformedParam(String),
    #[error("runner '{kind}' does not take parameter '{key}'")]
    UnknownParam { kind: String, key: String },
    #[error("parameter '{key}' given twice")]
    DuplicateParam { key: String },
    #[error("runner '{kind}' needs parameter '{key}'")]
    MissingParam { kind: String, key: String },
    #[error("parameter '{key}'={value} must be a probability in [0, 1]")]
    BadProbability { key: String, value: String },
    #[error("spread runner needs lo <= hi")]
    InvertedRange,
}

/// Parsed form of a `--runner` argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunnerSpec {
    Always,
    Never,
    Bernoulli { p: f64 },
    Uplift { p0: f64, p1: f64 },
    Spread { lo: f64, hi: f64, uplift: f64 },
}

impl RunnerSpec {
    pub fn build(&self) -> Box<dyn TaskRunner> {
        match *self {
            Self::Always => Box::new(BernoulliRunner::new(1.0)),
            Self::Never => Box::new(BernoulliRunner::new(0.0)),
            Self::Bernoulli { p } => Box::new(BernoulliRunner::new(p)),
            Self::Uplift { p0, p1 } => Box::new(UpliftRunner { p0, p1 }),
            Self::Spread { lo, hi, uplift } => Box::new(SpreadRunner { lo, hi, uplift }),
        }
    }
}

fn parse_probability(key: &str, value: &str) -> Result<f64, RunnerSpecError> {
    match value.trim().parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(RunnerSpecError::BadProbability {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

impl FromStr for RunnerSpec {
    type Err = RunnerSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(RunnerSpecError::Empty);
        }
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => (s, ""),
        };
        let allowed: &[&str] = match kind {
            "always" | "never" => &[],
            "bernoulli" => &["p"],
            "uplift" => &["p0", "p1"],
            "spread" => &["lo", "hi", "uplift"],
            other => return Err(RunnerSpecError::UnknownKind(other.to_string())),
        };

        let mut params: Vec<(&str, f64)> = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| RunnerSpecError::MalformedParam(part.to_string()))?;
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(RunnerSpecError::UnknownParam {
                    kind: kind.to_string(),
                    key: key.to_string(),
                });
            }
            if params.iter().any(|(k, _)| *k == key) {
                return Err(RunnerSpecError::DuplicateParam { key: key.to_string() });
            }
            params.push((key, parse_probability(key, value)?));
        }
        let get = |key: &str| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let need = |key: &str| {
            get(key).ok_or_else(|| RunnerSpecError::MissingParam {
                kind: kind.to_string(),
                key: key.to_string(),
            })
        };

        Ok(match kind {
            "always" => Self::Always,
            "never" => Self::Never,
            "bernoulli" => Self::Bernoulli { p: need("p")? },
            "uplift" => Self::Uplift {
                p0: need("p0")?,
                p1: need("p1")?,
            },
            "spread" => {
                let (lo, hi) = (need("lo")?, need("hi")?);
                if lo > hi {
                    return Err(RunnerSpecError::InvertedRange);
                }
                Self::Spread {
                    lo,
                    hi,
                    uplift: get("uplift").unwrap_or(0.0),
                }
            }
            _ => unreachable!("kind checked above"),
        })
    }
}

impl fmt::Display for RunnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Always => f.write_str("always"),
            Self::Never => f.write_str("never"),
            Self::Bernoulli { p } => write!(f, "bernoulli:p={p}"),
            Self::Uplift { p0, p1 } => write!(f, "uplift:p0={p0},p1={p1}"),
            Self::Spread { lo, hi, uplift } => write!(f, "spread:lo={lo},hi={hi},uplift={uplift}"),
        }
    }
}

/// Clarification stub: names the task and the failed attempt.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateFeedbackProvider;

impl FeedbackProvider for TemplateFeedbackProvider {
    fn feedback(&mut self, task: &Task, last_attempt: &AttemptResult) -> Result<String, RunnerError> {
        Ok(format!(
            "Attempt {} of task {} did not meet the success criteria: {}",
            last_attempt.attempt_index, task.id, task.instruction
        ))
    }
}

/// Emits `plan-v1` on first extraction and `plan-v{k+1}` when refining
/// `plan-v{k}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VersionedPlanExtractor;

impl FeedbackExtractor for VersionedPlanExtractor {
    fn extract(&mut self, request: &ExtractionRequest<'_>) -> Result<String, RunnerError> {
        let version = request
            .previous_feedback
            .and_then(|p| p.strip_prefix("plan-v"))
            .and_then(|v| v.parse::<u32>().ok())
            .unwrap_or(0);
        Ok(format!("plan-v{}", version + 1))
    }
}

/// Returns a pre-sampled plan unchanged. Running plan iterations with this
/// extractor pins every run to one strategy.
#[derive(Debug, Clone, Default)]
pub struct FixedPlanExtractor(pub String);

impl FeedbackExtractor for FixedPlanExtractor {
    fn extract(&mut self, _request: &ExtractionRequest<'_>) -> Result<String, RunnerError> {
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_every_kind() {
        assert_eq!("always".parse::<RunnerSpec>().unwrap(), RunnerSpec::Always);
        assert_eq!(" never ".parse::<RunnerSpec>().unwrap(), RunnerSpec::Never);
        assert_eq!("bernoulli:p=0.5".parse::<RunnerSpec>().unwrap(), RunnerSpec::Bernoulli { p: 0.5 });
        assert_eq!(
            "uplift:p1=0.6, p0=0.3".parse::<RunnerSpec>().unwrap(),
            RunnerSpec::Uplift { p0: 0.3, p1: 0.6 }
        );
        assert_eq!(
            "spread:lo=0.1,hi=0.9".parse::<RunnerSpec>().unwrap(),
            RunnerSpec::Spread {
                lo: 0.1,
                hi: 0.9,
                uplift: 0.0
            }
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!("".parse::<RunnerSpec>(), Err(RunnerSpecError::Empty));
        assert!(matches!("coin".parse::<RunnerSpec>(), Err(RunnerSpecError::UnknownKind(_))));
        assert!(matches!("bernoulli".parse::<RunnerSpec>(), Err(RunnerSpecError::MissingParam { .. })));
        assert!(matches!("bernoulli:p".parse::<RunnerSpec>(), Err(RunnerSpecError::MalformedParam(_))));
        assert!(matches!("bernoulli:p=2".parse::<RunnerSpec>(), Err(RunnerSpecError::BadProbability { .. })));
        assert!(matches!("bernoulli:p=NaN".parse::<RunnerSpec>(), Err(RunnerSpecError::BadProbability { .. })));
        assert!(matches!("bernoulli:q=0.1".parse::<RunnerSpec>(), Err(RunnerSpecError::UnknownParam { .. })));
        assert!(matches!(
            "bernoulli:p=0.1,p=0.2".parse::<RunnerSpec>(),
            Err(RunnerSpecError::DuplicateParam { .. })
        ));
        assert_eq!("spread:lo=0.9,hi=0.1".parse::<RunnerSpec>(), Err(RunnerSpecError::InvertedRange));
    }

    proptest! {
        #[test]
        fn display_round_trips(p0 in 0.0f64..=1.0, p1 in 0.0f64..=1.0, which in 0u8..5) {
            let spec = match which {
                0 => RunnerSpec::Always,
                1 => RunnerSpec::Never,
                2 => RunnerSpec::Bernoulli { p: p0 },
                3 => RunnerSpec::Uplift { p0, p1 },
                _ => RunnerSpec::Spread { lo: p0.min(p1), hi: p0.max(p1), uplift: p1 },
            };
            prop_assert_eq!(spec.to_string().parse::<RunnerSpec>().unwrap(), spec);
        }

        #[test]
        fn never_panics(s in ".{0,40}") {
            let _ = s.parse::<RunnerSpec>();
        }
    }
}
