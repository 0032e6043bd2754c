//! Line-delimited JSON trace files.
//!
//! One record per line:
//!
//! ```text
//! {"task_id":"t1","setting_id":"base","run_index":0,"success":1}
//! {"task_id":"t1","setting_id":"base","run_index":1,"score":0.5,"meta":{"host":"vm3"}}
//! ```
//!
//! Parsing is best-effort: each malformed line becomes a [`ParseDiagnostic`]
//! and the rest of the file is still read. Fields other than the known ones
//! are kept in `meta`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::harness::EpisodeRecord;
use crate::outcome::{build_matrix, OutcomeError, OutcomeMatrix, RunOutcome, SettingLabel, TaskId};

/// Default score cutoff: only a perfect score counts as success.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

const KNOWN_FIELDS: [&str; 7] = ["task_id", "setting_id", "run_index", "success", "score", "attempts", "meta"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("failed reading traces: {0}")]
    Io(String),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("conflicting records for task '{task}', setting '{setting}', run {run_index}")]
    ConflictingDuplicate { task: TaskId, setting: String, run_index: u32 },
    #[error("setting '{0}' not found in traces")]
    UnknownSetting(String),
    #[error("setting '{setting}': {source}")]
    Matrix { setting: String, source: OutcomeError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    InvalidJson(String),
    NotObject,
    MissingField(&'static str),
    InvalidField { field: String, expected: &'static str },
    AmbiguousOutcome,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidJson(e) => write!(f, "invalid JSON: {e}"),
            Self::NotObject => f.write_str("record must be a JSON object"),
            Self::MissingField(field) => write!(f, "missing required field '{field}'"),
            Self::InvalidField { field, expected } => write!(f, "field '{field}' must be {expected}"),
            Self::AmbiguousOutcome => f.write_str("record carries both 'success' and 'score'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub kind: DiagnosticKind,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOutcome {
    Binary(bool),
    /// Evaluator score in `[0, 1]`, binarized later against a threshold.
    Score(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub attempt_index: u32,
    pub success: bool,
    /// Retry signal injected after this attempt, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub task_id: TaskId,
    pub setting_id: String,
    pub run_index: u32,
    pub outcome: TraceOutcome,
    pub attempts: Option<Vec<AttemptSummary>>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct TraceLineOut<'a> {
    task_id: &'a str,
    setting_id: &'a str,
    run_index: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attempts: Option<&'a [AttemptSummary]>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        let (success, score) = match self.outcome {
            TraceOutcome::Binary(b) => (Some(u8::from(b)), None),
            TraceOutcome::Score(s) => (None, Some(s)),
        };
        let out = TraceLineOut {
            task_id: self.task_id.as_str(),
            setting_id: &self.setting_id,
            run_index: self.run_index,
            success,
            score,
            attempts: self.attempts.as_deref(),
            meta: &self.meta,
        };
        serde_json::to_string(&out).expect("trace record serializes")
    }

    /// One record per episode; success is the episode's final outcome.
    pub fn from_episode(ep: &EpisodeRecord) -> Self {
        let attempts = ep
            .attempts
            .iter()
            .map(|a| AttemptSummary {
                attempt_index: a.attempt_index,
                success: a.success,
                feedback: ep.feedback_injected.get(a.attempt_index as usize).cloned(),
                trajectory: (!a.trajectory_summary.is_empty()).then(|| a.trajectory_summary.clone()),
            })
            .collect();
        let mut meta = ep.meta.clone();
        for (k, v) in &ep.setting.meta {
            meta.insert(format!("setting.{k}"), v.clone());
        }
        Self {
            task_id: ep.task.clone(),
            setting_id: ep.setting.name.clone(),
            run_index: ep.run_index,
            outcome: TraceOutcome::Binary(ep.final_success),
            attempts: Some(attempts),
            meta,
        }
    }
}

fn required_str(obj: &Map<String, Value>, field: &'static str) -> Result<String, DiagnosticKind> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(DiagnosticKind::MissingField(field)),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(_) => Err(DiagnosticKind::InvalidField {
            field: field.to_string(),
            expected: "a non-empty string",
        }),
    }
}

fn parse_object(obj: &Map<String, Value>) -> Result<TraceRecord, DiagnosticKind> {
    let task_id = TaskId::new(required_str(obj, "task_id")?).expect("checked non-empty");
    let setting_id = required_str(obj, "setting_id")?;
    let run_index = match obj.get("run_index") {
        None | Some(Value::Null) => return Err(DiagnosticKind::MissingField("run_index")),
        Some(v) => v.as_u64().and_then(|i| u32::try_from(i).ok()).ok_or(DiagnosticKind::InvalidField {
            field: "run_index".into(),
            expected: "a non-negative integer",
        })?,
    };

    let success = obj.get("success").filter(|v| !v.is_null());
    let score = obj.get("score").filter(|v| !v.is_null());
    let outcome = match (success, score) {
        (Some(_), Some(_)) => return Err(DiagnosticKind::AmbiguousOutcome),
        (None, None) => return Err(DiagnosticKind::MissingField("success")),
        (Some(v), None) => {
            let b = match v {
                Value::Bool(b) => Some(*b),
                Value::Number(n) => match n.as_u64() {
                    Some(0) => Some(false),
                    Some(1) => Some(true),
                    _ => None,
                },
                _ => None,
            };
            TraceOutcome::Binary(b.ok_or(DiagnosticKind::InvalidField {
                field: "success".into(),
                expected: "0 or 1",
            })?)
        }
        (None, Some(v)) => match v.as_f64() {
            Some(s) if (0.0..=1.0).contains(&s) => TraceOutcome::Score(s),
            _ => {
                return Err(DiagnosticKind::InvalidField {
                    field: "score".into(),
                    expected: "a number in [0, 1]",
                })
            }
        },
    };

    let attempts = match obj.get("attempts") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<Vec<AttemptSummary>>(v.clone()).map_err(|_| DiagnosticKind::InvalidField {
                field: "attempts".into(),
                expected: "a list of attempt summaries",
            })?,
        ),
    };

    let mut meta = BTreeMap::new();
    match obj.get("meta") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                meta.insert(k.clone(), value_text(v));
            }
        }
        Some(_) => {
            return Err(DiagnosticKind::InvalidField {
                field: "meta".into(),
                expected: "an object",
            })
        }
    }
    for (k, v) in obj {
        if !KNOWN_FIELDS.contains(&k.as_str()) {
            meta.entry(k.clone()).or_insert_with(|| value_text(v));
        }
    }

    Ok(TraceRecord {
        task_id,
        setting_id,
        run_index,
        outcome,
        attempts,
        meta,
    })
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses one non-empty line.
pub fn parse_line(line: &str) -> Result<TraceRecord, DiagnosticKind> {
    let value: Value = serde_json::from_str(line).map_err(|e| DiagnosticKind::InvalidJson(e.to_string()))?;
    match value {
        Value::Object(obj) => parse_object(&obj),
        _ => Err(DiagnosticKind::NotObject),
    }
}

/// Parses a whole trace text. Blank lines are skipped; every other line
/// yields exactly one record or one diagnostic.
pub fn parse_str(text: &str) -> (Vec<TraceRecord>, Vec<ParseDiagnostic>) {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => records.push(r),
            Err(kind) => diagnostics.push(ParseDiagnostic { line: i + 1, kind }),
        }
    }
    (records, diagnostics)
}

pub fn parse_records<R: BufRead>(mut reader: R) -> Result<(Vec<TraceRecord>, Vec<ParseDiagnostic>), IngestError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| IngestError::Io(e.to_string()))?;
    Ok(parse_str(&text))
}

pub fn write_records<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<(), IngestError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(IngestError::InvalidThreshold(threshold))
    }
}

/// Binarizes records: a score counts as success iff `score >= threshold`.
pub fn threshold_outcomes(records: &[TraceRecord], threshold: f64) -> Result<Vec<RunOutcome>, IngestError> {
    check_threshold(threshold)?;
    records
        .iter()
        .map(|r| {
            let success = match r.outcome {
                TraceOutcome::Binary(b) => b,
                TraceOutcome::Score(s) => s >= threshold,
            };
            Ok(RunOutcome {
                task: r.task_id.clone(),
                setting: SettingLabel::new(r.setting_id.clone()).expect("parsed non-empty"),
                run_index: r.run_index,
                success,
            })
        })
        .collect()
}

/// Drops exact repeats of `(task, setting, run_index)` with a warning each;
/// a repeat with different content is an error.
pub fn dedupe_records(records: Vec<TraceRecord>) -> Result<(Vec<TraceRecord>, Vec<String>), IngestError> {
    let mut seen: HashMap<(TaskId, String, u32), usize> = HashMap::new();
    let mut kept: Vec<TraceRecord> = Vec::with_capacity(records.len());
    let mut warnings = Vec::new();
    for r in records {
        let key = (r.task_id.clone(), r.setting_id.clone(), r.run_index);
        match seen.get(&key) {
            Some(&idx) if kept[idx] == r => warnings.push(format!(
                "duplicate record for task '{}', setting '{}', run {} ignored",
                r.task_id, r.setting_id, r.run_index
            )),
            Some(_) => {
                return Err(IngestError::ConflictingDuplicate {
                    task: r.task_id,
                    setting: r.setting_id,
                    run_index: r.run_index,
                })
            }
            None => {
                seen.insert(key, kept.len());
                kept.push(r);
            }
        }
    }
    Ok((kept, warnings))
}

/// Validated traces: one rectangular matrix per setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrices: BTreeMap<String, OutcomeMatrix>,
    pub warnings: Vec<String>,
    pub threshold: f64,
}

impl Dataset {
    pub fn from_records(records: Vec<TraceRecord>, threshold: f64) -> Result<Self, IngestError> {
        check_threshold(threshold)?;
        let (records, warnings) = dedupe_records(records)?;
        let outcomes = threshold_outcomes(&records, threshold)?;
        let mut by_setting: BTreeMap<String, Vec<RunOutcome>> = BTreeMap::new();
        for o in outcomes {
            by_setting.entry(o.setting.name.clone()).or_default().push(o);
        }
        let mut matrices = BTreeMap::new();
        for (name, outs) in by_setting {
            let label = SettingLabel::new(name.clone()).expect("parsed non-empty");
            let m = build_matrix(&outs, label).map_err(|source| IngestError::Matrix {
                setting: name.clone(),
                source,
            })?;
            matrices.insert(name, m);
        }
        Ok(Self {
            matrices,
            warnings,
            threshold,
        })
    }

    pub fn matrix(&self, setting: &str) -> Result<&OutcomeMatrix, IngestError> {
        self.matrices
            .get(setting)
            .ok_or_else(|| IngestError::UnknownSetting(setting.to_string()))
    }
}
