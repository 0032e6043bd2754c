//! Tasks, repeated-run outcomes and per-task consistency categories.
//!
//! An [`OutcomeMatrix`] holds, for one setting, the ordered binary outcomes of
//! `n` repeated runs of every task. Every metric and test in this crate is a
//! function of these matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OutcomeError {
    #[error("task id must be non-empty")]
    EmptyTaskId,
    #[error("setting name must be non-empty")]
    EmptySettingName,
    #[error("no records for setting")]
    EmptyDataset,
    #[error("record for setting '{found}' passed while building '{expected}'")]
    SettingMismatch { expected: String, found: String },
    #[error("task '{task}' has run_index {run_index} more than once")]
    DuplicateRun { task: TaskId, run_index: u32 },
    #[error("task '{task}' is missing run_index {run_index}; run indices must be 0..n-1")]
    MissingRun { task: TaskId, run_index: u32 },
    #[error("task '{task}' has {found} runs, expected {expected} like every other task")]
    RaggedRuns {
        task: TaskId,
        expected: usize,
        found: usize,
    },
    #[error("task '{0}' is not in the matrix")]
    UnknownTask(TaskId),
    #[error("task sets differ; only in base: {only_base:?}; only in new: {only_new:?}")]
    TaskSetMismatch {
        only_base: Vec<TaskId>,
        only_new: Vec<TaskId>,
    },
    #[error("run counts differ: base n={base}, new n={new}")]
    RunCountMismatch { base: usize, new: usize },
}

/// Opaque, non-empty task identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Result<Self, OutcomeError> {
        let id = id.into();
        if id.is_empty() {
            return Err(OutcomeError::EmptyTaskId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TaskId {
    type Error = OutcomeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TaskId> for String {
    fn from(value: TaskId) -> Self {
        value.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Name of an experimental setting plus opaque descriptors (for example the
/// perturbation set a run was executed under). Descriptors never affect
/// any computation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SettingLabel {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl SettingLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, OutcomeError> {
        let name = name.into();
        if name.is_empty() {
            return Err(OutcomeError::EmptySettingName);
        }
        Ok(Self {
            name,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// One binary run outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub task: TaskId,
    pub setting: SettingLabel,
    pub run_index: u32,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRuns {
    pub task: TaskId,
    outcomes: Vec<bool>,
}

impl TaskRuns {
    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn success_count(&self) -> usize {
        self.outcomes.iter().filter(|&&s| s).count()
    }

    pub fn category(&self) -> ReliabilityCategory {
        ReliabilityCategory::from_count(self.success_count(), self.outcomes.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityCategory {
    ConsistentlySolved,
    InconsistentlySolved,
    NeverSolved,
}

impl ReliabilityCategory {
    pub const ALL: [ReliabilityCategory; 3] = [
        ReliabilityCategory::ConsistentlySolved,
        ReliabilityCategory::InconsistentlySolved,
        ReliabilityCategory::NeverSolved,
    ];

    pub fn from_count(c: usize, n: usize) -> Self {
        debug_assert!(c <= n);
        if c == n {
            Self::ConsistentlySolved
        } else if c == 0 {
            Self::NeverSolved
        } else {
            Self::InconsistentlySolved
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConsistentlySolved => "consistently_solved",
            Self::InconsistentlySolved => "inconsistently_solved",
            Self::NeverSolved => "never_solved",
        }
    }
}

impl fmt::Display for ReliabilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rectangular task × run outcome table for one setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeMatrix {
    setting: SettingLabel,
    rows: BTreeMap<TaskId, TaskRuns>,
    n: usize,
}

impl OutcomeMatrix {
    /// Builds a matrix from explicit per-task outcome lists.
    pub fn from_rows<I>(setting: SettingLabel, rows: I) -> Result<Self, OutcomeError>
    where
        I: IntoIterator<Item = (TaskId, Vec<bool>)>,
    {
        let mut map = BTreeMap::new();
        for (task, outcomes) in rows {
            if map.contains_key(&task) {
                return Err(OutcomeError::DuplicateRun { task, run_index: 0 });
            }
            map.insert(task.clone(), TaskRuns { task, outcomes });
        }
        Self::from_map(setting, map)
    }

    /// Builds a matrix where task `i` has `counts[i]` successes followed by
    /// failures. Handy for fixtures: every metric depends on counts only.
    pub fn from_counts<I>(setting: SettingLabel, n: usize, counts: I) -> Result<Self, OutcomeError>
    where
        I: IntoIterator<Item = (TaskId, usize)>,
    {
        Self::from_rows(
            setting,
            counts.into_iter().map(|(task, c)| {
                let c = c.min(n);
                let outcomes = (0..n).map(|j| j < c).collect();
                (task, outcomes)
            }),
        )
    }

    fn from_map(setting: SettingLabel, rows: BTreeMap<TaskId, TaskRuns>) -> Result<Self, OutcomeError> {
        let mut iter = rows.values();
        let first = iter.next().ok_or(OutcomeError::EmptyDataset)?;
        let n = first.outcomes.len();
        if n == 0 {
            return Err(OutcomeError::MissingRun {
                task: first.task.clone(),
                run_index: 0,
            });
        }
        for row in iter {
            if row.outcomes.len() != n {
                return Err(OutcomeError::RaggedRuns {
                    task: row.task.clone(),
                    expected: n,
                    found: row.outcomes.len(),
                });
            }
        }
        Ok(Self { setting, rows, n })
    }

    pub fn setting(&self) -> &SettingLabel {
        &self.setting
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn task_count(&self) -> usize {
        self.rows.len()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.rows.keys()
    }

    pub fn rows(&self) -> impl Iterator<Item = &TaskRuns> {
        self.rows.values()
    }

    pub fn row(&self, task: &TaskId) -> Result<&TaskRuns, OutcomeError> {
        self.rows
            .get(task)
            .ok_or_else(|| OutcomeError::UnknownTask(task.clone()))
    }

    /// Success counts in canonical (lexicographic) task order.
    pub fn counts(&self) -> Vec<usize> {
        self.rows.values().map(TaskRuns::success_count).collect()
    }

    pub fn success_count(&self, task: &TaskId) -> Result<usize, OutcomeError> {
        self.row(task).map(TaskRuns::success_count)
    }

    pub fn categorize(&self, task: &TaskId) -> Result<ReliabilityCategory, OutcomeError> {
        self.row(task).map(TaskRuns::category)
    }

    pub fn category_counts(&self) -> BTreeMap<ReliabilityCategory, usize> {
        let mut counts: BTreeMap<_, _> = ReliabilityCategory::ALL.iter().map(|&c| (c, 0)).collect();
        for row in self.rows.values() {
            *counts.entry(row.category()).or_default() += 1;
        }
        counts
    }

    /// Flattens back into run outcomes, ordered by task then run index.
    pub fn to_run_outcomes(&self) -> Vec<RunOutcome> {
        self.rows
            .values()
            .flat_map(|row| {
                row.outcomes.iter().enumerate().map(|(j, &success)| RunOutcome {
                    task: row.task.clone(),
                    setting: self.setting.clone(),
                    run_index: j as u32,
                    success,
                })
            })
            .collect()
    }
}

/// Assembles run records of one setting into a rectangular matrix.
///
/// The result does not depend on record order: rows are keyed by task id and
/// ordered by run index, and errors are reported for the smallest offending
/// `(task, run_index)`.
pub fn build_matrix(records: &[RunOutcome], setting: SettingLabel) -> Result<OutcomeMatrix, OutcomeError> {
    if records.is_empty() {
        return Err(OutcomeError::EmptyDataset);
    }
    let mut sorted: Vec<&RunOutcome> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.task, a.run_index, a.success).cmp(&(&b.task, b.run_index, b.success)));

    let mut per_task: BTreeMap<TaskId, Vec<bool>> = BTreeMap::new();
    let mut last: Option<(&TaskId, u32)> = None;
    for rec in sorted {
        if rec.setting.name != setting.name {
            return Err(OutcomeError::SettingMismatch {
                expected: setting.name.clone(),
                found: rec.setting.name.clone(),
            });
        }
        if last == Some((&rec.task, rec.run_index)) {
            return Err(OutcomeError::DuplicateRun {
                task: rec.task.clone(),
                run_index: rec.run_index,
            });
        }
        last = Some((&rec.task, rec.run_index));
        let row = per_task.entry(rec.task.clone()).or_default();
        if rec.run_index as usize != row.len() {
            return Err(OutcomeError::MissingRun {
                task: rec.task.clone(),
                run_index: row.len() as u32,
            });
        }
        row.push(rec.success);
    }

    let rows = per_task
        .into_iter()
        .map(|(task, outcomes)| (task.clone(), TaskRuns { task, outcomes }))
        .collect();
    OutcomeMatrix::from_map(setting, rows)
}

/// Two matrices over the same tasks and run count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedMatrix {
    base: OutcomeMatrix,
    new: OutcomeMatrix,
    tasks: Vec<TaskId>,
}

impl PairedMatrix {
    pub fn base(&self) -> &OutcomeMatrix {
        &self.base
    }

    pub fn new_setting(&self) -> &OutcomeMatrix {
        &self.new
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn n(&self) -> usize {
        self.base.n
    }

    /// `(c_base, c_new)` per task in canonical order.
    pub fn count_pairs(&self) -> Vec<(usize, usize)> {
        self.base.counts().into_iter().zip(self.new.counts()).collect()
    }

    /// Same pairing with the roles of the two settings exchanged.
    pub fn swapped(&self) -> PairedMatrix {
        PairedMatrix {
            base: self.new.clone(),
            new: self.base.clone(),
            tasks: self.tasks.clone(),
        }
    }
}

pub fn align_paired(base: OutcomeMatrix, new: OutcomeMatrix) -> Result<PairedMatrix, OutcomeError> {
    let base_tasks: BTreeSet<&TaskId> = base.rows.keys().collect();
    let new_tasks: BTreeSet<&TaskId> = new.rows.keys().collect();
    if base_tasks != new_tasks {
        return Err(OutcomeError::TaskSetMismatch {
            only_base: base_tasks.difference(&new_tasks).map(|t| (*t).clone()).collect(),
            only_new: new_tasks.difference(&base_tasks).map(|t| (*t).clone()).collect(),
        });
    }
    if base.n != new.n {
        return Err(OutcomeError::RunCountMismatch {
            base: base.n,
            new: new.n,
        });
    }
    let tasks = base.rows.keys().cloned().collect();
    Ok(PairedMatrix { base, new, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tid(s: &str) -> TaskId {
        TaskId::new(s).unwrap()
    }

    fn label(s: &str) -> SettingLabel {
        SettingLabel::new(s).unwrap()
    }

    fn rec(task: &str, run_index: u32, success: bool) -> RunOutcome {
        RunOutcome {
            task: tid(task),
            setting: label("base"),
            run_index,
            success,
        }
    }

    #[test]
    fn builds_two_by_three() {
        let records = vec![
            rec("A", 0, true),
            rec("A", 1, false),
            rec("A", 2, true),
            rec("B", 2, false),
            rec("B", 0, false),
            rec("B", 1, true),
        ];
        let m = build_matrix(&records, label("base")).unwrap();
        assert_eq!(m.n(), 3);
        assert_eq!(m.task_count(), 2);
        assert_eq!(m.row(&tid("A")).unwrap().outcomes(), &[true, false, true]);
        assert_eq!(m.row(&tid("B")).unwrap().outcomes(), &[false, true, false]);
    }

    #[test]
    fn duplicate_run_index() {
        let records = vec![rec("A", 0, true), rec("A", 1, true), rec("A", 1, false)];
        assert_eq!(
            build_matrix(&records, label("base")),
            Err(OutcomeError::DuplicateRun {
                task: tid("A"),
                run_index: 1
            })
        );
    }

    #[test]
    fn ragged_runs() {
        let records = vec![
            rec("A", 0, true),
            rec("A", 1, true),
            rec("A", 2, true),
            rec("B", 0, true),
            rec("B", 1, true),
        ];
        assert!(matches!(
            build_matrix(&records, label("base")),
            Err(OutcomeError::RaggedRuns { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn gaps_and_empty_and_foreign_setting() {
        let gap = vec![rec("A", 0, true), rec("A", 2, true)];
        assert!(matches!(
            build_matrix(&gap, label("base")),
            Err(OutcomeError::MissingRun { run_index: 1, .. })
        ));
        assert_eq!(build_matrix(&[], label("base")), Err(OutcomeError::EmptyDataset));
        let foreign = vec![rec("A", 0, true)];
        assert!(matches!(
            build_matrix(&foreign, label("other")),
            Err(OutcomeError::SettingMismatch { .. })
        ));
    }

    #[test]
    fn success_counts_and_categories() {
        let m = OutcomeMatrix::from_rows(
            label("s"),
            vec![
                (tid("all"), vec![true, true, true]),
                (tid("none"), vec![false, false, false]),
                (tid("some"), vec![true, false, true]),
            ],
        )
        .unwrap();
        assert_eq!(m.success_count(&tid("all")).unwrap(), 3);
        assert_eq!(m.success_count(&tid("none")).unwrap(), 0);
        assert_eq!(m.success_count(&tid("some")).unwrap(), 2);
        assert_eq!(m.categorize(&tid("all")).unwrap(), ReliabilityCategory::ConsistentlySolved);
        assert_eq!(m.categorize(&tid("none")).unwrap(), ReliabilityCategory::NeverSolved);
        assert_eq!(m.categorize(&tid("some")).unwrap(), ReliabilityCategory::InconsistentlySolved);
        assert_eq!(m.success_count(&tid("x")), Err(OutcomeError::UnknownTask(tid("x"))));
        assert_eq!(m.categorize(&tid("x")), Err(OutcomeError::UnknownTask(tid("x"))));
    }

    #[test]
    fn empty_ids_rejected() {
        assert_eq!(TaskId::new(""), Err(OutcomeError::EmptyTaskId));
        assert_eq!(SettingLabel::new(""), Err(OutcomeError::EmptySettingName));
    }

    #[test]
    fn alignment() {
        let m = |name: &str, tasks: &[&str], n: usize| {
            OutcomeMatrix::from_counts(label(name), n, tasks.iter().map(|t| (tid(t), 1))).unwrap()
        };
        let p = align_paired(m("b", &["B", "A"], 3), m("n", &["A", "B"], 3)).unwrap();
        assert_eq!(p.tasks(), &[tid("A"), tid("B")]);

        assert_eq!(
            align_paired(m("b", &["A", "B"], 3), m("n", &["A", "C"], 3)),
            Err(OutcomeError::TaskSetMismatch {
                only_base: vec![tid("B")],
                only_new: vec![tid("C")]
            })
        );
        assert_eq!(
            align_paired(m("b", &["A"], 3), m("n", &["A"], 5)),
            Err(OutcomeError::RunCountMismatch { base: 3, new: 5 })
        );
    }

    fn arb_records() -> impl Strategy<Value = Vec<RunOutcome>> {
        (1usize..6, 1usize..8).prop_flat_map(|(tasks, n)| {
            proptest::collection::vec(any::<bool>(), tasks * n).prop_map(move |bits| {
                bits.iter()
                    .enumerate()
                    .map(|(i, &b)| rec(&format!("t{}", i / n), (i % n) as u32, b))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn order_independent(records in arb_records(), seed in any::<u64>()) {
            let base = build_matrix(&records, label("base")).unwrap();
            let mut shuffled = records.clone();
            // Fisher-Yates driven by a simple LCG so the permutation follows the seed.
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let other = build_matrix(&shuffled, label("base")).unwrap();
            prop_assert_eq!(&base, &other);
            prop_assert!(base.rows().all(|r| r.outcomes().len() == base.n()));
            let total: usize = base.category_counts().values().sum();
            prop_assert_eq!(total, base.task_count());
        }
    }
}
