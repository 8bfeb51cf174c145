//! Shared vocabulary: tasks, statuses and reports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::eval::{EvalResult, SubgoalSpec};
use crate::metadata::RunMetadata;
use crate::registry::{ConfigSnapshot, Traces};
use crate::Document;

/// Atomic evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub task_id: String,
    pub query: String,
    #[serde(default)]
    pub environment_data: Document,
    #[serde(default)]
    pub evaluation_criteria: EvaluationCriteria,
    #[serde(default)]
    pub protocol: ExecutionProtocol,
    #[serde(default)]
    pub metadata: TaskMetadata,
}

impl Task {
    pub fn new(task_id: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            query: query.into(),
            environment_data: Document::new(),
            evaluation_criteria: EvaluationCriteria::default(),
            protocol: ExecutionProtocol::default(),
            metadata: TaskMetadata::default(),
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.metadata.tags.contains(tag)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationCriteria {
    #[serde(default)]
    pub subgoals: Vec<SubgoalSpec>,
    #[serde(default)]
    pub expected_answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initiator {
    UserFirst,
    #[default]
    AgentFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionProtocol {
    #[serde(default)]
    pub initiator: Initiator,
    #[serde(default)]
    pub max_user_turns: u32,
    #[serde(default = "default_max_agent_steps")]
    pub max_agent_steps: u32,
}

fn default_max_agent_steps() -> u32 {
    20
}

impl Default for ExecutionProtocol {
    fn default() -> Self {
        Self {
            initiator: Initiator::AgentFirst,
            max_user_turns: 0,
            max_agent_steps: default_max_agent_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeoutAction {
    #[default]
    Skip,
    Retry,
    Extend,
}

/// 2PL item parameters attached to a task for adaptive scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMetadata {
    #[serde(default)]
    pub timeout_seconds: Option<f64>,
    #[serde(default)]
    pub timeout_action: TimeoutAction,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Defaults to `timeout_seconds` when absent.
    #[serde(default)]
    pub extension_seconds: Option<f64>,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub item_params: Option<ItemParams>,
}

fn default_max_retries() -> u32 {
    1
}

impl Default for TaskMetadata {
    fn default() -> Self {
        Self {
            timeout_seconds: None,
            timeout_action: TimeoutAction::Skip,
            max_retries: default_max_retries(),
            extension_seconds: None,
            priority: 0,
            tags: BTreeSet::new(),
            item_params: None,
        }
    }
}

impl TaskMetadata {
    pub fn effective_extension(&self) -> Option<f64> {
        self.extension_seconds.or(self.timeout_seconds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Success,
    AgentError,
    EnvironmentError,
    UserError,
    Timeout,
    Cancelled,
}

impl ExecutionStatus {
    pub const ALL: [ExecutionStatus; 6] = [
        ExecutionStatus::Success,
        ExecutionStatus::AgentError,
        ExecutionStatus::EnvironmentError,
        ExecutionStatus::UserError,
        ExecutionStatus::Timeout,
        ExecutionStatus::Cancelled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Success => "success",
            ExecutionStatus::AgentError => "agent_error",
            ExecutionStatus::EnvironmentError => "environment_error",
            ExecutionStatus::UserError => "user_error",
            ExecutionStatus::Timeout => "timeout",
            ExecutionStatus::Cancelled => "cancelled",
        }
    }

    pub fn is_scored(self) -> bool {
        status_is_scored(self)
    }

    pub fn is_infrastructure_failure(self) -> bool {
        matches!(
            self,
            ExecutionStatus::EnvironmentError | ExecutionStatus::UserError
        )
    }
}

impl fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a report with this status counts towards the system's score.
///
/// Timeouts are the system's fault under a fair budget; operator cancels and
/// infrastructure failures are not.
pub fn status_is_scored(status: ExecutionStatus) -> bool {
    matches!(
        status,
        ExecutionStatus::Success | ExecutionStatus::AgentError | ExecutionStatus::Timeout
    )
}

/// Structured result of one `(task, repeat)` execution. Serialized as one
/// JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub task_id: String,
    pub repeat_idx: u32,
    pub status: ExecutionStatus,
    pub traces: Traces,
    pub config_snapshot: ConfigSnapshot,
    pub run_metadata: RunMetadata,
    pub eval_results: BTreeMap<String, EvalResult>,
    pub wall_time_seconds: f64,
    pub error: Option<HarnessError>,
}

impl Report {
    /// Mean evaluator score, or `None` when nothing was evaluated.
    pub fn mean_score(&self) -> Option<f64> {
        if self.eval_results.is_empty() {
            return None;
        }
        let total: f64 = self.eval_results.values().map(|r| r.score).sum();
        Some(total / self.eval_results.len() as f64)
    }

    pub fn to_json_line(&self) -> Result<String, serde_json::Error> {
        let mut line = serde_json::to_string(self)?;
        line.push('\n');
        Ok(line)
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
    }
}

/// Reads every report from a JSONL file, skipping blank lines.
pub fn read_reports(path: &std::path::Path) -> Result<Vec<Report>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Report::from_json_line(l).map_err(|e| {
                HarnessError::config(format!("{}:{}: invalid report: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Checks a task against its invariants. `has_user` states whether the
/// benchmark will provide a user simulator for it.
pub fn validate_task(task: &Task, has_user: bool) -> Result<(), Vec<String>> {
    let mut violations = Vec::new();
    if task.task_id.is_empty() {
        violations.push("task_id must be non-empty".to_string());
    }
    if task.protocol.max_agent_steps < 1 {
        violations.push("max_agent_steps must be ≥ 1".to_string());
    }
    let needs_user =
        task.protocol.initiator == Initiator::UserFirst || task.protocol.max_user_turns > 0;
    if needs_user && !has_user {
        violations.push("user simulator required".to_string());
    }

    let meta = &task.metadata;
    if let Some(t) = meta.timeout_seconds {
        if !(t >= 0.0) || !t.is_finite() {
            violations.push("timeout_seconds must be a finite non-negative number".to_string());
        }
    }
    match meta.timeout_action {
        TimeoutAction::Retry if meta.max_retries < 1 => {
            violations.push("max_retries must be ≥ 1 when timeout_action is retry".to_string())
        }
        TimeoutAction::Extend if !meta.effective_extension().is_some_and(|e| e > 0.0) => violations
            .push("extension_seconds must be > 0 when timeout_action is extend".to_string()),
        _ => {}
    }
    if let Some(ext) = meta.extension_seconds {
        if !(ext > 0.0) {
            violations.push("extension_seconds must be > 0".to_string());
        }
    }
    if let Some(p) = meta.item_params {
        if !(p.a > 0.0) || !p.b.is_finite() {
            violations.push("item_params require a > 0 and finite b".to_string());
        }
    }

    let mut seen = HashSet::new();
    for goal in &task.evaluation_criteria.subgoals {
        if !seen.insert(goal.id.as_str()) {
            violations.push(format!("duplicate subgoal id {:?}", goal.id));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Validates a whole task list, including id uniqueness. Violations are
/// prefixed with the offending task id.
pub fn validate_tasks(
    tasks: &[Task],
    has_user: impl Fn(&Task) -> bool,
) -> Result<(), HarnessError> {
    let mut problems = Vec::new();
    let mut ids = HashSet::new();
    for task in tasks {
        if !ids.insert(task.task_id.as_str()) {
            problems.push(format!("{}: duplicate task_id", task.task_id));
        }
        if let Err(v) = validate_task(task, has_user(task)) {
            problems.extend(v.into_iter().map(|m| format!("{}: {m}", task.task_id)));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::config(format!(
            "task validation failed: {}",
            problems.join("; ")
        )))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Deterministic per-execution seed: FNV-1a 64 over
/// `"<master_seed>|<task_id>|<repeat_idx>"`.
pub fn derive_task_seed(master_seed: u64, task_id: &str, repeat_idx: u32) -> u64 {
    fnv1a64(format!("{master_seed}|{task_id}|{repeat_idx}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-at-a-time FNV-1a written from the published constants, kept
    /// separate from the implementation under test.
    fn reference_fnv1a64(data: &str) -> u64 {
        let mut hash: u64 = 14695981039346656037;
        for byte in data.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(1099511628211);
        }
        hash
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn seed_matches_reference_digest() {
        assert_eq!(derive_task_seed(0, "t1", 0), reference_fnv1a64("0|t1|0"));
        assert_eq!(derive_task_seed(0, "t1", 0), derive_task_seed(0, "t1", 0));
        assert_ne!(derive_task_seed(0, "t1", 0), derive_task_seed(0, "t1", 1));
        assert_eq!(
            derive_task_seed(18446744073709551615, "x|y", 7),
            reference_fnv1a64("18446744073709551615|x|y|7")
        );
    }

    #[test]
    fn seed_injective_over_repeats() {
        for task in ["t1", "desk-01-sum", ""] {
            for master in [0u64, 1, 42, u64::MAX] {
                let seeds: HashSet<u64> =
                    (0..1000).map(|r| derive_task_seed(master, task, r)).collect();
                assert_eq!(seeds.len(), 1000);
            }
        }
    }

    #[test]
    fn scored_partition() {
        let scored: Vec<_> = ExecutionStatus::ALL
            .iter()
            .filter(|s| status_is_scored(**s))
            .collect();
        assert_eq!(
            scored,
            [
                &ExecutionStatus::Success,
                &ExecutionStatus::AgentError,
                &ExecutionStatus::Timeout
            ]
        );
        assert!(!status_is_scored(ExecutionStatus::EnvironmentError));
        assert!(!status_is_scored(ExecutionStatus::UserError));
        assert!(!status_is_scored(ExecutionStatus::Cancelled));
    }

    #[test]
    fn status_serializes_lowercase() {
        for s in ExecutionStatus::ALL {
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
    }

    #[test]
    fn validation_rules() {
        let mut task = Task::new("t", "q");
        assert_eq!(validate_task(&task, false), Ok(()));

        task.protocol.max_agent_steps = 0;
        let v = validate_task(&task, false).unwrap_err();
        assert_eq!(v, vec!["max_agent_steps must be ≥ 1".to_string()]);

        let mut task = Task::new("t", "q");
        task.protocol.initiator = Initiator::UserFirst;
        assert_eq!(
            validate_task(&task, false).unwrap_err(),
            vec!["user simulator required".to_string()]
        );
        assert_eq!(validate_task(&task, true), Ok(()));

        let mut task = Task::new("", "q");
        task.metadata.timeout_action = TimeoutAction::Retry;
        task.metadata.max_retries = 0;
        assert_eq!(validate_task(&task, false).unwrap_err().len(), 2);

        let mut task = Task::new("t", "q");
        task.metadata.timeout_action = TimeoutAction::Extend;
        assert!(validate_task(&task, false).is_err());
        task.metadata.timeout_seconds = Some(1.0);
        assert_eq!(validate_task(&task, false), Ok(()));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let tasks = vec![Task::new("a", "q"), Task::new("a", "q")];
        let err = validate_tasks(&tasks, |_| false).unwrap_err();
        assert!(err.message.contains("duplicate task_id"));
    }

    #[test]
    fn task_defaults_from_minimal_json() {
        let task: Task = serde_json::from_str(r#"{"task_id":"t","query":"q"}"#).unwrap();
        assert_eq!(task.metadata.max_retries, 1);
        assert_eq!(task.protocol.initiator, Initiator::AgentFirst);
        assert!(serde_json::from_str::<Task>(r#"{"task_id":"t","query":"q","qurey":1}"#).is_err());
    }
}
