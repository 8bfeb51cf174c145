//! Two-stage evaluation: select trace events, then compute a metric over
//! the selection plus declared task fields.

pub mod stats;

use std::collections::BTreeMap;

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::Usage;
use crate::environment::ToolStatus;
use crate::error::HarnessError;
use crate::model::{ExecutionStatus, Report, Task};
use crate::registry::{ComponentId, ComponentKind, TraceRecord, Traces};
use crate::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgoalSpec {
    pub id: String,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// A tool was executed with arguments that include `args`. Calls the
    /// environment rejected (unknown tool, bad arguments) do not count.
    ToolCalled {
        name: String,
        #[serde(default)]
        args: Document,
    },
    StateEquals { key: String, value: String },
    FinalAnswerMatches {
        pattern: String,
        #[serde(default)]
        trim: bool,
        #[serde(default)]
        casefold: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalResult {
    /// In `[0, 1]`.
    pub score: f64,
    #[serde(default)]
    pub details: Document,
}

/// A selected event together with the component that emitted it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedEvent<'a> {
    pub component: &'a ComponentId,
    pub record: &'a TraceRecord,
}

type EventPredicate = Box<dyn Fn(&ComponentId, &TraceRecord) -> bool + Send + Sync>;

/// Which events an evaluator sees. Empty kind lists match everything.
#[derive(Default)]
pub struct TraceSelector {
    pub component_kinds: Vec<ComponentKind>,
    pub event_kinds: Vec<String>,
    pub predicate: Option<EventPredicate>,
}

impl TraceSelector {
    pub fn events(kinds: &[&str]) -> Self {
        Self {
            event_kinds: kinds.iter().map(|k| k.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn components(mut self, kinds: &[ComponentKind]) -> Self {
        self.component_kinds = kinds.to_vec();
        self
    }

    pub fn with_predicate(
        mut self,
        predicate: impl Fn(&ComponentId, &TraceRecord) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.predicate = Some(Box::new(predicate));
        self
    }

    fn matches(&self, component: &ComponentId, record: &TraceRecord) -> bool {
        (self.component_kinds.is_empty() || self.component_kinds.contains(&component.kind))
            && (self.event_kinds.is_empty() || self.event_kinds.contains(&record.event_kind))
            && self.predicate.as_ref().is_none_or(|p| p(component, record))
    }
}

/// Events matching `selector`, in global `seq` order.
pub fn filter_traces<'a>(traces: &'a Traces, selector: &TraceSelector) -> Vec<SelectedEvent<'a>> {
    let mut out: Vec<SelectedEvent<'a>> = traces
        .iter()
        .flat_map(|(component, records)| {
            records
                .iter()
                .filter(|r| selector.matches(component, r))
                .map(move |record| SelectedEvent { component, record })
        })
        .collect();
    out.sort_by_key(|e| e.record.seq);
    out
}

/// Declared task fields and end state available to the compute stage.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub task: &'a Task,
    pub final_state: &'a Document,
    pub final_answer: Option<&'a str>,
}

pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;

    fn selector(&self) -> TraceSelector;

    fn compute(&self, events: &[SelectedEvent<'_>], inputs: &EvalInputs<'_>) -> EvalResult;

    fn config(&self) -> Document {
        Document::new()
    }
}

/// Runs one evaluator against a trace.
pub fn run_evaluator(evaluator: &dyn Evaluator, traces: &Traces, inputs: &EvalInputs<'_>) -> EvalResult {
    let selector = evaluator.selector();
    let events = filter_traces(traces, &selector);
    evaluator.compute(&events, inputs)
}

fn tool_invocations() -> TraceSelector {
    TraceSelector::events(&["tool_invocation"])
        .components(&[ComponentKind::Tool])
        .with_predicate(|_, r| !r.payload.contains_key("error_kind"))
}

fn check_tool_called(events: &[SelectedEvent<'_>], name: &str, args: &Document) -> (bool, Vec<u64>) {
    let seqs: Vec<u64> = events
        .iter()
        .filter(|e| {
            let p = &e.record.payload;
            p.get("tool").and_then(Value::as_str) == Some(name)
                && args.iter().all(|(k, v)| p.get("args").and_then(|a| a.get(k)) == Some(v))
        })
        .map(|e| e.record.seq)
        .collect();
    (!seqs.is_empty(), seqs)
}

fn normalize(text: &str, trim: bool) -> &str {
    if trim {
        text.trim()
    } else {
        text
    }
}

fn check_subgoal(goal: &SubgoalSpec, events: &[SelectedEvent<'_>], inputs: &EvalInputs<'_>) -> Value {
    match &goal.predicate {
        Predicate::ToolCalled { name, args } => {
            let (met, seqs) = check_tool_called(events, name, args);
            json!({"met": met, "matched_seqs": seqs})
        }
        Predicate::StateEquals { key, value } => {
            let actual = inputs.final_state.get(key).cloned().unwrap_or(Value::Null);
            json!({"met": actual.as_str() == Some(value.as_str()), "actual": actual})
        }
        Predicate::FinalAnswerMatches {
            pattern,
            trim,
            casefold,
        } => {
            let Some(answer) = inputs.final_answer else {
                return json!({"met": false, "reason": "no final answer"});
            };
            match RegexBuilder::new(pattern).case_insensitive(*casefold).build() {
                Ok(re) => json!({"met": re.is_match(normalize(answer, *trim))}),
                Err(e) => json!({"met": false, "reason": format!("invalid pattern: {e}")}),
            }
        }
    }
}

fn pgsr_over(subgoals: &[SubgoalSpec], events: &[SelectedEvent<'_>], inputs: &EvalInputs<'_>) -> EvalResult {
    let mut verdicts = Document::new();
    let mut met = 0usize;
    for goal in subgoals {
        let verdict = check_subgoal(goal, events, inputs);
        if verdict["met"] == json!(true) {
            met += 1;
        }
        verdicts.insert(goal.id.clone(), verdict);
    }
    let mut details = Document::new();
    details.insert("met".into(), json!(met));
    details.insert("total".into(), json!(subgoals.len()));
    details.insert("subgoals".into(), Value::Object(verdicts));
    let score = if subgoals.is_empty() {
        details.insert("reason".into(), json!("no subgoals"));
        0.0
    } else {
        met as f64 / subgoals.len() as f64
    };
    EvalResult { score, details }
}

/// Partial goal success: the fraction of subgoals satisfied by the trace,
/// the final state and the final answer.
pub fn evaluate_pgsr(
    subgoals: &[SubgoalSpec],
    traces: &Traces,
    final_state: &Document,
    final_answer: Option<&str>,
) -> EvalResult {
    let task = Task::new("", "");
    let inputs = EvalInputs {
        task: &task,
        final_state,
        final_answer,
    };
    let events = filter_traces(traces, &tool_invocations());
    pgsr_over(subgoals, &events, &inputs)
}

/// 1.0 iff the normalized strings are equal.
pub fn evaluate_exact_match(expected: &str, final_answer: &str, trim: bool, casefold: bool) -> EvalResult {
    let norm = |s: &str| {
        let s = normalize(s, trim);
        if casefold {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    };
    let equal = norm(expected) == norm(final_answer);
    let mut details = Document::new();
    details.insert("expected".into(), json!(expected));
    details.insert("answer".into(), json!(final_answer));
    EvalResult {
        score: if equal { 1.0 } else { 0.0 },
        details,
    }
}

#[derive(Debug, Clone, Default)]
pub struct PgsrEvaluator;

impl Evaluator for PgsrEvaluator {
    fn name(&self) -> &str {
        "pgsr"
    }

    fn selector(&self) -> TraceSelector {
        tool_invocations()
    }

    fn compute(&self, events: &[SelectedEvent<'_>], inputs: &EvalInputs<'_>) -> EvalResult {
        pgsr_over(&inputs.task.evaluation_criteria.subgoals, events, inputs)
    }
}

/// Compares the final answer with the task's expected answer. Tasks
/// without one score 1.0 only on an empty answer.
#[derive(Debug, Clone)]
pub struct ExactMatchEvaluator {
    pub trim: bool,
    pub casefold: bool,
}

impl Default for ExactMatchEvaluator {
    fn default() -> Self {
        Self {
            trim: true,
            casefold: true,
        }
    }
}

impl Evaluator for ExactMatchEvaluator {
    fn name(&self) -> &str {
        "exact_match"
    }

    fn selector(&self) -> TraceSelector {
        TraceSelector::events(&[]).with_predicate(|_, _| false)
    }

    fn compute(&self, _events: &[SelectedEvent<'_>], inputs: &EvalInputs<'_>) -> EvalResult {
        let expected = inputs
            .task
            .evaluation_criteria
            .expected_answer
            .as_deref()
            .unwrap_or_default();
        evaluate_exact_match(
            expected,
            inputs.final_answer.unwrap_or_default(),
            self.trim,
            self.casefold,
        )
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("trim".into(), json!(self.trim));
        doc.insert("casefold".into(), json!(self.casefold));
        doc
    }
}

/// Per-task summary across repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatAggregate {
    pub task_id: String,
    /// Mean score per evaluator over scored reports; empty when `no_data`.
    pub means: BTreeMap<String, f64>,
    pub scored: usize,
    pub infrastructure_failures: usize,
    pub cancelled: usize,
    pub no_data: bool,
}

/// Token usage summed over every `model_call` event.
pub fn trace_usage(traces: &Traces) -> Usage {
    let mut total = Usage::default();
    for record in traces.values().flatten().filter(|r| r.event_kind == "model_call") {
        if let Some(usage) = record.payload.get("usage").and_then(|u| Usage::deserialize(u).ok()) {
            total += usage;
        }
    }
    total
}

/// Aggregates the reports of one task. Only scored reports enter the
/// denominators; infrastructure failures are counted separately.
pub fn aggregate_repeats(reports: &[Report]) -> Result<RepeatAggregate, HarnessError> {
    let task_id = reports.first().map(|r| r.task_id.clone()).unwrap_or_default();
    if let Some(other) = reports.iter().find(|r| r.task_id != task_id) {
        return Err(HarnessError::config(format!(
            "cannot aggregate reports of {task_id:?} and {:?}",
            other.task_id
        )));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut scored = 0;
    for report in reports.iter().filter(|r| r.status.is_scored()) {
        scored += 1;
        for (name, result) in &report.eval_results {
            let entry = sums.entry(name.clone()).or_default();
            entry.0 += result.score;
            entry.1 += 1;
        }
    }
    Ok(RepeatAggregate {
        task_id,
        means: sums
            .into_iter()
            .map(|(name, (sum, n))| (name, sum / n as f64))
            .collect(),
        scored,
        infrastructure_failures: reports
            .iter()
            .filter(|r| r.status.is_infrastructure_failure())
            .count(),
        cancelled: reports
            .iter()
            .filter(|r| r.status == ExecutionStatus::Cancelled)
            .count(),
        no_data: scored == 0,
    })
}

/// Whether a tool invocation payload reports success.
pub fn invocation_ok(payload: &Document) -> bool {
    payload.get("status") == Some(&json!(ToolStatus::Ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ComponentRegistry;

    fn payload(v: Value) -> Document {
        v.as_object().cloned().unwrap()
    }

    fn fixture() -> Traces {
        let reg = ComponentRegistry::new("t", 0);
        let agent = reg.register(ComponentKind::Agent, "a", Document::new());
        let add = reg.register(ComponentKind::Tool, "add", Document::new());
        let set = reg.register(ComponentKind::Tool, "set", Document::new());
        let inv = |tool: &str, args: Value| {
            payload(json!({"tool": tool, "args": args, "result": "", "status": "ok", "call_id": "c"}))
        };
        reg.emit(&agent, "message", payload(json!({"index": 0}))).unwrap();
        reg.emit(&add, "tool_invocation", inv("add", json!({"a": 1, "b": 2}))).unwrap();
        reg.emit(&set, "tool_invocation", inv("set", json!({"key": "x", "value": "9"}))).unwrap();
        reg.emit(&add, "tool_invocation", inv("add", json!({"a": 5, "b": 5}))).unwrap();
        reg.emit(&agent, "message", payload(json!({"index": 1}))).unwrap();
        reg.collect().traces
    }

    #[test]
    fn usage_sums_model_calls_only() {
        let reg = ComponentRegistry::new("t", 0);
        let model = reg.register(ComponentKind::Model, "m", Document::new());
        let usage = |i: u64, o: u64| payload(json!({"usage": {"input_tokens": i, "output_tokens": o}}));
        reg.emit(&model, "model_call", usage(3, 4)).unwrap();
        reg.emit(&model, "model_error", usage(100, 100)).unwrap();
        reg.emit(&model, "model_call", usage(1, 2)).unwrap();
        let total = trace_usage(&reg.collect().traces);
        assert_eq!((total.input_tokens, total.output_tokens), (4, 6));
        assert_eq!(trace_usage(&fixture()), Usage::default());
    }

    #[test]
    fn filter_by_kind_and_predicate() {
        let traces = fixture();
        assert_eq!(filter_traces(&traces, &TraceSelector::events(&["tool_invocation"])).len(), 3);
        assert!(filter_traces(&Traces::new(), &TraceSelector::default()).is_empty());

        let adds = TraceSelector::events(&["tool_invocation"])
            .with_predicate(|_, r| r.payload["tool"] == "add");
        let picked = filter_traces(&traces, &adds);
        // brute-force oracle: walk every event in seq order
        let mut all: Vec<(&ComponentId, &TraceRecord)> =
            traces.iter().flat_map(|(c, rs)| rs.iter().map(move |r| (c, r))).collect();
        all.sort_by_key(|(_, r)| r.seq);
        let expected: Vec<u64> = all
            .iter()
            .filter(|(_, r)| r.event_kind == "tool_invocation" && r.payload["tool"] == "add")
            .map(|(_, r)| r.seq)
            .collect();
        assert_eq!(picked.iter().map(|e| e.record.seq).collect::<Vec<_>>(), expected);
        assert_eq!(expected, [1, 3]);
    }

    fn goal(id: &str, predicate: Predicate) -> SubgoalSpec {
        SubgoalSpec {
            id: id.into(),
            predicate,
        }
    }

    #[test]
    fn pgsr_fraction() {
        let traces = fixture();
        let mut state = Document::new();
        state.insert("x".into(), json!("9"));
        let goals = vec![
            goal(
                "set-x",
                Predicate::ToolCalled {
                    name: "set".into(),
                    args: payload(json!({"key": "x"})),
                },
            ),
            goal(
                "x-is-9",
                Predicate::StateEquals {
                    key: "x".into(),
                    value: "9".into(),
                },
            ),
            goal(
                "called-get",
                Predicate::ToolCalled {
                    name: "get".into(),
                    args: Document::new(),
                },
            ),
            goal(
                "says-ten",
                Predicate::FinalAnswerMatches {
                    pattern: "^ten$".into(),
                    trim: true,
                    casefold: true,
                },
            ),
        ];
        let r = evaluate_pgsr(&goals, &traces, &state, Some("11"));
        assert_eq!(r.score, 0.5);
        assert_eq!(r.details["subgoals"]["set-x"]["met"], json!(true));
        let r = evaluate_pgsr(&goals[..2], &traces, &state, None);
        assert_eq!(r.score, 1.0);
        let r = evaluate_pgsr(&goals[3..], &traces, &state, Some("  TEN \n"));
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn subgoal_json_shape() {
        let g: SubgoalSpec = serde_json::from_value(json!({
            "id": "s", "predicate": {"type": "state_equals", "key": "k", "value": "v"}
        }))
        .unwrap();
        assert_eq!(
            g.predicate,
            Predicate::StateEquals {
                key: "k".into(),
                value: "v".into()
            }
        );
        assert!(serde_json::from_value::<SubgoalSpec>(json!({
            "id": "s", "predicate": {"type": "state_equals", "key": "k", "value": "v", "extra": 1}
        }))
        .is_err());
    }

    #[test]
    fn exact_match_normalization() {
        assert_eq!(evaluate_exact_match("42", " 42 ", true, false).score, 1.0);
        assert_eq!(evaluate_exact_match("Paris", "paris", false, true).score, 1.0);
        assert_eq!(evaluate_exact_match("41", "42", true, true).score, 0.0);
        assert_eq!(evaluate_exact_match("42", " 42 ", false, false).score, 0.0);
    }
}
