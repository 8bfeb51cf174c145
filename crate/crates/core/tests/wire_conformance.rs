mod common;

use std::sync::Arc;

use harness_core::agent::{AgentAdapter, Role, SubprocessAgent};
use harness_core::engine::{Engine, RunOptions, TaskContext};
use harness_core::environment::Environment;
use harness_core::{ErrorKind, ExecError, ExecutionStatus, Task};

use common::TestBench;

fn fixture(mode: &str) -> SubprocessAgent {
    SubprocessAgent::new("fixture", common::fixture_agent(), vec![mode.to_string()])
}

fn run_one(mode: &str, query: &str) -> (Result<String, ExecError>, SubprocessAgent) {
    let task = Task::new("t", query);
    let ctx = TaskContext::for_task(&task, 0, 0);
    let mut env = Environment::key_value(&ctx, &task).unwrap();
    let mut agent = fixture(mode);
    let tools = env.tools();
    let result = agent.run_agent(&ctx, query, &tools, &mut env);
    (result, agent)
}

fn fault(result: Result<String, ExecError>) -> harness_core::HarnessError {
    match result {
        Err(ExecError::Fault(e)) => e,
        other => panic!("expected a fault, got {other:?}"),
    }
}

#[test]
fn golden_transcripts() {
    let transcripts = common::golden_transcripts();
    assert!(transcripts.len() >= 5);
    for path in transcripts {
        if let Err(e) = common::run_transcript(&path) {
            panic!("{}: {e}", path.display());
        }
    }
}

#[test]
fn echo_ping() {
    let (result, mut agent) = run_one("echo", "ping");
    assert_eq!(result.unwrap(), "ping");
    let first = agent.get_messages().unwrap();
    assert_eq!(first.len(), 2);
    assert_eq!(agent.get_messages().unwrap(), first);
}

#[test]
fn messages_before_any_run_are_empty() {
    assert!(fixture("echo").get_messages().unwrap().is_empty());
}

#[test]
fn three_messages_over_the_wire() {
    let (result, mut agent) = run_one("history", "hi");
    assert_eq!(result.unwrap(), "done");
    let messages = agent.get_messages().unwrap();
    let roles: Vec<Role> = messages.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::User, Role::Assistant, Role::Assistant]);
    assert_eq!(messages[1].content, "thinking");
}

#[test]
fn tool_round_trip_through_environment() {
    let (result, mut agent) = run_one("tools", "add");
    assert_eq!(result.unwrap(), "5");
    let messages = agent.get_messages().unwrap();
    assert_eq!(messages.len(), 4);
    assert_eq!(messages[2].tool_call_id.as_deref(), Some("c1"));
}

#[test]
fn version_mismatch_is_environment_error() {
    let err = fault(run_one("bad-version", "q").0);
    assert_eq!(err.kind, ErrorKind::Environment);
    assert_eq!(err.message, "unsupported protocol version");
}

#[test]
fn malformed_agent_line_is_protocol_error() {
    let err = fault(run_one("malformed", "q").0);
    assert_eq!(err.kind, ErrorKind::Protocol);
}

#[test]
fn agent_error_event_keeps_suggestion() {
    let err = fault(run_one("error", "q").0);
    assert_eq!(err.kind, ErrorKind::Agent);
    assert_eq!(err.suggestion.as_deref(), Some("ask a smaller question"));
}

#[test]
fn dying_agents_are_transport_failures() {
    for mode in ["die", "crash"] {
        let err = fault(run_one(mode, "q").0);
        assert_eq!(err.kind, ErrorKind::Environment, "{mode}");
    }
}

#[test]
fn statuses_through_the_engine() {
    let modes = ["echo", "malformed", "error", "die", "bad-version"];
    let bench = TestBench::new(|task| -> Vec<Box<dyn AgentAdapter>> { vec![Box::new(fixture(&task.task_id))] });
    let tasks: Vec<Task> = modes.iter().map(|m| Task::new(*m, "ping")).collect();
    let outcome = Engine::new(Arc::new(bench), RunOptions::default()).run(&tasks).unwrap();
    let statuses: Vec<ExecutionStatus> = outcome.reports.iter().map(|r| r.status).collect();
    assert_eq!(
        statuses,
        [
            ExecutionStatus::Success,
            ExecutionStatus::AgentError,
            ExecutionStatus::AgentError,
            ExecutionStatus::EnvironmentError,
            ExecutionStatus::EnvironmentError,
        ]
    );
    let malformed = outcome.reports[1].error.as_ref().unwrap();
    assert_eq!(malformed.kind, ErrorKind::Protocol);
}

#[test]
fn killed_mid_run_is_never_an_agent_error() {
    let bench = TestBench::new(|_| -> Vec<Box<dyn AgentAdapter>> { vec![Box::new(fixture("killme"))] });
    let tasks: Vec<Task> = (0..3).map(|i| Task::new(format!("k{i}"), "q")).collect();
    let outcome = Engine::new(Arc::new(bench), RunOptions::default()).run(&tasks).unwrap();
    for report in &outcome.reports {
        assert_eq!(report.status, ExecutionStatus::EnvironmentError, "{:?}", report.error);
        assert!(report.eval_results.is_empty());
    }
}
