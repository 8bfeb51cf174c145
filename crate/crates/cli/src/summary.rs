//! Tabular summaries of report files.

use std::collections::BTreeMap;
use std::fmt::Write;

use harness_core::eval::trace_usage;
use harness_core::{ExecutionStatus, Report};

/// Keeps the last report of every `(task, repeat)` pair, preferring the
/// highest attempt. Order follows first appearance.
pub fn latest_reports(reports: Vec<Report>) -> Vec<Report> {
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut latest: BTreeMap<(String, u32), Report> = BTreeMap::new();
    for report in reports {
        let key = (report.task_id.clone(), report.repeat_idx);
        match latest.get(&key) {
            None => {
                order.push(key.clone());
                latest.insert(key, report);
            }
            Some(old) if report.run_metadata.attempt >= old.run_metadata.attempt => {
                latest.insert(key, report);
            }
            Some(_) => {}
        }
    }
    order.into_iter().filter_map(|k| latest.remove(&k)).collect()
}

fn fmt_mean(values: &[f64]) -> String {
    if values.is_empty() {
        "-".into()
    } else {
        format!("{:.3}", values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Status counts and mean evaluator scores over scored reports.
pub fn run_summary(reports: &[Report]) -> String {
    let tasks: std::collections::BTreeSet<&str> = reports.iter().map(|r| r.task_id.as_str()).collect();
    let count = |s: ExecutionStatus| reports.iter().filter(|r| r.status == s).count();
    let infra = reports.iter().filter(|r| r.status.is_infrastructure_failure()).count();
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for report in reports.iter().filter(|r| r.status.is_scored()) {
        for (name, result) in &report.eval_results {
            scores.entry(name).or_default().push(result.score);
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}{:<9}{:<9}{:<12}{:<12}{:<9}{:<10}",
        "tasks", "reports", "success", "agent_fail", "infra_fail", "timeout", "cancelled"
    );
    let _ = writeln!(
        out,
        "{:<8}{:<9}{:<9}{:<12}{:<12}{:<9}{:<10}",
        tasks.len(),
        reports.len(),
        count(ExecutionStatus::Success),
        count(ExecutionStatus::AgentError),
        infra,
        count(ExecutionStatus::Timeout),
        count(ExecutionStatus::Cancelled),
    );
    for (name, values) in &scores {
        let _ = writeln!(out, "mean {name}: {} over {} scored reports", fmt_mean(values), values.len());
    }
    out
}

/// Per-task row: reports, statuses, mean score, tokens, mean latency.
pub fn task_table(reports: &[Report]) -> String {
    let mut by_task: Vec<(&str, Vec<&Report>)> = Vec::new();
    for report in reports {
        match by_task.iter_mut().find(|(t, _)| *t == report.task_id) {
            Some((_, list)) => list.push(report),
            None => by_task.push((&report.task_id, vec![report])),
        }
    }
    let width = by_task.iter().map(|(t, _)| t.len()).max().unwrap_or(4).max(4) + 2;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}{:<9}{:<28}{:<8}{:<11}{:<11}latency_s",
        "task", "reports", "statuses", "score", "in_tokens", "out_tokens"
    );
    for (task, list) in by_task {
        let mut statuses: BTreeMap<ExecutionStatus, usize> = BTreeMap::new();
        let mut usage = harness_core::agent::Usage::default();
        for r in &list {
            *statuses.entry(r.status).or_default() += 1;
            usage += trace_usage(&r.traces);
        }
        let statuses: Vec<String> = statuses.iter().map(|(s, n)| format!("{s}={n}")).collect();
        let scores: Vec<f64> = list
            .iter()
            .filter(|r| r.status.is_scored())
            .filter_map(|r| r.mean_score())
            .collect();
        let latency = list.iter().map(|r| r.wall_time_seconds).sum::<f64>() / list.len() as f64;
        let _ = writeln!(
            out,
            "{task:<width$}{:<9}{:<28}{:<8}{:<11}{:<11}{latency:.3}",
            list.len(),
            statuses.join(","),
            fmt_mean(&scores),
            usage.input_tokens,
            usage.output_tokens,
        );
    }
    out
}
