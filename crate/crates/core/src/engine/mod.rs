//! Task lifecycle orchestration.
//!
//! Every `(task, repeat)` execution runs Setup, Execute, Collect, Evaluate
//! and Report against its own component registry, which is cleared when the
//! execution ends. Executions are distributed over a pool of workers.

pub mod callbacks;
mod context;
mod driver;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use callbacks::{Callback, CallbackHub, CallbackResult};
pub use context::{CancelToken, TaskContext};
pub use driver::default_execution_loop;

use crate::agent::{AgentAdapter, AgentHandle};
use crate::environment::Environment;
use crate::error::{ExecError, HarnessError};
use crate::eval::{run_evaluator, EvalInputs, EvalResult, Evaluator};
use crate::metadata::{capture_run_metadata, RunMetadata};
use crate::model::{validate_tasks, ExecutionStatus, Report, Task, TimeoutAction};
use crate::queue::QueueSpec;
use crate::registry::{ComponentKind, ComponentRegistry, TraceRecord};
use crate::user::SharedUser;
use crate::Document;

/// Benchmark hooks. Everything a benchmark does to an execution flows
/// through component registration and trace emission on the context.
pub trait Benchmark: Send + Sync {
    fn setup_environment(&self, ctx: &TaskContext, task: &Task) -> Result<Environment, ExecError>;

    /// Whether [`Benchmark::setup_user`] yields a user for `task`. Checked
    /// by task validation before any execution.
    fn has_user(&self, _task: &Task) -> bool {
        false
    }

    fn setup_user(
        &self,
        _ctx: &TaskContext,
        _task: &Task,
        _env: &mut Environment,
    ) -> Result<Option<SharedUser>, ExecError> {
        Ok(None)
    }

    /// Must return at least one agent.
    fn setup_agents(
        &self,
        ctx: &TaskContext,
        task: &Task,
        env: &Environment,
        user: Option<&SharedUser>,
    ) -> Result<Vec<Box<dyn AgentAdapter>>, ExecError>;

    /// Must return at least one evaluator.
    fn setup_evaluators(&self, task: &Task) -> Vec<Box<dyn Evaluator>>;

    fn execution_loop(
        &self,
        ctx: &TaskContext,
        task: &Task,
        agents: &mut [AgentHandle],
        env: &mut Environment,
        user: Option<&SharedUser>,
    ) -> Result<String, ExecError> {
        default_execution_loop(ctx, task, agents, env, user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default = "one")]
    pub n_task_repeats: u32,
    #[serde(default = "one_usize")]
    pub num_workers: usize,
    #[serde(default)]
    pub fail_on_task_error: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub queue: QueueSpec,
    /// Free-form grouping labels (framework, model, domain, ...) recorded
    /// in the manifest.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            n_task_repeats: 1,
            num_workers: 1,
            fail_on_task_error: false,
            master_seed: 0,
            output_dir: None,
            queue: QueueSpec::Sequential,
            labels: BTreeMap::new(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_task_repeats == 0 {
            return Err(HarnessError::config("n_task_repeats must be ≥ 1"));
        }
        if self.num_workers == 0 {
            return Err(HarnessError::config("num_workers must be ≥ 1"));
        }
        Ok(())
    }
}

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUBSET_PLAN_FILE: &str = "subset_plan.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub options: RunOptions,
    pub run_metadata: RunMetadata,
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Ordered by task input order, then repeat index.
    pub reports: Vec<Report>,
    /// Stopped early by `fail_on_task_error`.
    pub halted: bool,
    pub queue_summary: Document,
    pub warnings: Vec<String>,
    /// Failures of run-level callbacks (which have no trace to go into).
    pub callback_errors: Vec<String>,
    pub run_metadata: RunMetadata,
}

struct Scheduler {
    queue: Box<dyn crate::queue::TaskQueue>,
    pending: VecDeque<(Task, u32)>,
    /// Per task: repeats still running and the outcomes so far.
    open: HashMap<String, (u32, Vec<f64>)>,
    restrict: Option<HashMap<String, Vec<u32>>>,
    reports: Vec<Report>,
    sink: Option<File>,
    io_error: Option<HarnessError>,
    halted: bool,
}

impl Scheduler {
    fn next_unit(&mut self, repeats: u32, cancel: &CancelToken) -> Option<(Task, u32)> {
        loop {
            if self.halted || cancel.is_cancelled() {
                return None;
            }
            if let Some(unit) = self.pending.pop_front() {
                return Some(unit);
            }
            if self.queue.is_done() {
                return None;
            }
            let task = self.queue.next()?;
            let indices: Vec<u32> = match &self.restrict {
                Some(pairs) => pairs.get(&task.task_id).cloned().unwrap_or_default(),
                None => (0..repeats).collect(),
            };
            if indices.is_empty() {
                continue;
            }
            self.open
                .insert(task.task_id.clone(), (indices.len() as u32, Vec::new()));
            self.pending
                .extend(indices.into_iter().map(|r| (task.clone(), r)));
        }
    }

    fn finish(&mut self, report: Report, fail_fast: bool) {
        if let Some(file) = self.sink.as_mut() {
            let written = report
                .to_json_line()
                .map_err(|e| e.to_string())
                .and_then(|line| {
                    file.write_all(line.as_bytes())
                        .and_then(|_| file.flush())
                        .map_err(|e| e.to_string())
                });
            if let Err(e) = written {
                self.io_error
                    .get_or_insert_with(|| HarnessError::environment(format!("cannot persist report: {e}")));
                self.halted = true;
            }
        }
        if fail_fast && report.status != ExecutionStatus::Success {
            self.halted = true;
        }
        if let Some((left, scores)) = self.open.get_mut(&report.task_id) {
            *left -= 1;
            if report.status.is_scored() {
                scores.push(report.mean_score().unwrap_or(0.0));
            }
            if *left == 0 {
                let (_, scores) = self.open.remove(&report.task_id).unwrap_or_default();
                let score = if scores.is_empty() {
                    0.0
                } else {
                    scores.iter().sum::<f64>() / scores.len() as f64
                };
                self.queue.report_result(&report.task_id, score >= 0.5, score);
            }
        }
        self.reports.push(report);
    }
}

/// Drives a [`Benchmark`] over a task list.
pub struct Engine {
    benchmark: Arc<dyn Benchmark>,
    options: RunOptions,
    callbacks: Arc<CallbackHub>,
    cancel: CancelToken,
    attempt: u32,
    working_dir: PathBuf,
    write_manifest: bool,
}

struct AttemptOutcome {
    result: Result<String, ExecError>,
    final_state: Document,
    evaluators: Vec<Box<dyn Evaluator>>,
}

impl Engine {
    pub fn new(benchmark: Arc<dyn Benchmark>, options: RunOptions) -> Self {
        Self {
            benchmark,
            options,
            callbacks: Arc::new(CallbackHub::default()),
            cancel: CancelToken::new(),
            attempt: 0,
            working_dir: PathBuf::from("."),
            write_manifest: true,
        }
    }

    pub fn with_callbacks(mut self, callbacks: Vec<Box<dyn Callback>>) -> Self {
        self.callbacks = Arc::new(CallbackHub::new(callbacks));
        self
    }

    pub fn with_cancel(mut self, cancel: CancelToken) -> Self {
        self.cancel = cancel;
        self
    }

    /// Retry generation recorded in run metadata. Retry runs do not rewrite
    /// the manifest.
    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self.write_manifest = attempt == 0;
        self
    }

    /// Directory whose git state is captured.
    pub fn with_working_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.working_dir = dir.into();
        self
    }

    pub fn options(&self) -> &RunOptions {
        &self.options
    }

    /// Runs every task `n_task_repeats` times.
    pub fn run(&self, tasks: &[Task]) -> Result<RunOutcome, HarnessError> {
        self.run_inner(tasks, None)
    }

    /// Re-executes only the given `(task_id, repeat_idx)` pairs.
    pub fn run_pairs(&self, tasks: &[Task], pairs: &[(String, u32)]) -> Result<RunOutcome, HarnessError> {
        let mut restrict: HashMap<String, Vec<u32>> = HashMap::new();
        for (task_id, repeat) in pairs {
            restrict.entry(task_id.clone()).or_default().push(*repeat);
        }
        for list in restrict.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        self.run_inner(tasks, Some(restrict))
    }

    fn run_inner(
        &self,
        tasks: &[Task],
        restrict: Option<HashMap<String, Vec<u32>>>,
    ) -> Result<RunOutcome, HarnessError> {
        self.options.validate()?;
        validate_tasks(tasks, |t| self.benchmark.has_user(t))?;
        let mut run_metadata = capture_run_metadata(&self.working_dir, self.options.master_seed);
        run_metadata.attempt = self.attempt;

        let built = self.options.queue.build(tasks.to_vec(), self.options.master_seed)?;
        let mut warnings = built.warnings;
        let mut workers = self.options.num_workers;
        if built.queue.is_adaptive() && workers > 1 {
            warnings.push(format!(
                "adaptive queue requires sequential execution; num_workers downgraded from {workers} to 1"
            ));
            workers = 1;
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        let sink = match &self.options.output_dir {
            Some(dir) => Some(self.prepare_output(dir, tasks, &run_metadata, built.plan.as_ref())?),
            None => None,
        };

        let callback_errors = self
            .callbacks
            .dispatch(|cb| cb.on_run_start(tasks, &self.options));

        let scheduler = Mutex::new(Scheduler {
            queue: built.queue,
            pending: VecDeque::new(),
            open: HashMap::new(),
            restrict,
            reports: Vec::new(),
            sink,
            io_error: None,
            halted: false,
        });
        let lock = || scheduler.lock().unwrap_or_else(|p| p.into_inner());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let Some((task, repeat)) = lock().next_unit(self.options.n_task_repeats, &self.cancel)
                    else {
                        break;
                    };
                    let report = self.execute_task(&task, repeat, &run_metadata, &warnings);
                    lock().finish(report, self.options.fail_on_task_error);
                });
            }
        });

        let mut state = scheduler.into_inner().unwrap_or_else(|p| p.into_inner());
        if let Some(e) = state.io_error.take() {
            return Err(e);
        }
        let order: HashMap<&str, usize> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.as_str(), i))
            .collect();
        state
            .reports
            .sort_by_key(|r| (order.get(r.task_id.as_str()).copied(), r.repeat_idx));
        let mut callback_errors = callback_errors;
        callback_errors.extend(self.callbacks.dispatch(|cb| cb.on_run_end(&state.reports)));
        for e in &callback_errors {
            log::warn!("run callback failed: {e}");
        }
        Ok(RunOutcome {
            reports: state.reports,
            halted: state.halted,
            queue_summary: state.queue.summary(),
            warnings,
            callback_errors,
            run_metadata,
        })
    }

    fn prepare_output(
        &self,
        dir: &Path,
        tasks: &[Task],
        run_metadata: &RunMetadata,
        plan: Option<&crate::queue::SubsetPlan>,
    ) -> Result<File, HarnessError> {
        let io = |e: std::io::Error| HarnessError::environment(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        if self.write_manifest {
            let manifest = Manifest {
                options: self.options.clone(),
                run_metadata: run_metadata.clone(),
                task_ids: tasks.iter().map(|t| t.task_id.clone()).collect(),
            };
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            std::fs::write(dir.join(MANIFEST_FILE), text).map_err(io)?;
        }
        if let Some(plan) = plan {
            plan.write(&dir.join(SUBSET_PLAN_FILE))?;
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(REPORTS_FILE))
            .map_err(io)
    }

    /// Runs one `(task, repeat)` through all five phases. Never fails:
    /// every outcome becomes a report.
    pub fn execute_task(
        &self,
        task: &Task,
        repeat_idx: u32,
        run_metadata: &RunMetadata,
        warnings: &[String],
    ) -> Report {
        let started = Instant::now();
        let registry = Arc::new(ComponentRegistry::new(&task.task_id, repeat_idx));
        let start_failures = self
            .callbacks
            .dispatch(|cb| cb.on_task_start(task, repeat_idx));
        let mut carried: Vec<(String, Document)> = Vec::new();
        let mut attempt = 0;
        let (ctx, outcome) = loop {
            registry.clear();
            let ctx = TaskContext::new(task, repeat_idx, self.options.master_seed, registry.clone())
                .with_attempt(attempt)
                .with_callbacks(self.callbacks.clone())
                .with_cancel(self.cancel.clone());
            for (kind, payload) in &carried {
                ctx.emit_harness(kind, serde_json::Value::Object(payload.clone()));
            }
            for w in warnings {
                ctx.warn(w);
            }
            ctx.record_callback_failures("on_task_start", start_failures.clone());
            let outcome = self.run_attempt(&ctx, task);
            let retry = matches!(outcome.result, Err(ExecError::Timeout))
                && task.metadata.timeout_action == TimeoutAction::Retry
                && attempt < task.metadata.max_retries;
            if !retry {
                break (ctx, outcome);
            }
            carried.extend(
                registry
                    .events()
                    .into_iter()
                    .filter(|e| e.component == *ctx.harness_component() && e.event_kind == "checkpoint")
                    .map(|e| (e.event_kind, e.payload)),
            );
            attempt += 1;
        };

        let (status, error, answer) = match outcome.result {
            Ok(answer) => (ExecutionStatus::Success, None, Some(answer)),
            Err(e) => (e.status(), e.fault().cloned(), None),
        };
        ctx.emit_harness("phase", json!({"phase": "collect", "status": status}));
        let collected = registry.collect();

        let mut eval_results = BTreeMap::new();
        if status.is_scored() {
            let inputs = EvalInputs {
                task,
                final_state: &outcome.final_state,
                final_answer: answer.as_deref(),
            };
            // a timeout during setup still yields a scored report
            let evaluators = if outcome.evaluators.is_empty() {
                catch_unwind(AssertUnwindSafe(|| self.benchmark.setup_evaluators(task))).unwrap_or_default()
            } else {
                outcome.evaluators
            };
            for evaluator in &evaluators {
                let result = catch_unwind(AssertUnwindSafe(|| {
                    run_evaluator(evaluator.as_ref(), &collected.traces, &inputs)
                }))
                .unwrap_or_else(|panic| {
                    let mut details = Document::new();
                    details.insert(
                        "error".into(),
                        json!(callbacks::panic_message(&panic)),
                    );
                    EvalResult { score: 0.0, details }
                });
                eval_results.insert(evaluator.name().to_string(), result);
            }
        }

        let mut report = Report {
            task_id: task.task_id.clone(),
            repeat_idx,
            status,
            traces: collected.traces,
            config_snapshot: collected.config,
            run_metadata: run_metadata.clone(),
            eval_results,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            error,
        };
        let end_failures = self.callbacks.dispatch(|cb| cb.on_task_end(&report));
        if !end_failures.is_empty() {
            let next = report
                .traces
                .values()
                .flatten()
                .map(|r| r.seq + 1)
                .max()
                .unwrap_or(0);
            let records = report
                .traces
                .entry(ctx.harness_component().clone())
                .or_default();
            for (seq, message) in (next..).zip(end_failures) {
                log::warn!("callback on_task_end failed: {message}");
                let mut payload = Document::new();
                payload.insert("hook".into(), json!("on_task_end"));
                payload.insert("message".into(), json!(message));
                records.push(TraceRecord {
                    seq,
                    event_kind: "callback_error".into(),
                    payload,
                });
            }
        }
        registry.clear();
        report
    }

    fn run_attempt(&self, ctx: &TaskContext, task: &Task) -> AttemptOutcome {
        let mut final_state = Document::new();
        let mut evaluators: Vec<Box<dyn Evaluator>> = Vec::new();
        let result = catch_unwind(AssertUnwindSafe(|| -> Result<String, ExecError> {
            ctx.emit_harness("phase", json!({"phase": "setup", "attempt": ctx.attempt()}));
            ctx.checkpoint()?;
            let mut env = self.benchmark.setup_environment(ctx, task)?;
            let user = self.benchmark.setup_user(ctx, task, &mut env)?;
            let adapters = self.benchmark.setup_agents(ctx, task, &env, user.as_ref())?;
            if adapters.is_empty() {
                return Err(HarnessError::config("setup_agents returned no agents").into());
            }
            evaluators = self.benchmark.setup_evaluators(task);
            if evaluators.is_empty() {
                return Err(HarnessError::config("setup_evaluators returned no evaluators").into());
            }
            for evaluator in &evaluators {
                ctx.register(ComponentKind::Evaluator, evaluator.name(), evaluator.config());
            }
            let mut agents: Vec<AgentHandle> = adapters
                .into_iter()
                .map(|a| AgentHandle::register(ctx, a))
                .collect();
            ctx.emit_harness("phase", json!({"phase": "execute"}));
            let result = self
                .benchmark
                .execution_loop(ctx, task, &mut agents, &mut env, user.as_ref());
            final_state = env.final_state();
            result
        }))
        .unwrap_or_else(|panic| {
            let message = callbacks::panic_message(&panic);
            log::error!("{}#{} panicked: {message}", task.task_id, ctx.repeat_idx());
            Err(HarnessError::environment(format!("unexpected failure: {message}")).into())
        });
        AttemptOutcome {
            result,
            final_state,
            evaluators,
        }
    }
}
