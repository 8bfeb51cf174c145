use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::json;

use crate::engine::callbacks::CallbackHub;
use crate::environment::ToolInvocation;
use crate::error::{ExecError, HarnessError};
use crate::model::{derive_task_seed, Task, TimeoutAction};
use crate::registry::{ComponentId, ComponentKind, ComponentRegistry, TraceEvent};
use crate::Document;

/// Operator-initiated abort shared between the caller and running workers.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
struct Deadline {
    at: Option<Instant>,
    extended: bool,
}

/// Scope of one `(task, repeat)` execution: registry, seed, deadline and
/// step budget.
///
/// Timeouts are cooperative. Components call [`TaskContext::checkpoint`]
/// regularly; the first call past the deadline fails with
/// [`ExecError::Timeout`] unless the task's timeout action is `extend` and
/// the single extension has not been used yet.
pub struct TaskContext {
    task_id: String,
    repeat_idx: u32,
    seed: u64,
    attempt: u32,
    registry: Arc<ComponentRegistry>,
    harness: ComponentId,
    deadline: Mutex<Deadline>,
    timeout_action: TimeoutAction,
    extension: Option<Duration>,
    max_agent_steps: u32,
    steps: AtomicU32,
    active_agent: Mutex<Option<ComponentId>>,
    callbacks: Arc<CallbackHub>,
    cancel: CancelToken,
}

impl TaskContext {
    /// Creates a context with a fresh registry. The deadline starts now.
    pub fn for_task(task: &Task, repeat_idx: u32, master_seed: u64) -> Self {
        let registry = Arc::new(ComponentRegistry::new(&task.task_id, repeat_idx));
        Self::new(task, repeat_idx, master_seed, registry)
    }

    pub fn new(
        task: &Task,
        repeat_idx: u32,
        master_seed: u64,
        registry: Arc<ComponentRegistry>,
    ) -> Self {
        let harness = registry.register(ComponentKind::Environment, "harness", Document::new());
        let at = task
            .metadata
            .timeout_seconds
            .map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
        Self {
            task_id: task.task_id.clone(),
            repeat_idx,
            seed: derive_task_seed(master_seed, &task.task_id, repeat_idx),
            attempt: 0,
            registry,
            harness,
            deadline: Mutex::new(Deadline { at, extended: false }),
            timeout_action: task.metadata.timeout_action,
            extension: task
                .metadata
                .effective_extension()
                .filter(|s| *s > 0.0)
                .map(Duration::from_secs_f64),
            max_agent_steps: task.protocol.max_agent_steps,
            steps: AtomicU32::new(0),
            active_agent: Mutex::new(None),
            callbacks: Arc::new(CallbackHub::default()),
            cancel: CancelToken::new(),
        }
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn with_callbacks(mut self, callbacks: Arc<CallbackHub>) -> Self {
        self.callbacks = callbacks;
        self
    }

    pub fn with_cancel(mut self, cancel: CancelToken) -> Self {
        self.cancel = cancel;
        self
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn repeat_idx(&self) -> u32 {
        self.repeat_idx
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 0 on the first attempt, incremented by each timeout retry.
    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn registry(&self) -> &Arc<ComponentRegistry> {
        &self.registry
    }

    /// The component under which harness-level events are recorded.
    pub fn harness_component(&self) -> &ComponentId {
        &self.harness
    }

    pub fn register(&self, kind: ComponentKind, name: &str, config: Document) -> ComponentId {
        self.registry.register(kind, name, config)
    }

    pub fn emit(
        &self,
        component: &ComponentId,
        event_kind: &str,
        payload: Document,
    ) -> Result<TraceEvent, HarnessError> {
        self.registry.emit(component, event_kind, payload)
    }

    pub(crate) fn emit_harness(&self, event_kind: &str, payload: serde_json::Value) {
        let payload = match payload {
            serde_json::Value::Object(map) => map,
            other => {
                let mut map = Document::new();
                map.insert("value".into(), other);
                map
            }
        };
        // the harness component is registered by construction
        let _ = self.registry.emit(&self.harness, event_kind, payload);
    }

    pub fn warn(&self, message: &str) {
        log::warn!("{}#{}: {message}", self.task_id, self.repeat_idx);
        self.emit_harness("warning", json!({ "message": message }));
    }

    pub fn is_past_deadline(&self) -> bool {
        let d = self.deadline.lock().unwrap_or_else(|p| p.into_inner());
        d.at.is_some_and(|at| Instant::now() >= at)
    }

    /// Cooperative cancellation and deadline probe. Never blocks.
    pub fn checkpoint(&self) -> Result<(), ExecError> {
        if self.cancel.is_cancelled() {
            self.emit_harness("checkpoint", json!({"outcome": "cancelled", "attempt": self.attempt}));
            return Err(ExecError::Cancelled);
        }
        let mut d = self.deadline.lock().unwrap_or_else(|p| p.into_inner());
        let Some(at) = d.at else { return Ok(()) };
        let now = Instant::now();
        if now < at {
            return Ok(());
        }
        if self.timeout_action == TimeoutAction::Extend && !d.extended {
            if let Some(ext) = self.extension {
                d.extended = true;
                d.at = Some(at + ext);
                self.emit_harness(
                    "checkpoint",
                    json!({"outcome": "extended", "attempt": self.attempt}),
                );
                if now < at + ext {
                    return Ok(());
                }
            }
        }
        self.emit_harness("checkpoint", json!({"outcome": "timeout", "attempt": self.attempt}));
        Err(ExecError::Timeout)
    }

    pub(crate) fn set_active_agent(&self, agent: Option<ComponentId>) {
        *self.active_agent.lock().unwrap_or_else(|p| p.into_inner()) = agent;
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps.load(Ordering::SeqCst)
    }

    /// Accounts one agent step against the task's step budget. Adapters call
    /// this once per action (tool call or final answer).
    pub fn agent_step(&self) -> Result<(), ExecError> {
        self.checkpoint()?;
        let step = self.steps.fetch_add(1, Ordering::SeqCst) + 1;
        let agent = self
            .active_agent
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone();
        if step > self.max_agent_steps {
            let mut err = HarnessError::agent("step budget exhausted").with_suggestion(format!(
                "finish within {} steps",
                self.max_agent_steps
            ));
            if let Some(agent) = &agent {
                err = err.with_component(agent);
            }
            return Err(err.into());
        }
        if let Some(agent) = agent {
            let failures = self.callbacks.dispatch(|cb| cb.on_agent_step(&agent, step));
            self.record_callback_failures("on_agent_step", failures);
        }
        Ok(())
    }

    pub(crate) fn notify_tool_invoked(&self, invocation: &ToolInvocation) {
        let failures = self.callbacks.dispatch(|cb| cb.on_tool_invoked(invocation));
        self.record_callback_failures("on_tool_invoked", failures);
    }

    pub(crate) fn record_callback_failures(&self, hook: &str, failures: Vec<String>) {
        for message in failures {
            log::warn!("callback {hook} failed: {message}");
            self.emit_harness("callback_error", json!({"hook": hook, "message": message}));
        }
    }
}
