use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;

use crate::engine::RunOptions;
use crate::environment::ToolInvocation;
use crate::model::{Report, Task};
use crate::registry::ComponentId;

pub type CallbackResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Lifecycle hooks at benchmark, environment and agent level. Every method
/// defaults to a no-op.
///
/// A hook that returns an error or panics is recorded as a
/// `callback_error` trace event and otherwise ignored.
#[allow(unused_variables)]
pub trait Callback: Send {
    fn on_run_start(&mut self, tasks: &[Task], options: &RunOptions) -> CallbackResult {
        Ok(())
    }
    fn on_task_start(&mut self, task: &Task, repeat_idx: u32) -> CallbackResult {
        Ok(())
    }
    fn on_task_end(&mut self, report: &Report) -> CallbackResult {
        Ok(())
    }
    fn on_run_end(&mut self, reports: &[Report]) -> CallbackResult {
        Ok(())
    }
    fn on_tool_invoked(&mut self, invocation: &ToolInvocation) -> CallbackResult {
        Ok(())
    }
    fn on_agent_step(&mut self, agent: &ComponentId, step: u32) -> CallbackResult {
        Ok(())
    }
}

/// Serializes callback invocation across workers.
#[derive(Default)]
pub struct CallbackHub {
    callbacks: Mutex<Vec<Box<dyn Callback>>>,
}

impl CallbackHub {
    pub fn new(callbacks: Vec<Box<dyn Callback>>) -> Self {
        Self {
            callbacks: Mutex::new(callbacks),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.callbacks
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .is_empty()
    }

    /// Runs `hook` on every callback, returning the failure messages.
    pub fn dispatch(&self, mut hook: impl FnMut(&mut dyn Callback) -> CallbackResult) -> Vec<String> {
        let mut callbacks = self.callbacks.lock().unwrap_or_else(|p| p.into_inner());
        let mut failures = Vec::new();
        for cb in callbacks.iter_mut() {
            match catch_unwind(AssertUnwindSafe(|| hook(cb.as_mut()))) {
                Ok(Ok(())) => {}
                Ok(Err(e)) => failures.push(e.to_string()),
                Err(panic) => failures.push(format!("callback panicked: {}", panic_message(&panic))),
            }
        }
        failures
    }
}

pub(crate) fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}
