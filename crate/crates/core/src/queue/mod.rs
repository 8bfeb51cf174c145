//! Task scheduling strategies.

pub mod adaptive;
pub mod irt;
pub mod subset;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::model::Task;
use crate::Document;

pub use adaptive::AdaptiveTaskQueue;
pub use subset::{InformativeSubsetQueue, SubsetPlan};

/// Hands out tasks one at a time. `next` never yields a task twice and
/// yields nothing once `is_done` holds.
pub trait TaskQueue: Send {
    fn next(&mut self) -> Option<Task>;

    /// Outcome of a handed-out task (mean over its repeats).
    fn report_result(&mut self, task_id: &str, correct: bool, score: f64);

    fn is_done(&self) -> bool;

    /// Whether selection depends on earlier results.
    fn is_adaptive(&self) -> bool {
        false
    }

    fn summary(&self) -> Document {
        Document::new()
    }
}

/// Input order.
#[derive(Debug, Clone)]
pub struct SequentialQueue {
    tasks: VecDeque<Task>,
}

impl SequentialQueue {
    pub fn new(tasks: Vec<Task>) -> Self {
        Self { tasks: tasks.into() }
    }
}

impl TaskQueue for SequentialQueue {
    fn next(&mut self) -> Option<Task> {
        self.tasks.pop_front()
    }

    fn report_result(&mut self, _task_id: &str, _correct: bool, _score: f64) {}

    fn is_done(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Highest priority first, ties by task id.
#[derive(Debug, Clone)]
pub struct PriorityQueue {
    tasks: VecDeque<Task>,
}

impl PriorityQueue {
    pub fn new(mut tasks: Vec<Task>) -> Self {
        tasks.sort_by(|x, y| {
            y.metadata
                .priority
                .cmp(&x.metadata.priority)
                .then_with(|| x.task_id.cmp(&y.task_id))
        });
        Self { tasks: tasks.into() }
    }
}

impl TaskQueue for PriorityQueue {
    fn next(&mut self) -> Option<Task> {
        self.tasks.pop_front()
    }

    fn report_result(&mut self, _task_id: &str, _correct: bool, _score: f64) {}

    fn is_done(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Declarative queue selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueueSpec {
    #[default]
    Sequential,
    Priority,
    Adaptive {
        max_items: usize,
        se_threshold: f64,
    },
    Subset {
        k: usize,
        /// Defaults to the run's master seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

pub struct BuiltQueue {
    pub queue: Box<dyn TaskQueue>,
    pub warnings: Vec<String>,
    pub plan: Option<SubsetPlan>,
}

impl QueueSpec {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, QueueSpec::Adaptive { .. })
    }

    pub fn build(&self, tasks: Vec<Task>, master_seed: u64) -> Result<BuiltQueue, HarnessError> {
        let mut warnings = Vec::new();
        let mut plan = None;
        let queue: Box<dyn TaskQueue> = match self {
            QueueSpec::Sequential => Box::new(SequentialQueue::new(tasks)),
            QueueSpec::Priority => Box::new(PriorityQueue::new(tasks)),
            QueueSpec::Adaptive {
                max_items,
                se_threshold,
            } => {
                let (queue, w) = AdaptiveTaskQueue::new(
                    tasks,
                    irt::StopRule {
                        max_items: *max_items,
                        se_threshold: *se_threshold,
                    },
                )?;
                warnings.extend(w);
                Box::new(queue)
            }
            QueueSpec::Subset { k, seed } => {
                let queue = InformativeSubsetQueue::new(tasks, *k, seed.unwrap_or(master_seed))?;
                plan = Some(queue.plan().clone());
                Box::new(queue)
            }
        };
        Ok(BuiltQueue {
            queue,
            warnings,
            plan,
        })
    }
}
