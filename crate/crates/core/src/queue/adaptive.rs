use std::collections::BTreeMap;

use serde_json::json;

use super::irt::{adaptive_stop, estimate_ability, select_next, AbilityEstimate, IrtItem, StopRule};
use super::TaskQueue;
use crate::error::HarnessError;
use crate::model::Task;
use crate::Document;

/// Administers the most informative remaining task at the current ability
/// estimate until the stopping rule fires.
pub struct AdaptiveTaskQueue {
    tasks: BTreeMap<String, Task>,
    remaining: Vec<IrtItem<f64>>,
    responses: Vec<(IrtItem<f64>, bool)>,
    administered: Vec<String>,
    estimate: AbilityEstimate<f64>,
    rule: StopRule,
}

impl AdaptiveTaskQueue {
    /// Tasks without item parameters get `a = 1, b = 0`; one warning is
    /// returned per such task.
    pub fn new(tasks: Vec<Task>, rule: StopRule) -> Result<(Self, Vec<String>), HarnessError> {
        let mut warnings = Vec::new();
        let mut remaining = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let (a, b) = match task.metadata.item_params {
                Some(p) => (p.a, p.b),
                None => {
                    warnings.push(format!(
                        "task {} has no item_params; using a=1, b=0",
                        task.task_id
                    ));
                    (1.0, 0.0)
                }
            };
            remaining.push(IrtItem::new(&task.task_id, a, b)?);
        }
        Ok((
            Self {
                tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
                remaining,
                responses: Vec::new(),
                administered: Vec::new(),
                estimate: AbilityEstimate::prior(),
                rule,
            },
            warnings,
        ))
    }

    pub fn estimate(&self) -> &AbilityEstimate<f64> {
        &self.estimate
    }

    pub fn administered(&self) -> &[String] {
        &self.administered
    }
}

impl TaskQueue for AdaptiveTaskQueue {
    fn next(&mut self) -> Option<Task> {
        if self.is_done() {
            return None;
        }
        let chosen = select_next(&self.estimate, &self.remaining)?.task_id.clone();
        self.administered.push(chosen.clone());
        self.tasks.get(&chosen).cloned()
    }

    fn report_result(&mut self, task_id: &str, correct: bool, _score: f64) {
        let Some(pos) = self.remaining.iter().position(|i| i.task_id == task_id) else {
            return;
        };
        let item = self.remaining.remove(pos);
        self.responses.push((item, correct));
        if let Ok(est) = estimate_ability(&self.responses) {
            self.estimate = est;
        }
    }

    fn is_done(&self) -> bool {
        let pending = self.administered.len() > self.responses.len();
        !pending
            && (self.remaining.is_empty()
                || (!self.responses.is_empty()
                    && adaptive_stop(&self.estimate, self.administered.len(), &self.rule)))
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn summary(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("queue".into(), json!("adaptive"));
        doc.insert("theta".into(), json!(self.estimate.theta));
        let se = self.estimate.standard_error;
        doc.insert("standard_error".into(), if se.is_finite() { json!(se) } else { json!(null) });
        doc.insert("administered".into(), json!(self.administered));
        doc
    }
}
