use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentAdapter, Message, ToolCall};
use crate::engine::TaskContext;
use crate::environment::{ToolDescriptor, ToolExecutor};
use crate::error::{ErrorKind, ExecError, HarnessError};
use crate::model::Task;
use crate::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptAction {
    ToolCall {
        name: String,
        #[serde(default)]
        args: Document,
    },
    Final {
        answer: String,
    },
    Fail {
        kind: ErrorKind,
        message: String,
        #[serde(default)]
        suggestion: Option<String>,
    },
    /// Blocks for `millis`, then checkpoints. With `only_attempt` set, sleeps
    /// only on that timeout-retry attempt.
    Sleep {
        millis: u64,
        #[serde(default)]
        only_attempt: Option<u32>,
    },
}

impl ScriptAction {
    pub fn tool_call(name: &str, args: serde_json::Value) -> Self {
        ScriptAction::ToolCall {
            name: name.to_string(),
            args: args.as_object().cloned().unwrap_or_default(),
        }
    }

    pub fn final_answer(answer: &str) -> Self {
        ScriptAction::Final {
            answer: answer.to_string(),
        }
    }
}

/// Replays a fixed list of actions. Agent-kind tool errors (unknown tool,
/// bad arguments) are fed back as tool results so the script can continue
/// with a corrected call.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    name: String,
    script: Vec<ScriptAction>,
    cursor: usize,
    messages: Vec<Message>,
    calls: u32,
}

impl ScriptedAgent {
    pub fn new(name: impl Into<String>, script: Vec<ScriptAction>) -> Self {
        Self {
            name: name.into(),
            script,
            cursor: 0,
            messages: Vec::new(),
            calls: 0,
        }
    }
}

impl AgentAdapter for ScriptedAgent {
    fn run_agent(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        _tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError> {
        self.messages.push(Message::user(query));
        while let Some(action) = self.script.get(self.cursor).cloned() {
            self.cursor += 1;
            match action {
                ScriptAction::ToolCall { name, args } => {
                    ctx.agent_step()?;
                    self.calls += 1;
                    let call = ToolCall {
                        call_id: format!("c{}", self.calls),
                        name,
                        args,
                    };
                    let rendered = format!(
                        "{}({})",
                        call.name,
                        serde_json::Value::Object(call.args.clone())
                    );
                    self.messages
                        .push(Message::assistant(rendered).with_tool_calls(vec![call.clone()]));
                    let content = match executor.execute(ctx, &call) {
                        Ok(inv) => inv.result,
                        Err(ExecError::Fault(e)) if e.kind == ErrorKind::Agent => match e.suggestion
                        {
                            Some(s) => format!("error: {} ({s})", e.message),
                            None => format!("error: {}", e.message),
                        },
                        Err(e) => return Err(e),
                    };
                    self.messages.push(Message::tool_result(&call.call_id, content));
                }
                ScriptAction::Final { answer } => {
                    ctx.agent_step()?;
                    self.messages.push(Message::assistant(&answer));
                    return Ok(answer);
                }
                ScriptAction::Fail {
                    kind,
                    message,
                    suggestion,
                } => {
                    ctx.agent_step()?;
                    let mut err = HarnessError::new(kind, message);
                    err.suggestion = suggestion;
                    return Err(err.into());
                }
                ScriptAction::Sleep {
                    millis,
                    only_attempt,
                } => {
                    if only_attempt.is_none_or(|a| a == ctx.attempt()) {
                        std::thread::sleep(Duration::from_millis(millis));
                    }
                    ctx.checkpoint()?;
                }
            }
        }
        Err(HarnessError::agent("script ended without a final answer").into())
    }

    fn get_messages(&mut self) -> Result<Vec<Message>, ExecError> {
        Ok(self.messages.clone())
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("adapter".into(), json!("scripted"));
        doc.insert("script_len".into(), json!(self.script.len()));
        doc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub name: String,
    pub script: Vec<ScriptAction>,
}

/// Agent scripts keyed by task id. One entry per agent, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptBook(pub BTreeMap<String, Vec<AgentScript>>);

impl ScriptBook {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::config(format!("invalid script file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Scripts that answer immediately without using any tool.
    pub fn lazy(tasks: &[Task], agents_per_task: impl Fn(&Task) -> usize) -> Self {
        let book = tasks
            .iter()
            .map(|t| {
                let scripts = (0..agents_per_task(t).max(1))
                    .map(|i| AgentScript {
                        name: format!("lazy{i}"),
                        script: vec![ScriptAction::final_answer("I don't know")],
                    })
                    .collect();
                (t.task_id.clone(), scripts)
            })
            .collect();
        Self(book)
    }

    pub fn agents_for(&self, task_id: &str) -> Result<Vec<Box<dyn AgentAdapter>>, HarnessError> {
        let scripts = self
            .0
            .get(task_id)
            .ok_or_else(|| HarnessError::config(format!("no agent script for task {task_id:?}")))?;
        Ok(scripts
            .iter()
            .map(|s| Box::new(ScriptedAgent::new(&s.name, s.script.clone())) as Box<dyn AgentAdapter>)
            .collect())
    }
}
