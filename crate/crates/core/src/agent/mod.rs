//! The agent adapter contract and its realizations.
//!
//! An agent is anything that can run on a query and report its message
//! history. The engine touches agents only through
//! [`AgentAdapter::run_agent`] and [`AgentAdapter::get_messages`].

mod http;
mod session;
mod model_agent;
mod scripted;
mod subprocess;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use http::HttpAgent;
pub use model_agent::ModelAgent;
pub use scripted::{AgentScript, ScriptAction, ScriptBook, ScriptedAgent};
pub use subprocess::{SubprocessAgent, AGENT_NAME_VAR};

use crate::engine::TaskContext;
use crate::environment::{ToolDescriptor, ToolExecutor};
use crate::error::ExecError;
use crate::registry::{ComponentId, ComponentKind};
use crate::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub name: String,
    #[serde(default)]
    pub args: Document,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: None,
            tool_call_id: None,
            usage: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::new(Role::Tool, content)
        }
    }

    pub fn with_tool_calls(mut self, calls: Vec<ToolCall>) -> Self {
        self.tool_calls = Some(calls);
        self
    }

    /// Checks the role-dependent field invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.role == Role::Tool && self.tool_call_id.is_none() {
            return Err("tool message without tool_call_id".into());
        }
        if self.tool_calls.is_some() && self.role != Role::Assistant {
            return Err(format!("{} message carries tool_calls", self.role));
        }
        Ok(())
    }
}

/// Two-operation adapter contract.
pub trait AgentAdapter: Send {
    /// Runs the agent on `query` until it produces a final answer. Tool
    /// calls go through `tools`; adapters account each step with
    /// [`TaskContext::agent_step`].
    fn run_agent(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError>;

    /// Complete message history of all runs so far, in order.
    fn get_messages(&mut self) -> Result<Vec<Message>, ExecError>;

    fn name(&self) -> &str;

    fn config(&self) -> Document {
        Document::new()
    }
}

/// A registered agent. Emits a `message` trace event for each new message
/// after every run.
pub struct AgentHandle {
    id: ComponentId,
    adapter: Box<dyn AgentAdapter>,
    emitted: usize,
}

impl AgentHandle {
    pub fn register(ctx: &TaskContext, adapter: Box<dyn AgentAdapter>) -> Self {
        let id = ctx.register(ComponentKind::Agent, adapter.name(), adapter.config());
        Self {
            id,
            adapter,
            emitted: 0,
        }
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn run(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError> {
        ctx.set_active_agent(Some(self.id.clone()));
        let result = self
            .adapter
            .run_agent(ctx, query, tools, executor)
            .map_err(|e| match e {
                ExecError::Fault(f) if f.component_id.is_none() => {
                    ExecError::Fault(f.with_component(&self.id))
                }
                other => other,
            });
        ctx.set_active_agent(None);
        match self.sync_messages(ctx) {
            Err(e) if result.is_ok() => Err(e),
            _ => result,
        }
    }

    fn sync_messages(&mut self, ctx: &TaskContext) -> Result<(), ExecError> {
        let messages = self.adapter.get_messages()?;
        for (index, message) in messages.iter().enumerate().skip(self.emitted) {
            let mut payload = Document::new();
            payload.insert("index".into(), json!(index));
            payload.insert(
                "message".into(),
                serde_json::to_value(message).unwrap_or_default(),
            );
            ctx.emit(&self.id, "message", payload)?;
        }
        self.emitted = self.emitted.max(messages.len());
        Ok(())
    }

    pub fn get_messages(&mut self) -> Result<Vec<Message>, ExecError> {
        self.adapter.get_messages()
    }
}

/// Whitespace-separated token count used by offline components.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
