//! Line-delimited JSON protocol between the harness and external agents.
//!
//! Every event is one UTF-8 JSON object on its own line, discriminated by
//! `"type"`. The agent opens with `hello`; afterwards the harness sends
//! `run`, answers each `tool_call` with a `tool_result`, and may ask for the
//! history with `get_messages`.

use serde::{Deserialize, Serialize};

use super::{Message, Role};
use crate::environment::{ToolDescriptor, ToolStatus};
use crate::error::HarnessError;
use crate::Document;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireEvent {
    // agent -> harness, first line
    Hello {
        protocol_version: u32,
    },
    // harness -> agent
    Run {
        task_id: String,
        seed: u64,
        query: String,
        tools: Vec<ToolDescriptor>,
    },
    ToolResult {
        call_id: String,
        status: ToolStatus,
        result: String,
    },
    GetMessages,
    // agent -> harness
    ToolCall {
        call_id: String,
        name: String,
        #[serde(default)]
        args: Document,
    },
    Message {
        role: Role,
        content: String,
    },
    Final {
        answer: String,
    },
    Messages {
        messages: Vec<Message>,
    },
    Error {
        kind: String,
        message: String,
        #[serde(default)]
        suggestion: Option<String>,
    },
}

impl WireEvent {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireEvent::Hello { .. } => "hello",
            WireEvent::Run { .. } => "run",
            WireEvent::ToolResult { .. } => "tool_result",
            WireEvent::GetMessages => "get_messages",
            WireEvent::ToolCall { .. } => "tool_call",
            WireEvent::Message { .. } => "message",
            WireEvent::Final { .. } => "final",
            WireEvent::Messages { .. } => "messages",
            WireEvent::Error { .. } => "error",
        }
    }
}

/// Encodes an event as a single newline-terminated line.
pub fn encode_wire_message(event: &WireEvent) -> String {
    let mut line = serde_json::to_string(event).expect("wire events always serialize");
    line.push('\n');
    line
}

/// Decodes one line. Malformed JSON, a missing or unknown `type`, and
/// invalid fields are protocol errors.
pub fn decode_wire_message(line: &str) -> Result<WireEvent, HarnessError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| HarnessError::protocol(format!("malformed wire line: {e}")))?;
    let Some(kind) = value.get("type").and_then(|t| t.as_str()) else {
        return Err(HarnessError::protocol("wire event without \"type\""));
    };
    let kind = kind.to_string();
    let event: WireEvent = serde_json::from_value(value)
        .map_err(|e| HarnessError::protocol(format!("invalid {kind:?} event: {e}")))?;
    if let WireEvent::Error { kind, .. } = &event {
        if kind != "agent" {
            return Err(HarnessError::protocol(format!(
                "error events must have kind \"agent\", got {kind:?}"
            )));
        }
    }
    if let WireEvent::Messages { messages } = &event {
        if let Some(problem) = messages.iter().find_map(|m| m.validate().err()) {
            return Err(HarnessError::protocol(format!("invalid message: {problem}")));
        }
    }
    Ok(event)
}
