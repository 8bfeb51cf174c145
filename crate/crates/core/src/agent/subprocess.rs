use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::time::Duration;

use serde_json::json;

use super::session::{drive_run, handshake, transport_error, LineChannel, Recv};
use super::wire::{decode_wire_message, encode_wire_message, WireEvent};
use super::{AgentAdapter, Message};
use crate::engine::TaskContext;
use crate::environment::{ToolDescriptor, ToolExecutor};
use crate::error::{ExecError, HarnessError};
use crate::Document;

/// Set on the child to the adapter's name, so one program can play
/// several roles.
pub const AGENT_NAME_VAR: &str = "HARNESS_AGENT_NAME";

const HANDSHAKE_LIMIT: Duration = Duration::from_secs(10);
const MESSAGES_LIMIT: Duration = Duration::from_secs(10);

struct ChildAgent {
    child: Child,
    stdin: ChildStdin,
    lines: LineChannel,
}

impl ChildAgent {
    fn send(&mut self, event: &WireEvent) -> std::io::Result<()> {
        self.stdin.write_all(encode_wire_message(event).as_bytes())?;
        self.stdin.flush()
    }
}

impl Drop for ChildAgent {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Agent living in a child process, spoken to over stdin/stdout.
///
/// The process is started lazily on the first run and owned exclusively by
/// this adapter. Transport failures are environment errors; a malformed
/// line from the agent is a protocol error.
pub struct SubprocessAgent {
    name: String,
    command: String,
    args: Vec<String>,
    child: Option<ChildAgent>,
    started: bool,
    history: Option<Vec<Message>>,
}

impl SubprocessAgent {
    pub fn new(name: impl Into<String>, command: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            name: name.into(),
            command: command.into(),
            args,
            child: None,
            started: false,
            history: None,
        }
    }

    fn spawn(&mut self, ctx: &TaskContext) -> Result<(), ExecError> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .env(AGENT_NAME_VAR, &self.name)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| transport_error(format!("cannot start {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        if let Some(stderr) = child.stderr.take() {
            let name = self.name.clone();
            std::thread::spawn(move || {
                for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                    log::debug!("agent {name} stderr: {line}");
                }
            });
        }
        let agent = ChildAgent {
            child,
            stdin,
            lines: LineChannel::spawn(stdout),
        };
        handshake(&agent.lines, Some(ctx), HANDSHAKE_LIMIT)?;
        self.child = Some(agent);
        self.started = true;
        Ok(())
    }

    /// Kills the child process, as an operator or a crash would.
    pub fn kill(&mut self) {
        if let Some(agent) = self.child.as_mut() {
            let _ = agent.child.kill();
        }
    }

    pub fn process_id(&self) -> Option<u32> {
        self.child.as_ref().map(|c| c.child.id())
    }
}

impl AgentAdapter for SubprocessAgent {
    fn run_agent(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError> {
        self.history = None;
        if self.child.is_none() {
            self.spawn(ctx)?;
        }
        let agent = self.child.as_mut().expect("spawned above");
        agent
            .send(&WireEvent::Run {
                task_id: ctx.task_id().to_string(),
                seed: ctx.seed(),
                query: query.to_string(),
                tools: tools.to_vec(),
            })
            .map_err(transport_error)?;
        let ChildAgent { stdin, lines, .. } = agent;
        let mut send = |event: &WireEvent| -> std::io::Result<()> {
            stdin.write_all(encode_wire_message(event).as_bytes())?;
            stdin.flush()
        };
        let result = drive_run(ctx, lines, &mut send, executor);
        if matches!(result, Err(ExecError::Timeout | ExecError::Cancelled)) {
            // an interrupted exchange leaves the stream mid-run
            self.child = None;
        }
        result
    }

    fn get_messages(&mut self) -> Result<Vec<Message>, ExecError> {
        if let Some(history) = &self.history {
            return Ok(history.clone());
        }
        if !self.started {
            return Ok(Vec::new());
        }
        let Some(agent) = self.child.as_mut() else {
            return Err(transport_error("agent process is gone"));
        };
        agent
            .send(&WireEvent::GetMessages)
            .map_err(transport_error)?;
        let line = match agent.lines.recv(None, Some(MESSAGES_LIMIT))? {
            Recv::Line(l) => l,
            Recv::Closed => return Err(transport_error("agent exited before sending messages")),
            Recv::TimedOut => return Err(transport_error("agent did not answer get_messages")),
        };
        match decode_wire_message(&line)? {
            WireEvent::Messages { messages } => {
                self.history = Some(messages.clone());
                Ok(messages)
            }
            other => Err(HarnessError::protocol(format!(
                "expected messages, got {:?} event",
                other.type_name()
            ))
            .into()),
        }
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("adapter".into(), json!("subprocess"));
        doc.insert("command".into(), json!(self.command));
        doc.insert("args".into(), json!(self.args));
        doc
    }
}
