//! Transport-independent half of the wire protocol: a background line
//! reader and the harness side of a `run` exchange.

use std::io::{BufRead, BufReader, Read};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::wire::{decode_wire_message, WireEvent, PROTOCOL_VERSION};
use super::ToolCall;
use crate::engine::TaskContext;
use crate::environment::{ToolExecutor, ToolStatus};
use crate::error::{ErrorKind, ExecError, HarnessError};

const POLL: Duration = Duration::from_millis(20);

pub(crate) enum Recv {
    Line(String),
    Closed,
    TimedOut,
}

/// Reads lines on a background thread so the harness can keep polling its
/// deadline while the agent works.
pub(crate) struct LineChannel {
    rx: Receiver<std::io::Result<String>>,
    _reader: JoinHandle<()>,
}

impl LineChannel {
    pub fn spawn<R: Read + Send + 'static>(source: R) -> Self {
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut reader = BufReader::new(source);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self { rx, _reader: reader }
    }

    /// Waits for the next line, checkpointing while idle.
    pub fn recv(&self, ctx: Option<&TaskContext>, limit: Option<Duration>) -> Result<Recv, ExecError> {
        let started = Instant::now();
        loop {
            match self.rx.recv_timeout(POLL) {
                Ok(Ok(line)) => return Ok(Recv::Line(line)),
                Ok(Err(e)) => {
                    return Err(HarnessError::environment(format!("agent transport read failed: {e}")).into())
                }
                Err(RecvTimeoutError::Disconnected) => return Ok(Recv::Closed),
                Err(RecvTimeoutError::Timeout) => {
                    if let Some(ctx) = ctx {
                        ctx.checkpoint()?;
                    }
                    if limit.is_some_and(|l| started.elapsed() >= l) {
                        return Ok(Recv::TimedOut);
                    }
                }
            }
        }
    }
}

pub(crate) fn transport_error(what: impl std::fmt::Display) -> ExecError {
    HarnessError::environment(format!("agent transport failure: {what}")).into()
}

/// Reads and checks the `hello` line.
pub(crate) fn handshake(lines: &LineChannel, ctx: Option<&TaskContext>, limit: Duration) -> Result<(), ExecError> {
    let line = match lines.recv(ctx, Some(limit))? {
        Recv::Line(l) => l,
        Recv::Closed => return Err(transport_error("agent exited before handshake")),
        Recv::TimedOut => return Err(transport_error("no handshake from agent")),
    };
    match decode_wire_message(&line)? {
        WireEvent::Hello { protocol_version } if protocol_version == PROTOCOL_VERSION => Ok(()),
        WireEvent::Hello { .. } => Err(HarnessError::environment("unsupported protocol version").into()),
        other => Err(HarnessError::protocol(format!(
            "expected hello, got {:?} event",
            other.type_name()
        ))
        .into()),
    }
}

/// Harness side of one `run`: serves tool calls until the agent answers.
pub(crate) fn drive_run(
    ctx: &TaskContext,
    lines: &LineChannel,
    send: &mut dyn FnMut(&WireEvent) -> std::io::Result<()>,
    executor: &mut dyn ToolExecutor,
) -> Result<String, ExecError> {
    loop {
        let line = match lines.recv(Some(ctx), None)? {
            Recv::Line(l) => l,
            Recv::Closed | Recv::TimedOut => {
                return Err(transport_error("agent exited before completing the run"))
            }
        };
        match decode_wire_message(&line)? {
            WireEvent::ToolCall {
                call_id,
                name,
                args,
            } => {
                ctx.agent_step()?;
                let call = ToolCall {
                    call_id,
                    name,
                    args,
                };
                let (status, result) = match executor.execute(ctx, &call) {
                    Ok(inv) => (inv.status, inv.result),
                    Err(ExecError::Fault(e)) if e.kind == ErrorKind::Agent => (
                        ToolStatus::ToolError,
                        match e.suggestion {
                            Some(s) => format!("error: {} ({s})", e.message),
                            None => format!("error: {}", e.message),
                        },
                    ),
                    Err(e) => return Err(e),
                };
                send(&WireEvent::ToolResult {
                    call_id: call.call_id,
                    status,
                    result,
                })
                .map_err(transport_error)?;
            }
            WireEvent::Message { role, content } => {
                log::debug!("{}: streamed {role} message: {content}", ctx.task_id());
            }
            WireEvent::Final { answer } => {
                ctx.agent_step()?;
                return Ok(answer);
            }
            WireEvent::Error {
                message,
                suggestion,
                ..
            } => {
                let mut err = HarnessError::agent(message);
                err.suggestion = suggestion;
                return Err(err.into());
            }
            other => {
                return Err(HarnessError::protocol(format!(
                    "unexpected {:?} event during run",
                    other.type_name()
                ))
                .into())
            }
        }
    }
}
