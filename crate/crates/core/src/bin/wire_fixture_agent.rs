//! Reference external agent speaking the stdio wire protocol.
//!
//! Usage: `wire-fixture-agent <mode> [script.json]`. Modes:
//! `echo`, `tools`, `history`, `die`, `crash`, `malformed`, `bad-version`,
//! `error`, `killme`, `script`. A malformed or unexpected line from the
//! harness ends the process with exit code 3.

use std::io::{self, BufRead, Write};
use std::process::exit;

use harness_core::agent::wire::{decode_wire_message, encode_wire_message, WireEvent, PROTOCOL_VERSION};
use harness_core::agent::{AgentScript, Message, ScriptAction, ScriptBook, ToolCall, AGENT_NAME_VAR};
use harness_core::Document;
use serde_json::json;

const PROTOCOL_VIOLATION: i32 = 3;

struct Fixture {
    mode: String,
    book: Option<ScriptBook>,
    name: String,
    history: Vec<Message>,
    calls: u32,
    input: io::Lines<io::StdinLock<'static>>,
    output: io::Stdout,
}

impl Fixture {
    fn send(&mut self, event: &WireEvent) {
        let mut out = self.output.lock();
        if out.write_all(encode_wire_message(event).as_bytes()).and_then(|_| out.flush()).is_err() {
            exit(0);
        }
    }

    fn read(&mut self) -> Option<WireEvent> {
        let line = match self.input.next() {
            Some(Ok(line)) => line,
            _ => return None,
        };
        match decode_wire_message(&line) {
            Ok(event) => Some(event),
            Err(e) => {
                eprintln!("protocol violation: {e}");
                exit(PROTOCOL_VIOLATION);
            }
        }
    }

    fn call_tool(&mut self, name: &str, args: Document) -> String {
        self.calls += 1;
        let call = ToolCall {
            call_id: format!("c{}", self.calls),
            name: name.to_string(),
            args,
        };
        let rendered = format!("{}({})", call.name, serde_json::Value::Object(call.args.clone()));
        self.history
            .push(Message::assistant(rendered).with_tool_calls(vec![call.clone()]));
        self.send(&WireEvent::ToolCall {
            call_id: call.call_id.clone(),
            name: call.name,
            args: call.args,
        });
        match self.read() {
            Some(WireEvent::ToolResult { call_id, result, .. }) if call_id == call.call_id => {
                self.history.push(Message::tool_result(&call_id, &result));
                result
            }
            Some(other) => {
                eprintln!("expected tool_result for {}, got {}", call.call_id, other.type_name());
                exit(PROTOCOL_VIOLATION);
            }
            None => exit(0),
        }
    }

    fn finish(&mut self, answer: &str) {
        self.history.push(Message::assistant(answer));
        self.send(&WireEvent::Final {
            answer: answer.to_string(),
        });
    }

    fn script_for(&self, task_id: &str) -> Option<Vec<ScriptAction>> {
        let scripts: &Vec<AgentScript> = self.book.as_ref()?.0.get(task_id)?;
        scripts
            .iter()
            .find(|s| s.name == self.name)
            .or_else(|| (scripts.len() == 1).then(|| &scripts[0]))
            .map(|s| s.script.clone())
    }

    fn run(&mut self, task_id: &str, query: &str) {
        self.history.push(Message::user(query));
        match self.mode.as_str() {
            "echo" => self.finish(query),
            "tools" => {
                let args = json!({"a": 2, "b": 3}).as_object().cloned().unwrap_or_default();
                let sum = self.call_tool("add", args);
                self.finish(&sum);
            }
            "history" => {
                self.history.push(Message::assistant("thinking"));
                self.send(&WireEvent::Message {
                    role: harness_core::agent::Role::Assistant,
                    content: "thinking".into(),
                });
                self.finish("done");
            }
            "die" => exit(0),
            "crash" => {
                let args = json!({"a": 1, "b": 1}).as_object().cloned().unwrap_or_default();
                self.call_tool("add", args);
                std::process::abort();
            }
            "malformed" => {
                let mut out = self.output.lock();
                let _ = out.write_all(b"this is not json\n").and_then(|_| out.flush());
            }
            "error" => self.send(&WireEvent::Error {
                kind: "agent".into(),
                message: "cannot comply".into(),
                suggestion: Some("ask a smaller question".into()),
            }),
            "killme" => {
                let args = json!({"pid": std::process::id()}).as_object().cloned().unwrap_or_default();
                self.call_tool("kill", args);
                self.finish("survived");
            }
            "script" => self.run_script(task_id),
            other => {
                eprintln!("unknown mode {other:?}");
                exit(2);
            }
        }
    }

    fn run_script(&mut self, task_id: &str) {
        let Some(script) = self.script_for(task_id) else {
            self.send(&WireEvent::Error {
                kind: "agent".into(),
                message: format!("no script for task {task_id}"),
                suggestion: None,
            });
            return;
        };
        for action in script {
            match action {
                ScriptAction::ToolCall { name, args } => {
                    self.call_tool(&name, args);
                }
                ScriptAction::Final { answer } => return self.finish(&answer),
                ScriptAction::Fail {
                    message, suggestion, ..
                } => {
                    return self.send(&WireEvent::Error {
                        kind: "agent".into(),
                        message,
                        suggestion,
                    })
                }
                ScriptAction::Sleep { millis, .. } => {
                    std::thread::sleep(std::time::Duration::from_millis(millis))
                }
            }
        }
        self.send(&WireEvent::Error {
            kind: "agent".into(),
            message: "script ended without a final answer".into(),
            suggestion: None,
        });
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().cloned().unwrap_or_else(|| "echo".into());
    let book = match (mode.as_str(), args.get(1)) {
        ("script", Some(path)) => match ScriptBook::load(std::path::Path::new(path)) {
            Ok(book) => Some(book),
            Err(e) => {
                eprintln!("{e}");
                exit(2);
            }
        },
        ("script", None) => {
            eprintln!("script mode needs a script file");
            exit(2);
        }
        _ => None,
    };
    let mut fixture = Fixture {
        name: std::env::var(AGENT_NAME_VAR).unwrap_or_default(),
        mode,
        book,
        history: Vec::new(),
        calls: 0,
        input: io::stdin().lock().lines(),
        output: io::stdout(),
    };
    let version = if fixture.mode == "bad-version" {
        PROTOCOL_VERSION + 1
    } else {
        PROTOCOL_VERSION
    };
    fixture.send(&WireEvent::Hello {
        protocol_version: version,
    });
    while let Some(event) = fixture.read() {
        match event {
            WireEvent::Run { task_id, query, .. } => fixture.run(&task_id, &query),
            WireEvent::GetMessages => {
                let messages = fixture.history.clone();
                fixture.send(&WireEvent::Messages { messages });
            }
            other => {
                eprintln!("unexpected {} event", other.type_name());
                exit(PROTOCOL_VIOLATION);
            }
        }
    }
}
