use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use harness_core::agent::wire::{decode_wire_message, encode_wire_message, WireEvent};
use harness_core::agent::{AgentAdapter, HttpAgent, Message, ToolCall};
use harness_core::engine::TaskContext;
use harness_core::environment::Environment;
use harness_core::{ErrorKind, ExecError, Task};
use serde_json::json;

fn read_chunk(reader: &mut BufReader<TcpStream>) -> Vec<u8> {
    let mut size = String::new();
    reader.read_line(&mut size).unwrap();
    let n = usize::from_str_radix(size.trim(), 16).unwrap();
    let mut data = vec![0; n + 2];
    reader.read_exact(&mut data).unwrap();
    data.truncate(n);
    data
}

fn write_chunk(stream: &mut TcpStream, event: &WireEvent) {
    let line = encode_wire_message(event);
    write!(stream, "{:x}\r\n{line}\r\n", line.len()).unwrap();
    stream.flush().unwrap();
}

/// A remote agent that calls `add(2, 3)` and answers with the result.
fn serve(listener: TcpListener, connections: usize, history: Arc<Mutex<Vec<Message>>>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for _ in 0..connections {
            let (stream, _) = listener.accept().unwrap();
            let mut writer = stream.try_clone().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut chunked = false;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                chunked |= header.to_ascii_lowercase().starts_with("transfer-encoding: chunked");
            }
            if request_line.starts_with("GET /messages") {
                let body = encode_wire_message(&WireEvent::Messages {
                    messages: history.lock().unwrap().clone(),
                });
                write!(
                    writer,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
                continue;
            }
            assert!(request_line.starts_with("POST /run"), "{request_line}");
            assert!(chunked);
            write!(writer, "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nTransfer-Encoding: chunked\r\n\r\n").unwrap();
            let run = decode_wire_message(std::str::from_utf8(&read_chunk(&mut reader)).unwrap()).unwrap();
            let WireEvent::Run { query, tools, .. } = run else {
                panic!("expected run, got {run:?}");
            };
            assert!(tools.iter().any(|t| t.name == "add"));
            let args = json!({"a": 2, "b": 3}).as_object().cloned().unwrap();
            write_chunk(
                &mut writer,
                &WireEvent::ToolCall {
                    call_id: "c1".into(),
                    name: "add".into(),
                    args: args.clone(),
                },
            );
            let result = match decode_wire_message(std::str::from_utf8(&read_chunk(&mut reader)).unwrap()).unwrap() {
                WireEvent::ToolResult { result, .. } => result,
                other => panic!("expected tool_result, got {other:?}"),
            };
            write_chunk(&mut writer, &WireEvent::Final { answer: result.clone() });
            write!(writer, "0\r\n\r\n").unwrap();
            assert!(read_chunk(&mut reader).is_empty(), "request body terminated");
            let call = ToolCall {
                call_id: "c1".into(),
                name: "add".into(),
                args,
            };
            history.lock().unwrap().extend([
                Message::user(query),
                Message::assistant("").with_tool_calls(vec![call]),
                Message::tool_result("c1", &result),
                Message::assistant(result),
            ]);
        }
    })
}

fn context() -> (Task, TaskContext) {
    let task = Task::new("remote", "add two and three");
    let ctx = TaskContext::for_task(&task, 0, 0);
    (task, ctx)
}

#[test]
fn duplex_run_and_messages() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let history = Arc::new(Mutex::new(Vec::new()));
    let server = serve(listener, 2, history.clone());

    let (task, ctx) = context();
    let mut env = Environment::key_value(&ctx, &task).unwrap();
    let mut agent = HttpAgent::new("remote", &url).unwrap();
    assert!(agent.get_messages().unwrap().is_empty());
    let tools = env.tools();
    let answer = agent.run_agent(&ctx, &task.query, &tools, &mut env).unwrap();
    assert_eq!(answer, "5");
    let messages = agent.get_messages().unwrap();
    assert_eq!(messages.len(), 4);
    assert_eq!(agent.get_messages().unwrap(), messages, "cached and stable");
    server.join().unwrap();
    assert_eq!(*history.lock().unwrap(), messages);
}

#[test]
fn unreachable_agent_is_environment_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (task, ctx) = context();
    let mut env = Environment::key_value(&ctx, &task).unwrap();
    let mut agent = HttpAgent::new("remote", &format!("http://127.0.0.1:{port}")).unwrap();
    match agent.run_agent(&ctx, "q", &[], &mut env) {
        Err(ExecError::Fault(e)) => assert_eq!(e.kind, ErrorKind::Environment),
        other => panic!("expected environment fault, got {other:?}"),
    }
}

#[test]
fn server_error_status_is_environment_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let server = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = [0u8; 1024];
        let _ = stream.read(&mut buf);
        stream
            .write_all(b"HTTP/1.1 503 Service Unavailable\r\nContent-Length: 0\r\n\r\n")
            .unwrap();
    });
    let (task, ctx) = context();
    let mut env = Environment::key_value(&ctx, &task).unwrap();
    let mut agent = HttpAgent::new("remote", &url).unwrap();
    match agent.run_agent(&ctx, "q", &[], &mut env) {
        Err(ExecError::Fault(e)) => assert_eq!(e.kind, ErrorKind::Environment, "{e}"),
        other => panic!("expected environment fault, got {other:?}"),
    }
    server.join().unwrap();
}
