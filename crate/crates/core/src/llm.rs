//! Model adapters: a unified chat interface with usage tracking, a
//! deterministic scripted model, and a generic OpenAI-compatible HTTP client.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::agent::{count_tokens, Message, Role, ToolCall, Usage};
use crate::engine::TaskContext;
use crate::environment::ToolDescriptor;
use crate::error::{ErrorKind, ExecError, HarnessError};
use crate::registry::{ComponentId, ComponentKind};
use crate::Document;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const API_KEY_VAR: &str = "HARNESS_MODEL_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    /// Always assistant role.
    pub message: Message,
    pub usage: Usage,
    pub latency_seconds: f64,
}

pub trait ModelAdapter: Send {
    fn chat(&mut self, messages: &[Message], tools: &[ToolDescriptor]) -> Result<ChatResponse, HarnessError>;

    fn name(&self) -> &str;

    /// Model name, sampling parameters and adapter kind.
    fn config(&self) -> Document;
}

/// Replays canned assistant messages in order. Token counts are
/// whitespace-separated units; latency is zero.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    name: String,
    responses: Vec<Message>,
    cursor: usize,
}

impl ScriptedModel {
    pub fn new(name: impl Into<String>, responses: Vec<Message>) -> Self {
        Self {
            name: name.into(),
            responses,
            cursor: 0,
        }
    }

    pub fn from_texts<S: AsRef<str>>(name: impl Into<String>, texts: &[S]) -> Self {
        Self::new(
            name,
            texts.iter().map(|t| Message::assistant(t.as_ref())).collect(),
        )
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.cursor
    }
}

impl ModelAdapter for ScriptedModel {
    fn chat(&mut self, messages: &[Message], _tools: &[ToolDescriptor]) -> Result<ChatResponse, HarnessError> {
        if messages.is_empty() {
            return Err(HarnessError::config("chat request without messages"));
        }
        let Some(canned) = self.responses.get(self.cursor) else {
            return Err(HarnessError::environment("scripted model exhausted"));
        };
        self.cursor += 1;
        let usage = Usage {
            input_tokens: messages.iter().map(|m| count_tokens(&m.content)).sum(),
            output_tokens: count_tokens(&canned.content),
        };
        let mut message = canned.clone();
        message.role = Role::Assistant;
        message.usage = Some(usage);
        Ok(ChatResponse {
            message,
            usage,
            latency_seconds: 0.0,
        })
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("adapter".into(), json!("scripted"));
        doc.insert("model".into(), json!(self.name));
        doc.insert("temperature".into(), json!(DEFAULT_TEMPERATURE));
        doc.insert("top_p".into(), json!(DEFAULT_TOP_P));
        doc.insert("responses".into(), json!(self.responses.len()));
        doc
    }
}

/// Client for an OpenAI-compatible `POST <base>/chat/completions` endpoint.
pub struct HttpChatModel {
    model: String,
    base_url: String,
    temperature: f64,
    top_p: f64,
    retries: u32,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatModel {
    /// Reads the bearer token from `HARNESS_MODEL_API_KEY` when set.
    pub fn new(model: impl Into<String>, base_url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            model: model.into(),
            base_url: base_url.into(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            retries: 1,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            agent,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }

    /// Additional attempts after a transport failure or 5xx/429 answer.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn request_body(&self, messages: &[Message], tools: &[ToolDescriptor]) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": messages.iter().map(openai_message).collect::<Vec<_>>(),
            "temperature": self.temperature,
            "top_p": self.top_p,
        });
        if !tools.is_empty() {
            body["tools"] = tools.iter().map(openai_tool).collect();
        }
        body
    }

    fn post(&self, body: &Value) -> Result<(u16, String), HarnessError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send(body.to_string())
            .map_err(|e| HarnessError::environment(format!("model endpoint unreachable: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| HarnessError::environment(format!("model response unreadable: {e}")))?;
        Ok((status, text))
    }
}

fn openai_message(message: &Message) -> Value {
    let mut out = json!({"role": message.role, "content": message.content});
    if let Some(calls) = &message.tool_calls {
        out["tool_calls"] = calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.call_id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": Value::Object(c.args.clone()).to_string()},
                })
            })
            .collect();
    }
    if let Some(id) = &message.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

fn openai_tool(tool: &ToolDescriptor) -> Value {
    let properties: Document = tool
        .parameters
        .iter()
        .map(|p| (p.name.clone(), json!({"type": p.param_type})))
        .collect();
    let required: Vec<&str> = tool
        .parameters
        .iter()
        .filter(|p| p.required)
        .map(|p| p.name.as_str())
        .collect();
    json!({
        "type": "function",
        "function": {
            "name": tool.name,
            "description": tool.description,
            "parameters": {"type": "object", "properties": properties, "required": required},
        },
    })
}

fn parse_completion(text: &str) -> Result<(Message, Usage), HarnessError> {
    let bad = |what: &str| HarnessError::environment(format!("unexpected model response: {what}"));
    let value: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| bad("no choices[0].message"))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let mut out = Message::assistant(content);
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        let mut parsed = Vec::with_capacity(calls.len());
        for call in calls {
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("tool call without function name"))?;
            let args = match call.pointer("/function/arguments") {
                Some(Value::String(s)) if !s.trim().is_empty() => {
                    serde_json::from_str::<Document>(s).map_err(|e| bad(&format!("tool arguments: {e}")))?
                }
                Some(Value::Object(map)) => map.clone(),
                _ => Document::new(),
            };
            parsed.push(ToolCall {
                call_id: call
                    .get("id")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                name: name.to_string(),
                args,
            });
        }
        if !parsed.is_empty() {
            out.tool_calls = Some(parsed);
        }
    }
    let tokens = |key: &str| value.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    let usage = Usage {
        input_tokens: tokens("prompt_tokens"),
        output_tokens: tokens("completion_tokens"),
    };
    out.usage = Some(usage);
    Ok((out, usage))
}

impl ModelAdapter for HttpChatModel {
    fn chat(&mut self, messages: &[Message], tools: &[ToolDescriptor]) -> Result<ChatResponse, HarnessError> {
        if messages.is_empty() {
            return Err(HarnessError::config("chat request without messages"));
        }
        let body = self.request_body(messages, tools);
        let started = Instant::now();
        let mut attempt = 0;
        let text = loop {
            let outcome = self.post(&body);
            let retryable = match &outcome {
                Err(_) => true,
                Ok((status, _)) => *status == 429 || *status >= 500,
            };
            if retryable && attempt < self.retries {
                attempt += 1;
                log::warn!("model call failed, retrying ({attempt}/{})", self.retries);
                continue;
            }
            match outcome? {
                (200..=299, text) => break text,
                (status, text) => {
                    return Err(HarnessError::environment(format!(
                        "model endpoint answered {status}: {}",
                        text.chars().take(200).collect::<String>()
                    )))
                }
            }
        };
        let (message, usage) = parse_completion(&text)?;
        Ok(ChatResponse {
            message,
            usage,
            latency_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn name(&self) -> &str {
        &self.model
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("adapter".into(), json!("http"));
        doc.insert("model".into(), json!(self.model));
        doc.insert("base_url".into(), json!(self.base_url));
        doc.insert("temperature".into(), json!(self.temperature));
        doc.insert("top_p".into(), json!(self.top_p));
        doc
    }
}

/// A registered model. Every chat call is logged as a `model_call` event.
pub struct TracedModel {
    id: ComponentId,
    model: Box<dyn ModelAdapter>,
}

impl TracedModel {
    pub fn register(ctx: &TaskContext, model: Box<dyn ModelAdapter>) -> Self {
        let id = ctx.register(ComponentKind::Model, model.name(), model.config());
        Self { id, model }
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn chat(
        &mut self,
        ctx: &TaskContext,
        messages: &[Message],
        tools: &[ToolDescriptor],
    ) -> Result<ChatResponse, ExecError> {
        ctx.checkpoint()?;
        match self.model.chat(messages, tools) {
            Ok(response) => {
                let mut payload = Document::new();
                payload.insert("input".into(), json!(messages));
                payload.insert("output".into(), json!(response.message));
                payload.insert("usage".into(), json!(response.usage));
                payload.insert("latency_seconds".into(), json!(response.latency_seconds));
                ctx.emit(&self.id, "model_call", payload)?;
                Ok(response)
            }
            Err(e) => {
                let mut payload = Document::new();
                payload.insert("input".into(), json!(messages));
                payload.insert("error".into(), json!(e));
                ctx.emit(&self.id, "model_error", payload)?;
                Err(e.with_component(&self.id).into())
            }
        }
    }
}

/// Builds a model from a declarative spec, as used by run configuration
/// files: `{"kind": "scripted", "responses": [...]}` or
/// `{"kind": "http", "model": ..., "base_url": ...}`.
pub fn model_from_spec(spec: &ModelSpec) -> Result<Box<dyn ModelAdapter>, HarnessError> {
    match spec {
        ModelSpec::Scripted { name, responses } => Ok(Box::new(ScriptedModel::from_texts(
            name.as_deref().unwrap_or("scripted"),
            responses,
        ))),
        ModelSpec::Http {
            model,
            base_url,
            temperature,
            top_p,
            retries,
        } => {
            if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
                return Err(HarnessError::new(
                    ErrorKind::Config,
                    format!("model base_url must be http(s): {base_url:?}"),
                ));
            }
            Ok(Box::new(
                HttpChatModel::new(model, base_url)
                    .with_sampling(
                        temperature.unwrap_or(DEFAULT_TEMPERATURE),
                        top_p.unwrap_or(DEFAULT_TOP_P),
                    )
                    .with_retries(retries.unwrap_or(1)),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Scripted {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        responses: Vec<String>,
    },
    Http {
        model: String,
        base_url: String,
        #[serde(default)]
        temperature: Option<f64>,
        #[serde(default)]
        top_p: Option<f64>,
        #[serde(default)]
        retries: Option<u32>,
    },
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::environment::ParamType;
    use crate::model::Task;

    #[test]
    fn scripted_counts_whitespace_tokens() {
        let mut m = ScriptedModel::from_texts("s", &["hello world"]);
        let r = m.chat(&[Message::user("hi there friend")], &[]).unwrap();
        assert_eq!(r.message.content, "hello world");
        assert_eq!(r.message.role, Role::Assistant);
        assert_eq!(r.usage.output_tokens, 2);
        assert_eq!(r.usage.input_tokens, 3);
        assert_eq!(r.latency_seconds, 0.0);
        let err = m.chat(&[Message::user("again")], &[]).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Environment);
        assert_eq!(err.message, "scripted model exhausted");
        assert_eq!(m.chat(&[], &[]).unwrap_err().kind, ErrorKind::Config);
    }

    #[test]
    fn traced_model_logs_calls() {
        let task = Task::new("t", "q");
        let ctx = TaskContext::for_task(&task, 0, 0);
        let mut m = TracedModel::register(&ctx, Box::new(ScriptedModel::from_texts("s", &["a b c"])));
        m.chat(&ctx, &[Message::user("x y")], &[]).unwrap();
        assert!(m.chat(&ctx, &[Message::user("x")], &[]).is_err());
        let collected = ctx.registry().collect();
        let events = &collected.traces[m.id()];
        assert_eq!(events[0].event_kind, "model_call");
        assert_eq!(events[0].payload["usage"], json!({"input_tokens": 2, "output_tokens": 3}));
        assert_eq!(events[1].event_kind, "model_error");
        assert_eq!(collected.config[m.id()]["temperature"], json!(1.0));
    }

    fn one_shot_server(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            format!("{head}\n{}", String::from_utf8(request).unwrap())
        });
        (url, handle)
    }

    #[test]
    fn http_model_maps_openai_reply() {
        let (url, server) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"","tool_calls":[
                {"id":"call_1","type":"function","function":{"name":"add","arguments":"{\"a\":2,\"b\":3}"}}]}}],
               "usage":{"prompt_tokens":11,"completion_tokens":7}}"#,
        );
        let mut model = HttpChatModel::new("gpt-test", &url)
            .with_retries(0)
            .with_api_key(Some("sekrit".into()));
        let tools = [ToolDescriptor::new("add", "Add").param("a", ParamType::Integer, true)];
        let response = model.chat(&[Message::user("2+3?")], &tools).unwrap();
        let calls = response.message.tool_calls.unwrap();
        assert_eq!(calls[0].name, "add");
        assert_eq!(calls[0].args["b"], json!(3));
        assert_eq!(response.usage.input_tokens, 11);
        assert_eq!(response.usage.output_tokens, 7);

        let request = server.join().unwrap();
        assert!(request.starts_with("POST /chat/completions"));
        assert!(request.contains("Bearer sekrit"));
        let body: Value = serde_json::from_str(request.split('\n').next_back().unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["top_p"], 1.0);
        assert_eq!(body["tools"][0]["function"]["parameters"]["required"], json!(["a"]));
    }

    #[test]
    fn http_model_errors_are_environmental() {
        let (url, server) = one_shot_server("400 Bad Request", r#"{"error":"nope"}"#);
        let mut model = HttpChatModel::new("m", &url).with_retries(0);
        let err = model.chat(&[Message::user("hi")], &[]).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Environment);
        server.join().unwrap();

        let mut dead = HttpChatModel::new("m", "http://127.0.0.1:9").with_retries(0);
        assert_eq!(dead.chat(&[Message::user("hi")], &[]).unwrap_err().kind, ErrorKind::Environment);
    }
}
