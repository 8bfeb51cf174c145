use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::time::Duration;

use serde_json::json;
use url::Url;

use super::session::{drive_run, transport_error, LineChannel};
use super::wire::{decode_wire_message, encode_wire_message, WireEvent};
use super::{AgentAdapter, Message};
use crate::engine::TaskContext;
use crate::environment::{ToolDescriptor, ToolExecutor};
use crate::error::{ExecError, HarnessError};
use crate::Document;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

/// Remote agent reached over HTTP.
///
/// `POST <base>/run` is a full-duplex exchange: the request body is a
/// chunked stream of harness events (`run`, then one `tool_result` per tool
/// call) and the response body streams the agent's events back, one JSON
/// object per line. `GET <base>/messages` returns a `messages` event.
pub struct HttpAgent {
    name: String,
    base_url: Url,
    started: bool,
    history: Option<Vec<Message>>,
}

impl HttpAgent {
    pub fn new(name: impl Into<String>, base_url: &str) -> Result<Self, HarnessError> {
        let base_url = Url::parse(base_url)
            .map_err(|e| HarnessError::config(format!("invalid agent URL {base_url:?}: {e}")))?;
        if base_url.scheme() != "http" {
            return Err(HarnessError::config(format!(
                "streaming agent transport supports http:// only, got {}",
                base_url.scheme()
            )));
        }
        Ok(Self {
            name: name.into(),
            base_url,
            started: false,
            history: None,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{path}", self.base_url.as_str().trim_end_matches('/'))
    }

    fn connect(&self) -> Result<TcpStream, ExecError> {
        let addrs = self
            .base_url
            .socket_addrs(|| Some(80))
            .map_err(transport_error)?;
        let addr = addrs
            .first()
            .ok_or_else(|| transport_error("agent host did not resolve"))?;
        TcpStream::connect_timeout(addr, CONNECT_TIMEOUT).map_err(transport_error)
    }
}

fn write_chunk(stream: &mut TcpStream, data: &[u8]) -> io::Result<()> {
    write!(stream, "{:x}\r\n", data.len())?;
    stream.write_all(data)?;
    stream.write_all(b"\r\n")?;
    stream.flush()
}

enum BodyState {
    Head,
    Chunked(usize),
    Identity,
    Done,
}

/// Response reader: checks the status line and headers, then yields the
/// (possibly chunked) body.
struct ResponseBody<R> {
    inner: BufReader<R>,
    state: BodyState,
}

impl<R: Read> ResponseBody<R> {
    fn new(inner: R) -> Self {
        Self {
            inner: BufReader::new(inner),
            state: BodyState::Head,
        }
    }

    fn read_head(&mut self) -> io::Result<()> {
        let mut status = String::new();
        self.inner.read_line(&mut status)?;
        let code = status.split_whitespace().nth(1).unwrap_or_default();
        if code != "200" {
            return Err(io::Error::other(format!(
                "agent endpoint answered {:?}",
                status.trim()
            )));
        }
        let mut chunked = false;
        loop {
            let mut header = String::new();
            if self.inner.read_line(&mut header)? == 0 {
                return Err(io::ErrorKind::UnexpectedEof.into());
            }
            let header = header.trim();
            if header.is_empty() {
                break;
            }
            if let Some((k, v)) = header.split_once(':') {
                if k.trim().eq_ignore_ascii_case("transfer-encoding")
                    && v.trim().eq_ignore_ascii_case("chunked")
                {
                    chunked = true;
                }
            }
        }
        self.state = if chunked {
            BodyState::Chunked(0)
        } else {
            BodyState::Identity
        };
        Ok(())
    }
}

impl<R: Read> Read for ResponseBody<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            match self.state {
                BodyState::Head => self.read_head()?,
                BodyState::Identity => return self.inner.read(buf),
                BodyState::Done => return Ok(0),
                BodyState::Chunked(0) => {
                    let mut size = String::new();
                    if self.inner.read_line(&mut size)? == 0 {
                        self.state = BodyState::Done;
                        continue;
                    }
                    let size = size.trim();
                    if size.is_empty() {
                        continue; // CRLF after the previous chunk
                    }
                    let size = usize::from_str_radix(size.split(';').next().unwrap_or(""), 16)
                        .map_err(|_| io::Error::other("bad chunk size"))?;
                    self.state = if size == 0 {
                        BodyState::Done
                    } else {
                        BodyState::Chunked(size)
                    };
                }
                BodyState::Chunked(remaining) => {
                    let want = remaining.min(buf.len());
                    let n = self.inner.read(&mut buf[..want])?;
                    if n == 0 {
                        return Err(io::ErrorKind::UnexpectedEof.into());
                    }
                    self.state = BodyState::Chunked(remaining - n);
                    return Ok(n);
                }
            }
        }
    }
}

impl AgentAdapter for HttpAgent {
    fn run_agent(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError> {
        self.history = None;
        self.started = true;
        let mut stream = self.connect()?;
        let host = match self.base_url.port() {
            Some(p) => format!("{}:{p}", self.base_url.host_str().unwrap_or_default()),
            None => self.base_url.host_str().unwrap_or_default().to_string(),
        };
        let path = format!("{}/run", self.base_url.path().trim_end_matches('/'));
        let head = format!(
            "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/x-ndjson\r\n\
             Accept: application/x-ndjson\r\nTransfer-Encoding: chunked\r\n\r\n"
        );
        let run = WireEvent::Run {
            task_id: ctx.task_id().to_string(),
            seed: ctx.seed(),
            query: query.to_string(),
            tools: tools.to_vec(),
        };
        stream
            .write_all(head.as_bytes())
            .and_then(|_| write_chunk(&mut stream, encode_wire_message(&run).as_bytes()))
            .map_err(transport_error)?;

        let reader = stream.try_clone().map_err(transport_error)?;
        let lines = LineChannel::spawn(ResponseBody::new(reader));
        let mut send = |event: &WireEvent| write_chunk(&mut stream, encode_wire_message(event).as_bytes());
        let result = drive_run(ctx, &lines, &mut send, executor);
        let _ = stream.write_all(b"0\r\n\r\n");
        let _ = stream.shutdown(Shutdown::Both);
        result
    }

    fn get_messages(&mut self) -> Result<Vec<Message>, ExecError> {
        if let Some(history) = &self.history {
            return Ok(history.clone());
        }
        if !self.started {
            return Ok(Vec::new());
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        let body = agent
            .get(&self.endpoint("messages"))
            .call()
            .map_err(transport_error)?
            .body_mut()
            .read_to_string()
            .map_err(transport_error)?;
        match decode_wire_message(&body)? {
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
        doc.insert("adapter".into(), json!("http"));
        doc.insert("base_url".into(), json!(self.base_url.as_str()));
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_body_decoding() {
        let raw = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n5\r\nhello\r\n6\r\n world\r\n0\r\n\r\n";
        let mut body = ResponseBody::new(&raw[..]);
        let mut out = String::new();
        body.read_to_string(&mut out).unwrap();
        assert_eq!(out, "hello world");
    }

    #[test]
    fn identity_body_and_bad_status() {
        let raw = b"HTTP/1.1 200 OK\r\nContent-Type: x\r\n\r\nabc";
        let mut out = String::new();
        ResponseBody::new(&raw[..]).read_to_string(&mut out).unwrap();
        assert_eq!(out, "abc");
        let raw = b"HTTP/1.1 503 Busy\r\n\r\n";
        assert!(ResponseBody::new(&raw[..]).read_to_string(&mut out).is_err());
    }

    #[test]
    fn rejects_https() {
        assert!(HttpAgent::new("a", "https://example.com").is_err());
        assert!(HttpAgent::new("a", "not a url").is_err());
    }
}
