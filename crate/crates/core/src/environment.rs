//! Stateful task environments and their tools.
//!
//! An [`Environment`] owns a set of tools and logs every invocation as a
//! `tool_invocation` trace event, whether it succeeds or not. The built-in
//! key-value environment backs the reference benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::ToolCall;
use crate::engine::TaskContext;
use crate::error::{ExecError, HarnessError};
use crate::model::Task;
use crate::registry::{ComponentId, ComponentKind, ComponentRegistry};
use crate::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
}

impl ParamType {
    fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolParameter {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
}

/// Tool advertisement as sent to agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParameter>,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            parameters: Vec::new(),
        }
    }

    pub fn param(mut self, name: &str, param_type: ParamType, required: bool) -> Self {
        self.parameters.push(ToolParameter {
            name: name.to_string(),
            param_type,
            required,
        });
        self
    }

    fn signature(&self) -> String {
        let params: Vec<String> = self
            .parameters
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "?" };
                format!("{}{opt}: {}", p.name, p.param_type.as_str())
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }

    /// Strict argument check: no coercion, no unknown arguments.
    pub fn check_args(&self, args: &Document) -> Result<(), String> {
        for p in &self.parameters {
            match args.get(&p.name) {
                None if p.required => return Err(format!("missing required argument {:?}", p.name)),
                Some(v) if !p.param_type.accepts(v) => {
                    return Err(format!(
                        "argument {:?} must be of type {}",
                        p.name,
                        p.param_type.as_str()
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = args
            .keys()
            .find(|k| !self.parameters.iter().any(|p| &p.name == *k))
        {
            return Err(format!("unknown argument {extra:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    ToolError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: String,
    pub args: Document,
    pub result: String,
    pub status: ToolStatus,
    pub call_id: String,
}

/// How a tool call can fail.
#[derive(Debug)]
pub enum ToolFailure {
    /// Returned to the agent as an error-bearing result; the run continues.
    Error(String),
    /// Ends the execution (user simulator failure, timeout, ...).
    Fault(ExecError),
}

impl From<ExecError> for ToolFailure {
    fn from(e: ExecError) -> Self {
        ToolFailure::Fault(e)
    }
}

pub trait Tool: Send {
    fn descriptor(&self) -> ToolDescriptor;

    fn call(&mut self, ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure>;

    fn config(&self) -> Document {
        Document::new()
    }
}

struct BoundTool {
    id: ComponentId,
    descriptor: ToolDescriptor,
    tool: Box<dyn Tool>,
}

/// Executes tool calls on behalf of an agent.
pub trait ToolExecutor {
    fn execute(&mut self, ctx: &TaskContext, call: &ToolCall) -> Result<ToolInvocation, ExecError>;
}

pub struct Environment {
    id: ComponentId,
    registry: Arc<ComponentRegistry>,
    tools: BTreeMap<String, BoundTool>,
    state: Option<SharedKvState>,
    calls: u64,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("id", &self.id)
            .field("tools", &self.tools.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Environment {
    pub fn new(ctx: &TaskContext, name: &str, config: Document) -> Self {
        let id = ctx.register(ComponentKind::Environment, name, config);
        Self {
            id,
            registry: ctx.registry().clone(),
            tools: BTreeMap::new(),
            state: None,
            calls: 0,
        }
    }

    /// The built-in key-value environment: state seeded from the task,
    /// tools `get`, `set` and `add`.
    pub fn key_value(ctx: &TaskContext, task: &Task) -> Result<Self, HarnessError> {
        let state = setup_state(task)?;
        let mut config = Document::new();
        config.insert("keys".into(), json!(state.store.len()));
        let mut env = Self::new(ctx, "kv", config);
        let shared = Arc::new(Mutex::new(state));
        for tool in create_tools(&shared) {
            env.add_tool(tool)?;
        }
        env.state = Some(shared);
        Ok(env)
    }

    pub fn id(&self) -> &ComponentId {
        &self.id
    }

    pub fn add_tool(&mut self, tool: Box<dyn Tool>) -> Result<ComponentId, HarnessError> {
        let descriptor = tool.descriptor();
        if self.tools.contains_key(&descriptor.name) {
            return Err(HarnessError::config(format!(
                "tool {:?} already bound",
                descriptor.name
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = descriptor.parameters.iter().find(|p| !seen.insert(&p.name)) {
            return Err(HarnessError::config(format!(
                "tool {:?} declares parameter {:?} twice",
                descriptor.name, dup.name
            )));
        }
        let id = self
            .registry
            .register(ComponentKind::Tool, &descriptor.name, tool.config());
        self.tools.insert(
            descriptor.name.clone(),
            BoundTool {
                id: id.clone(),
                descriptor,
                tool,
            },
        );
        Ok(id)
    }

    pub fn has_tool(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Advertised tools, sorted by name.
    pub fn tools(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|t| t.descriptor.clone()).collect()
    }

    pub fn state(&self) -> Option<&SharedKvState> {
        self.state.as_ref()
    }

    /// Final state as a document, for state-based evaluation.
    pub fn final_state(&self) -> Document {
        self.state
            .as_ref()
            .map(|s| {
                let s = s.lock().unwrap_or_else(|p| p.into_inner());
                s.store
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn log(&self, component: &ComponentId, inv: &ToolInvocation, extra: Option<(&str, Value)>) {
        let mut payload = Document::new();
        payload.insert("tool".into(), json!(inv.tool));
        payload.insert("args".into(), Value::Object(inv.args.clone()));
        payload.insert("result".into(), json!(inv.result));
        payload.insert("status".into(), json!(inv.status));
        payload.insert("call_id".into(), json!(inv.call_id));
        if let Some((k, v)) = extra {
            payload.insert(k.into(), v);
        }
        if let Err(e) = self.registry.emit(component, "tool_invocation", payload) {
            log::error!("failed to log tool invocation: {e}");
        }
    }

    /// Executes a tool by name. Unknown tools and argument type violations
    /// are agent errors carrying a corrective suggestion; tool-internal
    /// failures come back as `tool_error` invocations.
    pub fn invoke_tool(
        &mut self,
        ctx: &TaskContext,
        name: &str,
        args: &Document,
        call_id: Option<&str>,
    ) -> Result<ToolInvocation, ExecError> {
        ctx.checkpoint()?;
        self.calls += 1;
        let call_id = call_id
            .map(str::to_string)
            .unwrap_or_else(|| format!("call-{}", self.calls));

        let rejected = |env: &Self, component: &ComponentId, err: HarnessError| {
            let inv = ToolInvocation {
                tool: name.to_string(),
                args: args.clone(),
                result: format!("{}: {}", err.message, err.suggestion.as_deref().unwrap_or("")),
                status: ToolStatus::ToolError,
                call_id: call_id.clone(),
            };
            env.log(component, &inv, Some(("error_kind", json!("agent"))));
            ctx.notify_tool_invoked(&inv);
            Err(ExecError::Fault(err.with_component(component)))
        };

        let Some(bound) = self.tools.get(name) else {
            let names: Vec<&str> = self.tools.keys().map(String::as_str).collect();
            let err = HarnessError::agent(format!("unknown tool {name:?}"))
                .with_suggestion(format!("available tools: {}", names.join(", ")));
            let env_id = self.id.clone();
            return rejected(self, &env_id, err);
        };
        if let Err(problem) = bound.descriptor.check_args(args) {
            let err = HarnessError::agent(format!("invalid arguments for {name}: {problem}"))
                .with_suggestion(format!("call {}", bound.descriptor.signature()));
            let tool_id = bound.id.clone();
            return rejected(self, &tool_id, err);
        }

        let bound = self.tools.get_mut(name).expect("checked above");
        let outcome = bound.tool.call(ctx, args);
        let tool_id = bound.id.clone();
        let (result, status, fault) = match outcome {
            Ok(result) => (result, ToolStatus::Ok, None),
            Err(ToolFailure::Error(msg)) => (msg, ToolStatus::ToolError, None),
            Err(ToolFailure::Fault(e)) => (e.to_string(), ToolStatus::ToolError, Some(e)),
        };
        let inv = ToolInvocation {
            tool: name.to_string(),
            args: args.clone(),
            result,
            status,
            call_id,
        };
        self.log(&tool_id, &inv, None);
        ctx.notify_tool_invoked(&inv);
        match fault {
            Some(e) => Err(e),
            None => Ok(inv),
        }
    }
}

impl ToolExecutor for Environment {
    fn execute(&mut self, ctx: &TaskContext, call: &ToolCall) -> Result<ToolInvocation, ExecError> {
        self.invoke_tool(ctx, &call.name, &call.args, Some(&call.call_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub key: String,
    pub old: Option<String>,
    pub new: String,
}

/// State of the built-in key-value environment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvState {
    pub store: BTreeMap<String, String>,
    pub mutation_log: Vec<Mutation>,
}

pub type SharedKvState = Arc<Mutex<KvState>>;

impl KvState {
    pub fn set(&mut self, key: &str, value: &str) {
        let old = self.store.insert(key.to_string(), value.to_string());
        self.mutation_log.push(Mutation {
            key: key.to_string(),
            old,
            new: value.to_string(),
        });
    }

    /// Applies a mutation log over an initial store.
    pub fn replay(initial: &BTreeMap<String, String>, log: &[Mutation]) -> BTreeMap<String, String> {
        let mut store = initial.clone();
        for m in log {
            store.insert(m.key.clone(), m.new.clone());
        }
        store
    }
}

/// Seeds the key-value store from `task.environment_data`.
pub fn setup_state(task: &Task) -> Result<KvState, HarnessError> {
    let mut state = KvState::default();
    for (key, value) in &task.environment_data {
        let Value::String(s) = value else {
            return Err(HarnessError::environment(
                "environment_data values must be strings",
            ));
        };
        state.store.insert(key.clone(), s.clone());
    }
    Ok(state)
}

struct GetTool(SharedKvState);
struct SetTool(SharedKvState);
struct AddTool;

fn str_arg<'a>(args: &'a Document, name: &str) -> &'a str {
    args.get(name).and_then(Value::as_str).unwrap_or_default()
}

impl Tool for GetTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("get", "Read the value stored under a key.")
            .param("key", ParamType::String, true)
    }

    fn call(&mut self, _ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure> {
        let key = str_arg(args, "key");
        let state = self.0.lock().unwrap_or_else(|p| p.into_inner());
        state
            .store
            .get(key)
            .cloned()
            .ok_or_else(|| ToolFailure::Error(format!("key not found: {key}")))
    }
}

impl Tool for SetTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("set", "Store a value under a key.")
            .param("key", ParamType::String, true)
            .param("value", ParamType::String, true)
    }

    fn call(&mut self, _ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure> {
        let mut state = self.0.lock().unwrap_or_else(|p| p.into_inner());
        state.set(str_arg(args, "key"), str_arg(args, "value"));
        Ok("ok".to_string())
    }
}

impl Tool for AddTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("add", "Add two integers.")
            .param("a", ParamType::Integer, true)
            .param("b", ParamType::Integer, true)
    }

    fn call(&mut self, _ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure> {
        let a = args.get("a").and_then(Value::as_i64);
        let b = args.get("b").and_then(Value::as_i64);
        match (a, b) {
            (Some(a), Some(b)) => a
                .checked_add(b)
                .map(|s| s.to_string())
                .ok_or_else(|| ToolFailure::Error("integer overflow".to_string())),
            _ => Err(ToolFailure::Error("operands out of range".to_string())),
        }
    }
}

/// The key-value tools `get`, `set` and `add`. `ask_user` is bound
/// separately by [`crate::user::bind_ask_user`] when a tool-based user exists.
pub fn create_tools(state: &SharedKvState) -> Vec<Box<dyn Tool>> {
    vec![
        Box::new(GetTool(state.clone())),
        Box::new(SetTool(state.clone())),
        Box::new(AddTool),
    ]
}
