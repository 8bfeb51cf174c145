//! Simulated users for multi-turn tasks.
//!
//! A user either converses directly with the agent between runs
//! (message-based) or is reachable only through an `ask_user` tool
//! (tool-based).

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Message, Role};
use crate::engine::TaskContext;
use crate::environment::{Environment, ParamType, Tool, ToolDescriptor, ToolFailure};
use crate::error::{ErrorKind, ExecError, HarnessError};
use crate::llm::{ModelAdapter, TracedModel};
use crate::registry::{ComponentId, ComponentKind};
use crate::Document;

/// Tool result returned by `ask_user` once the user's turns are used up.
pub const MAX_TURNS_REACHED: &str = "max turns reached";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserMode {
    #[default]
    MessageBased,
    ToolBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    #[serde(default)]
    pub mode: UserMode,
    #[serde(default)]
    pub persona: String,
    pub max_turns: u32,
    #[serde(default)]
    pub stop_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTurn {
    pub content: String,
    pub is_stop: bool,
    /// The turn budget was already spent; no response was generated.
    pub exhausted: bool,
}

pub trait User: Send {
    /// Answers `prompt`, the agent's latest utterance. The conversation
    /// history is tracked by the user itself.
    fn respond(&mut self, ctx: &TaskContext, prompt: &str) -> Result<UserTurn, ExecError>;

    fn mode(&self) -> UserMode;

    fn turns_taken(&self) -> u32;

    fn id(&self) -> &ComponentId;
}

pub type SharedUser = Arc<Mutex<dyn User>>;

/// Model-backed user simulator. The persona is the first system message of
/// the simulator's own model context, in which the agent speaks as `user`
/// and the simulated user as `assistant`.
pub struct UserSimulator {
    id: ComponentId,
    config: UserConfig,
    model: TracedModel,
    history: Vec<Message>,
    turns: u32,
}

impl UserSimulator {
    pub fn register(
        ctx: &TaskContext,
        name: &str,
        config: UserConfig,
        model: Box<dyn ModelAdapter>,
    ) -> Result<Self, HarnessError> {
        if config.max_turns == 0 {
            return Err(HarnessError::config("user max_turns must be ≥ 1"));
        }
        let snapshot = match serde_json::to_value(&config) {
            Ok(serde_json::Value::Object(map)) => map,
            _ => Document::new(),
        };
        let id = ctx.register(ComponentKind::User, name, snapshot);
        let model = TracedModel::register(ctx, model);
        let mut history = Vec::new();
        if !config.persona.is_empty() {
            history.push(Message::system(&config.persona));
        }
        Ok(Self {
            id,
            config,
            model,
            history,
            turns: 0,
        })
    }

    pub fn shared(self) -> SharedUser {
        Arc::new(Mutex::new(self))
    }

    fn strip_stop_tokens(&self, content: &str) -> (String, bool) {
        let mut out = content.to_string();
        let mut stop = false;
        for token in self.config.stop_tokens.iter().filter(|t| !t.is_empty()) {
            if out.contains(token.as_str()) {
                stop = true;
                out = out.replace(token.as_str(), "");
            }
        }
        (out.trim().to_string(), stop)
    }
}

impl User for UserSimulator {
    fn respond(&mut self, ctx: &TaskContext, prompt: &str) -> Result<UserTurn, ExecError> {
        ctx.checkpoint()?;
        if self.turns >= self.config.max_turns {
            let turn = UserTurn {
                content: String::new(),
                is_stop: self.config.mode == UserMode::MessageBased,
                exhausted: true,
            };
            let mut payload = Document::new();
            payload.insert("prompt".into(), json!(prompt));
            payload.insert("exhausted".into(), json!(true));
            payload.insert("is_stop".into(), json!(turn.is_stop));
            ctx.emit(&self.id, "user_turn", payload)?;
            return Ok(turn);
        }
        self.turns += 1;
        self.history.push(Message::new(Role::User, prompt));
        let response = self
            .model
            .chat(ctx, &self.history, &[])
            .map_err(|e| e.reattribute(ErrorKind::User))?;
        let (content, is_stop) = self.strip_stop_tokens(&response.message.content);
        self.history.push(Message::assistant(&content));
        let mut payload = Document::new();
        payload.insert("turn".into(), json!(self.turns));
        payload.insert("prompt".into(), json!(prompt));
        payload.insert("content".into(), json!(content));
        payload.insert("is_stop".into(), json!(is_stop));
        payload.insert("exhausted".into(), json!(false));
        ctx.emit(&self.id, "user_turn", payload)?;
        Ok(UserTurn {
            content,
            is_stop,
            exhausted: false,
        })
    }

    fn mode(&self) -> UserMode {
        self.config.mode
    }

    fn turns_taken(&self) -> u32 {
        self.turns
    }

    fn id(&self) -> &ComponentId {
        &self.id
    }
}

struct AskUserTool {
    user: SharedUser,
}

impl Tool for AskUserTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("ask_user", "Ask the user a question and return the answer.").param(
            "question",
            ParamType::String,
            true,
        )
    }

    fn call(&mut self, ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure> {
        let question = args["question"].as_str().unwrap_or_default();
        let turn = self
            .user
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .respond(ctx, question)?;
        if turn.exhausted {
            return Err(ToolFailure::Error(MAX_TURNS_REACHED.into()));
        }
        Ok(turn.content)
    }
}

/// Exposes a tool-based user to agents as `ask_user(question)`.
pub fn bind_ask_user(user: &SharedUser, env: &mut Environment) -> Result<ComponentId, HarnessError> {
    let mode = user.lock().unwrap_or_else(|p| p.into_inner()).mode();
    if mode != UserMode::ToolBased {
        return Err(HarnessError::config("ask_user requires a tool_based user"));
    }
    if env.has_tool("ask_user") {
        return Err(HarnessError::config("ask_user is already bound"));
    }
    env.add_tool(Box::new(AskUserTool { user: user.clone() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ToolStatus;
    use crate::llm::ScriptedModel;
    use crate::model::Task;

    fn user(ctx: &TaskContext, mode: UserMode, max_turns: u32, lines: &[&str]) -> UserSimulator {
        UserSimulator::register(
            ctx,
            "customer",
            UserConfig {
                mode,
                persona: "You are a frugal customer.".into(),
                max_turns,
                stop_tokens: vec!["<STOP>".into()],
            },
            Box::new(ScriptedModel::from_texts("user-model", lines)),
        )
        .unwrap()
    }

    fn ctx() -> TaskContext {
        TaskContext::for_task(&Task::new("t", "q"), 0, 0)
    }

    #[test]
    fn stop_token_is_stripped() {
        let ctx = ctx();
        let mut u = user(&ctx, UserMode::MessageBased, 3, &["done <STOP>"]);
        let turn = u.respond(&ctx, "anything else?").unwrap();
        assert_eq!(turn.content, "done");
        assert!(turn.is_stop);
        assert!(!turn.exhausted);
    }

    #[test]
    fn message_based_exhaustion() {
        let ctx = ctx();
        let mut u = user(&ctx, UserMode::MessageBased, 2, &["a", "b", "c"]);
        u.respond(&ctx, "1").unwrap();
        u.respond(&ctx, "2").unwrap();
        let third = u.respond(&ctx, "3").unwrap();
        assert_eq!(
            third,
            UserTurn {
                content: String::new(),
                is_stop: true,
                exhausted: true
            }
        );
        assert_eq!(u.turns_taken(), 2);
    }

    #[test]
    fn persona_leads_and_roles_flip() {
        let ctx = ctx();
        let mut u = user(&ctx, UserMode::MessageBased, 2, &["fine"]);
        u.respond(&ctx, "hello").unwrap();
        let collected = ctx.registry().collect();
        let model_id = collected
            .traces
            .keys()
            .find(|id| id.kind == ComponentKind::Model)
            .unwrap();
        let input = &collected.traces[model_id][0].payload["input"];
        assert_eq!(input[0]["role"], "system");
        assert_eq!(input[0]["content"], "You are a frugal customer.");
        assert_eq!(input[1]["role"], "user");
    }

    #[test]
    fn model_failure_is_user_error() {
        let ctx = ctx();
        let mut u = user(&ctx, UserMode::MessageBased, 5, &[]);
        let err = u.respond(&ctx, "hi").unwrap_err();
        assert_eq!(err.fault().unwrap().kind, ErrorKind::User);
    }

    #[test]
    fn ask_user_binding() {
        let task = Task::new("t", "q");
        let ctx = TaskContext::for_task(&task, 0, 0);
        let mut env = Environment::key_value(&ctx, &task).unwrap();
        let shared = user(&ctx, UserMode::ToolBased, 1, &["under $500"]).shared();
        bind_ask_user(&shared, &mut env).unwrap();
        assert!(bind_ask_user(&shared, &mut env).is_err());
        let names: Vec<String> = env.tools().into_iter().map(|t| t.name).collect();
        assert_eq!(names, ["add", "ask_user", "get", "set"]);

        let args = json!({"question": "budget?"}).as_object().cloned().unwrap();
        let first = env.invoke_tool(&ctx, "ask_user", &args, None).unwrap();
        assert_eq!(first.result, "under $500");
        let second = env.invoke_tool(&ctx, "ask_user", &args, None).unwrap();
        assert_eq!(second.result, MAX_TURNS_REACHED);
        assert_eq!(second.status, ToolStatus::ToolError);

        let events: Vec<_> = ctx.registry().events();
        let user_turns = events.iter().filter(|e| e.event_kind == "user_turn").count();
        let invocations = events.iter().filter(|e| e.event_kind == "tool_invocation").count();
        assert_eq!((user_turns, invocations), (2, 2));
    }

    #[test]
    fn message_based_user_cannot_bind() {
        let task = Task::new("t", "q");
        let ctx = TaskContext::for_task(&task, 0, 0);
        let mut env = Environment::key_value(&ctx, &task).unwrap();
        let shared = user(&ctx, UserMode::MessageBased, 1, &["x"]).shared();
        assert_eq!(bind_ask_user(&shared, &mut env).unwrap_err().kind, ErrorKind::Config);
    }
}
