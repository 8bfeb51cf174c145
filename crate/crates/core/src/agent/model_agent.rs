use serde_json::json;

use super::{AgentAdapter, Message};
use crate::engine::TaskContext;
use crate::environment::{ToolDescriptor, ToolExecutor};
use crate::error::{ErrorKind, ExecError};
use crate::llm::TracedModel;
use crate::Document;

/// Tool-calling loop over a model: each model response is one step; a
/// response with tool calls has them executed and fed back, a response
/// without tool calls is the final answer.
pub struct ModelAgent {
    name: String,
    model: TracedModel,
    system_prompt: Option<String>,
    messages: Vec<Message>,
}

impl ModelAgent {
    pub fn new(name: impl Into<String>, model: TracedModel) -> Self {
        Self {
            name: name.into(),
            model,
            system_prompt: None,
            messages: Vec::new(),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = Some(prompt.into());
        self
    }
}

impl AgentAdapter for ModelAgent {
    fn run_agent(
        &mut self,
        ctx: &TaskContext,
        query: &str,
        tools: &[ToolDescriptor],
        executor: &mut dyn ToolExecutor,
    ) -> Result<String, ExecError> {
        if self.messages.is_empty() {
            if let Some(prompt) = &self.system_prompt {
                self.messages.push(Message::system(prompt));
            }
        }
        self.messages.push(Message::user(query));
        loop {
            ctx.agent_step()?;
            let response = self.model.chat(ctx, &self.messages, tools)?;
            let message = response.message;
            let calls = message.tool_calls.clone().unwrap_or_default();
            self.messages.push(message.clone());
            if calls.is_empty() {
                return Ok(message.content);
            }
            for call in calls {
                let content = match executor.execute(ctx, &call) {
                    Ok(inv) => inv.result,
                    Err(ExecError::Fault(e)) if e.kind == ErrorKind::Agent => match e.suggestion {
                        Some(s) => format!("error: {} ({s})", e.message),
                        None => format!("error: {}", e.message),
                    },
                    Err(e) => return Err(e),
                };
                self.messages.push(Message::tool_result(&call.call_id, content));
            }
        }
    }

    fn get_messages(&mut self) -> Result<Vec<Message>, ExecError> {
        Ok(self.messages.clone())
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("adapter".into(), json!("model"));
        doc.insert("model".into(), json!(self.model.id().to_string()));
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Role, ToolCall};
    use crate::environment::Environment;
    use crate::llm::ScriptedModel;
    use crate::model::Task;

    #[test]
    fn tool_loop_with_scripted_model() {
        let task = Task::new("t", "what is 2+3?");
        let ctx = TaskContext::for_task(&task, 0, 0);
        let mut env = Environment::key_value(&ctx, &task).unwrap();
        let call = ToolCall {
            call_id: "m1".into(),
            name: "add".into(),
            args: json!({"a": 2, "b": 3}).as_object().cloned().unwrap(),
        };
        let model = ScriptedModel::new(
            "scripted",
            vec![
                Message::assistant("").with_tool_calls(vec![call]),
                Message::assistant("5"),
            ],
        );
        let model = TracedModel::register(&ctx, Box::new(model));
        let mut agent = ModelAgent::new("solver", model).with_system_prompt("be brief");
        let tools = env.tools();
        assert_eq!(agent.run_agent(&ctx, &task.query, &tools, &mut env).unwrap(), "5");
        let roles: Vec<Role> = agent.get_messages().unwrap().iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [Role::System, Role::User, Role::Assistant, Role::Tool, Role::Assistant]
        );
        assert_eq!(ctx.steps_taken(), 2);
    }
}
