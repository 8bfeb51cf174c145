//! Built-in offline reference benchmark.
//!
//! Eight key-value tasks covering tool errors, corrective suggestions,
//! tool-based users (stop tokens, turn caps) and a two-agent hand-off. The
//! shipped gold scripts solve every task with pGSR 1.0.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentAdapter, AgentHandle, HttpAgent, ScriptBook, SubprocessAgent};
use crate::engine::{default_execution_loop, Benchmark, TaskContext};
use crate::environment::Environment;
use crate::error::{ExecError, HarnessError};
use crate::eval::{Evaluator, ExactMatchEvaluator, PgsrEvaluator};
use crate::llm::{model_from_spec, ModelSpec, ScriptedModel};
use crate::model::{Initiator, Task};
use crate::user::{bind_ask_user, SharedUser, UserConfig, UserMode, UserSimulator};

pub const TASKS_JSON: &str = include_str!("../data/deskbench/tasks.json");
pub const PROBES_JSON: &str = include_str!("../data/deskbench/probes.json");
pub const GOLD_JSON: &str = include_str!("../data/deskbench/gold.json");
pub const USERS_JSON: &str = include_str!("../data/deskbench/users.json");

/// Tasks with this tag run two agents: a researcher whose answer is handed
/// to a writer.
pub const PIPELINE_TAG: &str = "pipeline";

/// A scripted user for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFixture {
    pub config: UserConfig,
    pub responses: Vec<String>,
}

pub fn parse_tasks(text: &str) -> Result<Vec<Task>, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::config(format!("invalid task file: {e}")))
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
    parse_tasks(&text)
}

/// The eight shipped tasks.
pub fn tasks() -> Vec<Task> {
    parse_tasks(TASKS_JSON).expect("shipped tasks parse")
}

/// Tasks kept out of the main set because they cannot succeed, such as the
/// zero-budget timeout probe.
pub fn probe_tasks() -> Vec<Task> {
    parse_tasks(PROBES_JSON).expect("shipped probes parse")
}

pub fn gold_scripts() -> ScriptBook {
    ScriptBook::from_json(GOLD_JSON).expect("shipped gold scripts parse")
}

pub fn user_fixtures() -> BTreeMap<String, UserFixture> {
    serde_json::from_str(USERS_JSON).expect("shipped user fixtures parse")
}

fn needs_user(task: &Task) -> bool {
    task.protocol.initiator == Initiator::UserFirst || task.protocol.max_user_turns > 0
}

pub enum UserSource {
    None,
    /// Scripted users keyed by task id.
    Fixtures(BTreeMap<String, UserFixture>),
    /// One simulator configuration for every task that needs a user.
    Configured { config: UserConfig, model: ModelSpec },
}

pub type AgentFactory =
    dyn Fn(&TaskContext, &Task) -> Result<Vec<Box<dyn AgentAdapter>>, HarnessError> + Send + Sync;

pub enum AgentSource {
    Scripted(ScriptBook),
    Subprocess { command: String, args: Vec<String> },
    Http { base_url: String },
    Custom(Arc<AgentFactory>),
}

fn agent_names(task: &Task) -> &'static [&'static str] {
    if task.has_tag(PIPELINE_TAG) {
        &["researcher", "writer"]
    } else {
        &["agent"]
    }
}

pub struct DeskbenchSpec {
    agents: AgentSource,
    users: UserSource,
}

impl DeskbenchSpec {
    pub fn new(agents: AgentSource, users: UserSource) -> Self {
        Self { agents, users }
    }

    /// Gold scripted agents with the shipped scripted users.
    pub fn gold() -> Self {
        Self::new(AgentSource::Scripted(gold_scripts()), UserSource::Fixtures(user_fixtures()))
    }

    /// Agents that answer immediately without calling tools.
    pub fn lazy(tasks: &[Task]) -> Self {
        Self::new(
            AgentSource::Scripted(ScriptBook::lazy(tasks, |t| agent_names(t).len())),
            UserSource::Fixtures(user_fixtures()),
        )
    }

    fn build_agents(&self, ctx: &TaskContext, task: &Task) -> Result<Vec<Box<dyn AgentAdapter>>, HarnessError> {
        let names = agent_names(task);
        match &self.agents {
            AgentSource::Scripted(book) => book.agents_for(&task.task_id),
            AgentSource::Subprocess { command, args } => Ok(names
                .iter()
                .map(|n| Box::new(SubprocessAgent::new(*n, command, args.clone())) as Box<dyn AgentAdapter>)
                .collect()),
            AgentSource::Http { base_url } => names
                .iter()
                .map(|n| Ok(Box::new(HttpAgent::new(*n, base_url)?) as Box<dyn AgentAdapter>))
                .collect(),
            AgentSource::Custom(factory) => factory(ctx, task),
        }
    }
}

/// The shipped benchmark: gold agents, scripted users and the eight tasks.
pub fn deskbench_spec() -> (DeskbenchSpec, Vec<Task>) {
    (DeskbenchSpec::gold(), tasks())
}

impl Benchmark for DeskbenchSpec {
    fn setup_environment(&self, ctx: &TaskContext, task: &Task) -> Result<Environment, ExecError> {
        Ok(Environment::key_value(ctx, task)?)
    }

    fn has_user(&self, task: &Task) -> bool {
        match &self.users {
            UserSource::None => false,
            UserSource::Fixtures(f) => f.contains_key(&task.task_id),
            UserSource::Configured { .. } => needs_user(task),
        }
    }

    fn setup_user(
        &self,
        ctx: &TaskContext,
        task: &Task,
        env: &mut Environment,
    ) -> Result<Option<SharedUser>, ExecError> {
        if !self.has_user(task) {
            return Ok(None);
        }
        let simulator = match &self.users {
            UserSource::None => return Ok(None),
            UserSource::Fixtures(fixtures) => {
                let fixture = &fixtures[&task.task_id];
                let model = ScriptedModel::from_texts(format!("{}-user", task.task_id), &fixture.responses);
                UserSimulator::register(ctx, "customer", fixture.config.clone(), Box::new(model))?
            }
            UserSource::Configured { config, model } => {
                UserSimulator::register(ctx, "customer", config.clone(), model_from_spec(model)?)?
            }
        };
        let user = simulator.shared();
        if user.lock().unwrap_or_else(|p| p.into_inner()).mode() == UserMode::ToolBased {
            bind_ask_user(&user, env)?;
        }
        Ok(Some(user))
    }

    fn setup_agents(
        &self,
        ctx: &TaskContext,
        task: &Task,
        _env: &Environment,
        _user: Option<&SharedUser>,
    ) -> Result<Vec<Box<dyn AgentAdapter>>, ExecError> {
        Ok(self.build_agents(ctx, task)?)
    }

    fn setup_evaluators(&self, task: &Task) -> Vec<Box<dyn Evaluator>> {
        let mut evaluators: Vec<Box<dyn Evaluator>> = Vec::new();
        if !task.evaluation_criteria.subgoals.is_empty() {
            evaluators.push(Box::new(PgsrEvaluator));
        }
        if task.evaluation_criteria.expected_answer.is_some() {
            evaluators.push(Box::new(ExactMatchEvaluator::default()));
        }
        evaluators
    }

    fn execution_loop(
        &self,
        ctx: &TaskContext,
        task: &Task,
        agents: &mut [AgentHandle],
        env: &mut Environment,
        user: Option<&SharedUser>,
    ) -> Result<String, ExecError> {
        let [researcher, writer] = agents else {
            return default_execution_loop(ctx, task, agents, env, user);
        };
        if !task.has_tag(PIPELINE_TAG) {
            return default_execution_loop(ctx, task, agents, env, user);
        }
        ctx.checkpoint()?;
        let tools = env.tools();
        let notes = researcher.run(ctx, &task.query, &tools, env)?;
        ctx.checkpoint()?;
        let brief = format!("{}\nResearch notes: {notes}", task.query);
        writer.run(ctx, &brief, &tools, env)
    }
}
