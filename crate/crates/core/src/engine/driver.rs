use crate::agent::AgentHandle;
use crate::engine::TaskContext;
use crate::environment::Environment;
use crate::error::{ErrorKind, ExecError, HarnessError};
use crate::model::{Initiator, Task};
use crate::user::{SharedUser, UserMode};

/// Alternates agent runs and user turns.
///
/// Each agent turn passes the input through the agents in order, each one
/// receiving the previous agent's answer. With a message-based user, the
/// user answers the last agent's output until it signals stop, runs out of
/// turns or `max_user_turns` is reached. A user-first task starts with the
/// user's opening turn generated from the query; that turn counts against
/// `max_user_turns`.
pub fn default_execution_loop(
    ctx: &TaskContext,
    task: &Task,
    agents: &mut [AgentHandle],
    env: &mut Environment,
    user: Option<&SharedUser>,
) -> Result<String, ExecError> {
    if agents.is_empty() {
        return Err(HarnessError::config("execution loop needs at least one agent").into());
    }
    let respond = |prompt: &str| {
        let user = user.ok_or_else(|| ExecError::from(HarnessError::user("user simulator required")))?;
        let turn = user.lock().unwrap_or_else(|p| p.into_inner()).respond(ctx, prompt);
        turn.map_err(|e| e.reattribute(ErrorKind::User))
    };
    let conversational = user.is_some_and(|u| u.lock().unwrap_or_else(|p| p.into_inner()).mode() == UserMode::MessageBased);

    let mut user_turns = 0;
    let mut stop = false;
    let mut input = task.query.clone();
    let mut answer = String::new();
    if task.protocol.initiator == Initiator::UserFirst {
        let opening = respond(&task.query)?;
        user_turns += 1;
        if opening.content.is_empty() {
            return Ok(answer);
        }
        stop = opening.is_stop;
        input = opening.content;
    }
    loop {
        ctx.checkpoint()?;
        let tools = env.tools();
        let mut current = input.clone();
        for agent in agents.iter_mut() {
            current = agent.run(ctx, &current, &tools, env)?;
        }
        answer = current;
        if stop || !conversational || user_turns >= task.protocol.max_user_turns {
            return Ok(answer);
        }
        let turn = respond(&answer)?;
        user_turns += 1;
        if turn.content.is_empty() {
            return Ok(answer);
        }
        stop = turn.is_stop;
        input = turn.content;
    }
}
