//! Error attribution.
//!
//! [`HarnessError`] carries the component that failed; [`ExecError`] is what
//! flows through a running execution and additionally models the two
//! non-fault interruptions (deadline reached, operator cancel).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::ExecutionStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    /// The agent violated its contract. Counts against the system.
    Agent,
    /// Benchmark or infrastructure fault. Excluded from scoring.
    Environment,
    /// User simulator fault. Excluded from scoring.
    User,
    /// Malformed wire traffic from an external agent.
    Protocol,
    /// Harness or benchmark misconfiguration.
    Config,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Agent => "agent",
            ErrorKind::Environment => "environment",
            ErrorKind::User => "user",
            ErrorKind::Protocol => "protocol",
            ErrorKind::Config => "config",
        }
    }

    /// Report status produced when an execution fails with this kind.
    ///
    /// Protocol violations come from the external agent process, so they are
    /// attributed to the agent. Configuration faults are infrastructure.
    pub fn status(self) -> ExecutionStatus {
        match self {
            ErrorKind::Agent | ErrorKind::Protocol => ExecutionStatus::AgentError,
            ErrorKind::Environment | ErrorKind::Config => ExecutionStatus::EnvironmentError,
            ErrorKind::User => ExecutionStatus::UserError,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind} error: {message}")]
pub struct HarnessError {
    pub kind: ErrorKind,
    pub message: String,
    /// Actionable hint an agent can use to retry with corrected inputs.
    pub suggestion: Option<String>,
    pub component_id: Option<String>,
}

impl HarnessError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            suggestion: None,
            component_id: None,
        }
    }

    pub fn agent(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Agent, message)
    }

    pub fn environment(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Environment, message)
    }

    pub fn user(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::User, message)
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Protocol, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn with_suggestion(mut self, suggestion: impl Into<String>) -> Self {
        self.suggestion = Some(suggestion.into());
        self
    }

    pub fn with_component(mut self, component: impl fmt::Display) -> Self {
        self.component_id = Some(component.to_string());
        self
    }

    /// Agent errors are scored; everything else is infrastructure.
    pub fn is_scored(&self) -> bool {
        self.kind.status().is_scored()
    }
}

/// Why an execution stopped early.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Fault(#[from] HarnessError),
    #[error("deadline exceeded")]
    Timeout,
    #[error("execution cancelled")]
    Cancelled,
}

impl ExecError {
    pub fn status(&self) -> ExecutionStatus {
        match self {
            ExecError::Fault(e) => e.kind.status(),
            ExecError::Timeout => ExecutionStatus::Timeout,
            ExecError::Cancelled => ExecutionStatus::Cancelled,
        }
    }

    pub fn fault(&self) -> Option<&HarnessError> {
        match self {
            ExecError::Fault(e) => Some(e),
            _ => None,
        }
    }

    /// Re-attributes a fault to another kind, keeping the message.
    pub fn reattribute(self, kind: ErrorKind) -> Self {
        match self {
            ExecError::Fault(mut e) => {
                e.kind = kind;
                ExecError::Fault(e)
            }
            other => other,
        }
    }
}
