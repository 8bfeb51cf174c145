//! Evaluation harness for single- and multi-agent LLM systems.
//!
//! The whole system under test (agents, models, framework glue, error
//! handling) is the unit of analysis. A [`engine::Benchmark`] supplies the
//! setup hooks; the [`engine::Engine`] drives every `(task, repeat)` pair
//! through Setup, Execute, Collect, Evaluate and Report, collecting
//! per-component traces through a [`registry::ComponentRegistry`] that is
//! cleared between repetitions.
//!
//! Numerical code (item response theory, cross-factor variance statistics)
//! is generic over [`Scalar`]; the aliases below fix the common precisions.

pub mod agent;
pub mod deskbench;
pub mod engine;
pub mod environment;
pub mod error;
pub mod eval;
pub mod llm;
pub mod metadata;
pub mod model;
pub mod queue;
pub mod registry;
pub mod scalar;
pub mod user;

pub use error::{ErrorKind, ExecError, HarnessError};
pub use model::{
    derive_task_seed, status_is_scored, validate_task, ExecutionStatus, Report, Task, TaskMetadata,
};
pub use scalar::Scalar;

/// Key-value document used for configuration, payloads and tool arguments.
pub type Document = serde_json::Map<String, serde_json::Value>;

pub type ScoreMatrixF64 = eval::stats::ScoreMatrix<f64>;
pub type ScoreMatrixF32 = eval::stats::ScoreMatrix<f32>;
pub type FactorStatsF64 = eval::stats::FactorStats<f64>;
pub type FactorStatsF32 = eval::stats::FactorStats<f32>;
pub type IrtItemF64 = queue::irt::IrtItem<f64>;
pub type IrtItemF32 = queue::irt::IrtItem<f32>;
pub type AbilityEstimateF64 = queue::irt::AbilityEstimate<f64>;
pub type AbilityEstimateF32 = queue::irt::AbilityEstimate<f32>;

/// Version string recorded in every report's run metadata.
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
