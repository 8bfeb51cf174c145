//! `harness`: run, retry, report and compare evaluation runs.
//!
//! Exit codes: 0 success, 1 evaluation-level failure, 2 usage or
//! configuration error.

mod compare;
mod config;
mod summary;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harness_core::engine::{Engine, RunOutcome, REPORTS_FILE};
use harness_core::model::read_reports;
use harness_core::{ErrorKind, ExecutionStatus, HarnessError};

use config::RunConfigFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation, configuration or input files.
    #[error("{0}")]
    Usage(String),
    /// The evaluation ran but did not succeed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e.kind {
            ErrorKind::Config => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "harness", version, about = "Evaluation harness for LLM agent systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every task of a configured benchmark.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing reports file in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Re-execute failed (task, repeat) pairs of an earlier run.
    Retry {
        /// Run directory holding reports.jsonl.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also retry agent errors and timeouts.
        #[arg(long)]
        include_agent_errors: bool,
    },
    /// Cross-model and cross-framework variability over run directories.
    Compare {
        dirs: Vec<PathBuf>,
        /// CSV of `domain,framework,model,score` rows added to the grids.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Per-task token, latency and score summary of a run directory.
    Report {
        #[arg(long)]
        reports: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HARNESS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, force } => cmd_run(&config, force),
        Command::Retry {
            reports,
            config,
            include_agent_errors,
        } => cmd_retry(&reports, &config, include_agent_errors),
        Command::Compare { dirs, fixture, json } => cmd_compare(&dirs, fixture.as_deref(), json),
        Command::Report { reports } => cmd_report(&reports),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Prints the summary and decides the exit status of a run or retry.
fn finish(outcome: &RunOutcome, fail_on_task_error: bool) -> Result<(), CliError> {
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    for error in &outcome.callback_errors {
        eprintln!("callback error: {error}");
    }
    print!("{}", summary::run_summary(&outcome.reports));
    let failed = outcome.reports.iter().filter(|r| r.status != ExecutionStatus::Success).count();
    if outcome.halted {
        return Err(CliError::Failed(format!("run halted after {} reports", outcome.reports.len())));
    }
    if fail_on_task_error && failed > 0 {
        return Err(CliError::Failed(format!("{failed} reports did not succeed")));
    }
    Ok(())
}

fn cmd_run(config_path: &Path, force: bool) -> Result<(), CliError> {
    let loaded = RunConfigFile::load(config_path)?.build()?;
    if let Some(dir) = &loaded.options.output_dir {
        let reports = dir.join(REPORTS_FILE);
        if reports.exists() {
            if !force {
                return Err(CliError::Usage(format!(
                    "{} already exists; pass --force to overwrite",
                    reports.display()
                )));
            }
            std::fs::remove_file(&reports)
                .map_err(|e| CliError::Usage(format!("cannot remove {}: {e}", reports.display())))?;
        }
    }
    let fail_on_task_error = loaded.options.fail_on_task_error;
    let outcome = Engine::new(loaded.benchmark, loaded.options).run(&loaded.tasks)?;
    finish(&outcome, fail_on_task_error)
}

fn cmd_retry(dir: &Path, config_path: &Path, include_agent_errors: bool) -> Result<(), CliError> {
    let reports_path = dir.join(REPORTS_FILE);
    if !reports_path.exists() {
        return Err(CliError::Usage(format!("{} does not exist", reports_path.display())));
    }
    let all = read_reports(&reports_path).map_err(|e| CliError::Usage(e.message))?;
    let attempt = all.iter().map(|r| r.run_metadata.attempt).max().unwrap_or(0) + 1;
    let retryable = |s: ExecutionStatus| {
        s.is_infrastructure_failure()
            || (include_agent_errors && matches!(s, ExecutionStatus::AgentError | ExecutionStatus::Timeout))
    };
    let pairs: Vec<(String, u32)> = summary::latest_reports(all)
        .into_iter()
        .filter(|r| retryable(r.status))
        .map(|r| (r.task_id, r.repeat_idx))
        .collect();
    if pairs.is_empty() {
        println!("nothing to retry");
        return Ok(());
    }
    let mut loaded = RunConfigFile::load(config_path)?.build()?;
    if let Some((task, _)) = pairs
        .iter()
        .find(|(t, _)| !loaded.tasks.iter().any(|task| task.task_id == *t))
    {
        return Err(CliError::Usage(format!("task {task:?} is not in the configured benchmark")));
    }
    loaded.options.output_dir = Some(dir.to_path_buf());
    let fail_on_task_error = loaded.options.fail_on_task_error;
    println!("retrying {} (task, repeat) pairs as attempt {attempt}", pairs.len());
    let outcome = Engine::new(loaded.benchmark, loaded.options)
        .with_attempt(attempt)
        .run_pairs(&loaded.tasks, &pairs)?;
    finish(&outcome, fail_on_task_error)
}

fn cmd_compare(dirs: &[PathBuf], fixture: Option<&Path>, json: bool) -> Result<(), CliError> {
    let mut grids = match fixture {
        Some(path) => compare::load_fixture(path)?,
        None => Vec::new(),
    };
    if dirs.is_empty() && grids.is_empty() {
        return Err(CliError::Usage("compare needs report directories or --fixture".into()));
    }
    for dir in dirs {
        compare::add_cell(&mut grids, &compare::read_cell(dir)?)?;
    }
    let comparison = compare::compare(&grids)?;
    if json {
        let text = serde_json::to_string_pretty(&comparison).map_err(|e| CliError::Failed(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", compare::render(&comparison));
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), CliError> {
    let path = dir.join(REPORTS_FILE);
    let reports = read_reports(&path).map_err(|e| CliError::Usage(e.message))?;
    let mut reports = summary::latest_reports(reports);
    reports.sort_by(|a, b| (&a.task_id, a.repeat_idx).cmp(&(&b.task_id, b.repeat_idx)));
    print!("{}", summary::task_table(&reports));
    print!("{}", summary::run_summary(&reports));
    Ok(())
}
