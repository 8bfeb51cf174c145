//! Run configuration files (TOML or JSON, one schema).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use harness_core::agent::ScriptBook;
use harness_core::deskbench::{self, AgentSource, DeskbenchSpec, UserSource};
use harness_core::engine::{Benchmark, RunOptions};
use harness_core::llm::ModelSpec;
use harness_core::queue::QueueSpec;
use harness_core::user::UserConfig;
use harness_core::Task;
use serde::Deserialize;

use crate::CliError;

/// Benchmark name selecting the built-in deterministic benchmark.
pub const DESKBENCH: &str = "deskbench";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// `"deskbench"` or a path to a JSON task file.
    pub benchmark: String,
    #[serde(default)]
    pub agent: AgentConfig,
    /// Drives the user simulator; required when `user` is set.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub user: Option<UserConfig>,
    #[serde(default)]
    pub queue: Option<QueueSpec>,
    #[serde(default)]
    pub run: RunOptions,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    /// Without a script file the shipped gold scripts are used (deskbench only).
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Subprocess {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Http {
        base_url: String,
    },
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig::Scripted { script: None }
    }
}

/// A parsed configuration with paths resolved and the benchmark built.
pub struct LoadedConfig {
    pub tasks: Vec<Task>,
    pub benchmark: Arc<dyn Benchmark>,
    pub options: RunOptions,
}

impl RunConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let bad = |e: String| CliError::Usage(format!("{}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(text).map_err(|e| bad(e.message().to_string())),
            Some("json") => serde_json::from_str(text).map_err(|e| bad(e.to_string())),
            _ => Err(bad("config file must end in .toml or .json".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    /// Makes relative paths absolute against `base`. Bare command names stay
    /// as they are so that `PATH` lookup still applies.
    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        if self.benchmark != DESKBENCH {
            self.benchmark = resolve(Path::new(&self.benchmark)).to_string_lossy().into_owned();
        }
        match &mut self.agent {
            AgentConfig::Scripted { script: Some(script) } => *script = resolve(script),
            AgentConfig::Subprocess { command, .. } if command.contains(std::path::MAIN_SEPARATOR) => {
                *command = resolve(Path::new(command)).to_string_lossy().into_owned();
            }
            _ => {}
        }
        if let Some(dir) = &mut self.run.output_dir {
            *dir = resolve(dir);
        }
    }

    pub fn options(&self) -> Result<RunOptions, CliError> {
        let mut options = self.run.clone();
        if let Some(queue) = &self.queue {
            if options.queue != QueueSpec::default() {
                return Err(CliError::Usage("queue is set both at top level and in run".into()));
            }
            options.queue = queue.clone();
        }
        options.validate().map_err(|e| CliError::Usage(e.message))?;
        Ok(options)
    }

    pub fn build(self) -> Result<LoadedConfig, CliError> {
        let options = self.options()?;
        let is_deskbench = self.benchmark == DESKBENCH;
        let tasks = if is_deskbench {
            deskbench::tasks()
        } else {
            deskbench::load_tasks(Path::new(&self.benchmark)).map_err(|e| CliError::Usage(e.message))?
        };
        let agents = match &self.agent {
            AgentConfig::Scripted { script: Some(path) } => {
                AgentSource::Scripted(ScriptBook::load(path).map_err(|e| CliError::Usage(e.message))?)
            }
            AgentConfig::Scripted { script: None } if is_deskbench => AgentSource::Scripted(deskbench::gold_scripts()),
            AgentConfig::Scripted { script: None } => {
                return Err(CliError::Usage("scripted agent needs a script file for this benchmark".into()))
            }
            AgentConfig::Subprocess { command, args } => AgentSource::Subprocess {
                command: command.clone(),
                args: args.clone(),
            },
            AgentConfig::Http { base_url } => AgentSource::Http {
                base_url: base_url.clone(),
            },
        };
        let users = match (&self.user, &self.model) {
            (Some(config), Some(model)) => UserSource::Configured {
                config: config.clone(),
                model: model.clone(),
            },
            (Some(_), None) => return Err(CliError::Usage("user needs a model to drive it".into())),
            (None, Some(_)) => return Err(CliError::Usage("model is only used by a user; add a user section".into())),
            (None, None) if is_deskbench => UserSource::Fixtures(deskbench::user_fixtures()),
            (None, None) => UserSource::None,
        };
        Ok(LoadedConfig {
            benchmark: Arc::new(DeskbenchSpec::new(agents, users)),
            tasks,
            options,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toml(text: &str) -> Result<RunConfigFile, CliError> {
        RunConfigFile::parse(text, Path::new("c.toml"))
    }

    #[test]
    fn minimal_config_defaults_to_gold_agents() {
        let config = toml("benchmark = \"deskbench\"").unwrap();
        assert_eq!(config.agent, AgentConfig::Scripted { script: None });
        let loaded = config.build().unwrap();
        assert_eq!(loaded.tasks.len(), 8);
        assert_eq!(loaded.options, RunOptions::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in [
            "benchmark = \"deskbench\"\nmodle = 1",
            "benchmark = \"deskbench\"\n[run]\nworkers = 2",
            "benchmark = \"deskbench\"\n[agent]\nkind = \"http\"\nbase_url = \"http://x\"\nurl = 1",
        ] {
            let CliError::Usage(message) = toml(text).unwrap_err() else {
                panic!("usage error expected");
            };
            assert!(message.contains("unknown field"), "{message}");
        }
        let err = RunConfigFile::parse(r#"{"benchmark": "deskbench", "modle": {}}"#, Path::new("c.json")).unwrap_err();
        assert!(err.to_string().contains("modle"), "{err}");
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut config = toml(
            "benchmark = \"tasks.json\"\n[agent]\nkind = \"scripted\"\nscript = \"s.json\"\n[run]\noutput_dir = \"out\"",
        )
        .unwrap();
        config.resolve_paths(Path::new("/cfg"));
        assert_eq!(config.benchmark, "/cfg/tasks.json");
        assert_eq!(config.agent, AgentConfig::Scripted { script: Some("/cfg/s.json".into()) });
        assert_eq!(config.run.output_dir, Some(PathBuf::from("/cfg/out")));

        let mut bare = toml("benchmark = \"deskbench\"\n[agent]\nkind = \"subprocess\"\ncommand = \"python3\"").unwrap();
        bare.resolve_paths(Path::new("/cfg"));
        assert_eq!(bare.benchmark, DESKBENCH);
        assert!(matches!(bare.agent, AgentConfig::Subprocess { ref command, .. } if command == "python3"));
    }

    #[test]
    fn inconsistent_sections_are_rejected() {
        let both = "benchmark = \"deskbench\"\n[queue]\nkind = \"priority\"\n[run.queue]\nkind = \"priority\"";
        assert!(toml(both).unwrap().options().is_err());
        let user_only = "benchmark = \"deskbench\"\n[user]\nmax_turns = 2";
        assert!(toml(user_only).unwrap().build().is_err());
        let zero = "benchmark = \"deskbench\"\n[run]\nnum_workers = 0";
        assert!(toml(zero).unwrap().build().is_err());
        let ext = "benchmark = \"/nonexistent/tasks.json\"";
        assert!(toml(ext).unwrap().build().is_err());
    }
}
