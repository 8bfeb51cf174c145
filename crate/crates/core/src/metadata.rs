//! Reproducibility metadata attached to every report.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub git_commit: Option<String>,
    pub git_dirty: Option<bool>,
    pub os: String,
    pub host_arch: String,
    pub harness_version: String,
    pub dependency_versions: BTreeMap<String, String>,
    /// RFC 3339.
    pub started_at: String,
    pub master_seed: u64,
    /// 0 for the original run, incremented by each selective retry.
    #[serde(default)]
    pub attempt: u32,
}

/// Dependency versions baked in at build time, plus the compiler version.
pub fn dependency_versions() -> BTreeMap<String, String> {
    let mut versions: BTreeMap<String, String> = env!("HARNESS_DEPENDENCY_VERSIONS")
        .split(',')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let rustc = env!("HARNESS_RUSTC_VERSION");
    if !rustc.is_empty() {
        versions.insert("rustc".to_string(), rustc.to_string());
    }
    versions
}

fn git(dir: &Path, args: &[&str]) -> Option<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Captures git state and host information. Never fails: anything that
/// cannot be determined is left absent.
pub fn capture_run_metadata(working_dir: &Path, master_seed: u64) -> RunMetadata {
    let inside = git(working_dir, &["rev-parse", "--is-inside-work-tree"])
        .is_some_and(|s| s.trim() == "true");
    let (git_commit, git_dirty) = if inside {
        (
            git(working_dir, &["rev-parse", "HEAD"]).map(|s| s.trim().to_string()),
            git(working_dir, &["status", "--porcelain"]).map(|s| !s.trim().is_empty()),
        )
    } else {
        (None, None)
    };
    RunMetadata {
        git_commit,
        git_dirty,
        os: std::env::consts::OS.to_string(),
        host_arch: std::env::consts::ARCH.to_string(),
        harness_version: crate::HARNESS_VERSION.to_string(),
        dependency_versions: dependency_versions(),
        started_at: chrono::Utc::now().to_rfc3339(),
        master_seed,
        attempt: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_git_directory_has_no_git_fields() {
        let dir = tempfile::tempdir().unwrap();
        let meta = capture_run_metadata(dir.path(), 7);
        assert_eq!(meta.git_commit, None);
        assert_eq!(meta.git_dirty, None);
        assert!(!meta.os.is_empty());
        assert_eq!(meta.harness_version, env!("CARGO_PKG_VERSION"));
        assert_eq!(meta.master_seed, 7);
        assert!(chrono::DateTime::parse_from_rfc3339(&meta.started_at).is_ok());
    }

    #[test]
    fn missing_directory_degrades() {
        let meta = capture_run_metadata(Path::new("/definitely/not/here"), 0);
        assert_eq!(meta.git_commit, None);
    }

    #[test]
    fn dependency_versions_include_serde() {
        let versions = dependency_versions();
        assert!(versions.contains_key("serde"), "{versions:?}");
    }
}
