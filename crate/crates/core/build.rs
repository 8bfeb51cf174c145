//! Records the resolved versions of this crate's direct dependencies so that
//! run metadata can report them.

use std::collections::BTreeMap;
use std::path::Path;

fn main() {
    let manifest_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let manifest_path = Path::new(&manifest_dir).join("Cargo.toml");
    let lock_path = Path::new(&manifest_dir).join("../../Cargo.lock");
    println!("cargo:rerun-if-changed={}", manifest_path.display());
    println!("cargo:rerun-if-changed={}", lock_path.display());

    let direct: Vec<String> = std::fs::read_to_string(&manifest_path)
        .ok()
        .and_then(|s| s.parse::<toml::Table>().ok())
        .and_then(|t| t.get("dependencies").and_then(|d| d.as_table()).cloned())
        .map(|deps| deps.keys().cloned().collect())
        .unwrap_or_default();

    let mut versions = BTreeMap::new();
    if let Some(lock) = std::fs::read_to_string(&lock_path)
        .ok()
        .and_then(|s| s.parse::<toml::Table>().ok())
    {
        for pkg in lock
            .get("package")
            .and_then(|p| p.as_array())
            .into_iter()
            .flatten()
        {
            let (Some(name), Some(version)) = (
                pkg.get("name").and_then(|v| v.as_str()),
                pkg.get("version").and_then(|v| v.as_str()),
            ) else {
                continue;
            };
            if direct.iter().any(|d| d == name) {
                // several versions may be locked; keep the highest listed last
                versions.insert(name.to_string(), version.to_string());
            }
        }
    }
    let encoded: Vec<String> = versions.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "cargo:rustc-env=HARNESS_DEPENDENCY_VERSIONS={}",
        encoded.join(",")
    );
    let rustc = std::env::var("RUSTC").unwrap_or_else(|_| "rustc".into());
    let rustc_version = std::process::Command::new(rustc)
        .arg("--version")
        .output()
        .ok()
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_default();
    println!("cargo:rustc-env=HARNESS_RUSTC_VERSION={rustc_version}");
}
