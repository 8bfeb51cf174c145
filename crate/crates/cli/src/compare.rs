//! Cross-factor comparison of report directories.

use std::fmt::Write;
use std::path::Path;

use harness_core::engine::{Manifest, MANIFEST_FILE, REPORTS_FILE};
use harness_core::eval::stats::{cross_factor_stats, overall_factor_summary, read_score_csv, DomainGrids, ScoreMatrix};
use harness_core::model::read_reports;
use harness_core::FactorStatsF64;
use serde::Serialize;

use crate::summary::latest_reports;
use crate::CliError;

/// Grid coordinates and score (percent) of one report directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub domain: String,
    pub framework: String,
    pub model: String,
    pub score: f64,
}

/// Reads a run directory. Labels come from the manifest: `framework`
/// (falls back to the directory name), `model` (falls back to `default`)
/// and `domain` or `benchmark` (falls back to empty). The score is the mean
/// report score over scored reports, in percent.
pub fn read_cell(dir: &Path) -> Result<Cell, CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", manifest_path.display())))?;
    let reports = read_reports(&dir.join(REPORTS_FILE)).map_err(|e| CliError::Usage(e.message))?;
    let scores: Vec<f64> = latest_reports(reports)
        .iter()
        .filter(|r| r.status.is_scored())
        .filter_map(|r| r.mean_score())
        .collect();
    if scores.is_empty() {
        return Err(CliError::Usage(format!("{}: no scored reports", dir.display())));
    }
    let labels = &manifest.options.labels;
    let dir_name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Cell {
        domain: labels
            .get("domain")
            .or_else(|| labels.get("benchmark"))
            .cloned()
            .unwrap_or_default(),
        framework: labels.get("framework").cloned().unwrap_or(dir_name),
        model: labels.get("model").cloned().unwrap_or_else(|| "default".into()),
        score: 100.0 * scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

pub fn add_cell(grids: &mut DomainGrids<f64>, cell: &Cell) -> Result<(), CliError> {
    let idx = match grids.iter().position(|(d, _)| *d == cell.domain) {
        Some(idx) => idx,
        None => {
            grids.push((cell.domain.clone(), ScoreMatrix::new()));
            grids.len() - 1
        }
    };
    grids[idx]
        .1
        .insert(&cell.framework, &cell.model, cell.score)
        .map_err(|e| CliError::Usage(e.message))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainStats {
    pub domain: String,
    #[serde(flatten)]
    pub stats: FactorStatsF64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub domains: Vec<DomainStats>,
    pub overall: FactorStatsF64,
}

/// Every grid must be complete; the error names all missing cells.
pub fn compare(grids: &DomainGrids<f64>) -> Result<Comparison, CliError> {
    let mut missing = Vec::new();
    for (domain, grid) in grids {
        for (f, m) in grid.missing_cells() {
            missing.push(if domain.is_empty() {
                format!("{f}/{m}")
            } else {
                format!("{domain}:{f}/{m}")
            });
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Usage(format!("incomplete score grid, missing cells: {}", missing.join(", "))));
    }
    let mut domains = Vec::new();
    for (domain, grid) in grids {
        let stats = cross_factor_stats(grid).map_err(|e| CliError::Usage(format!("domain {domain:?}: {}", e.message)))?;
        domains.push(DomainStats {
            domain: domain.clone(),
            stats,
        });
    }
    let per_domain: Vec<FactorStatsF64> = domains.iter().map(|d| d.stats).collect();
    let overall = overall_factor_summary(&per_domain).map_err(|e| CliError::Usage(e.message))?;
    Ok(Comparison { domains, overall })
}

pub fn load_fixture(path: &Path) -> Result<DomainGrids<f64>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    read_score_csv(file).map_err(|e| CliError::Usage(e.message))
}

pub fn render(comparison: &Comparison) -> String {
    let width = comparison
        .domains
        .iter()
        .map(|d| d.domain.len())
        .max()
        .unwrap_or(0)
        .max(7)
        + 2;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}{:>14}{:>18}{:>11}{:>15}",
        "domain", "model_range", "framework_range", "model_sd", "framework_sd"
    );
    let mut row = |name: &str, stats: &FactorStatsF64| {
        let [a, b, c, d] = stats.display();
        let _ = writeln!(out, "{name:<width$}{a:>14}{b:>18}{c:>11}{d:>15}");
    };
    for d in &comparison.domains {
        row(if d.domain.is_empty() { "-" } else { &d.domain }, &d.stats);
    }
    row("overall", &comparison.overall);
    out
}
