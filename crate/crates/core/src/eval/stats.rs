//! Cross-factor variability of a framework × model score grid.
//!
//! The cross-model range is the mean over frameworks of the best-minus-worst
//! model score; the cross-framework range swaps the roles. Standard
//! deviations use the sample (n − 1) denominator and are averaged the same
//! way.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::scalar::Scalar;

/// Percent-scale scores on a framework × model grid. Cells may be missing
/// until the grid is complete.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    frameworks: Vec<String>,
    models: Vec<String>,
    cells: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> Default for ScoreMatrix<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn new() -> Self {
        Self {
            frameworks: Vec::new(),
            models: Vec::new(),
            cells: Vec::new(),
        }
    }

    /// Builds a complete grid from rows (one per framework).
    pub fn from_rows(frameworks: &[&str], models: &[&str], rows: &[&[T]]) -> Result<Self, HarnessError> {
        let mut m = Self::new();
        if rows.len() != frameworks.len() {
            return Err(HarnessError::config("one row per framework required"));
        }
        for (fw, row) in frameworks.iter().zip(rows) {
            if row.len() != models.len() {
                return Err(HarnessError::config(format!("row {fw:?} has {} cells", row.len())));
            }
            for (model, score) in models.iter().zip(row.iter()) {
                m.insert(fw, model, *score)?;
            }
        }
        Ok(m)
    }

    fn axis_index(axis: &mut Vec<String>, label: &str) -> usize {
        match axis.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                axis.push(label.to_string());
                axis.len() - 1
            }
        }
    }

    /// Adds one cell. Axis order follows first appearance.
    pub fn insert(&mut self, framework: &str, model: &str, score: T) -> Result<(), HarnessError> {
        if !score.is_finite() {
            return Err(HarnessError::config(format!(
                "score for ({framework}, {model}) is not finite"
            )));
        }
        let f = Self::axis_index(&mut self.frameworks, framework);
        let m = Self::axis_index(&mut self.models, model);
        for row in &mut self.cells {
            row.resize(self.models.len(), None);
        }
        self.cells.resize(self.frameworks.len(), vec![None; self.models.len()]);
        let cell = &mut self.cells[f][m];
        if cell.is_some() {
            return Err(HarnessError::config(format!(
                "duplicate score for ({framework}, {model})"
            )));
        }
        *cell = Some(score);
        Ok(())
    }

    pub fn frameworks(&self) -> &[String] {
        &self.frameworks
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn get(&self, framework: &str, model: &str) -> Option<T> {
        let f = self.frameworks.iter().position(|l| l == framework)?;
        let m = self.models.iter().position(|l| l == model)?;
        self.cells[f][m]
    }

    /// `(framework, model)` pairs without a score.
    pub fn missing_cells(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (f, row) in self.cells.iter().enumerate() {
            for (m, cell) in row.iter().enumerate() {
                if cell.is_none() {
                    out.push((self.frameworks[f].clone(), self.models[m].clone()));
                }
            }
        }
        out
    }

    fn complete_rows(&self) -> Result<Vec<Vec<T>>, HarnessError> {
        let missing = self.missing_cells();
        if !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(|(f, m)| format!("{f}/{m}")).collect();
            return Err(HarnessError::config(format!(
                "incomplete score grid, missing cells: {}",
                names.join(", ")
            )));
        }
        Ok(self
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.unwrap_or_default()).collect())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorStats<T> {
    pub cross_model_range: T,
    pub cross_framework_range: T,
    pub cross_model_sd: T,
    pub cross_framework_sd: T,
}

impl<T: Scalar> FactorStats<T> {
    /// The four statistics rounded half-up to one decimal, in field order.
    pub fn display(&self) -> [String; 4] {
        [
            self.cross_model_range,
            self.cross_framework_range,
            self.cross_model_sd,
            self.cross_framework_sd,
        ]
        .map(|v| format!("{:.1}", round_half_up(v.to_f64_lossy(), 1)))
    }
}

fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v) / T::from_usize_lossy(values.len())
}

fn spread<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let min = values.iter().fold(T::infinity(), |a, &b| a.min(b));
    max - min
}

/// Sample standard deviation; needs at least two values.
pub fn sample_sd<T: Scalar>(values: &[T]) -> Option<T> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss = values.iter().fold(T::zero(), |acc, &v| acc + (v - m) * (v - m));
    Some((ss / T::from_usize_lossy(values.len() - 1)).sqrt())
}

pub fn cross_factor_stats<T: Scalar>(matrix: &ScoreMatrix<T>) -> Result<FactorStats<T>, HarnessError> {
    let rows = matrix.complete_rows()?;
    // a single-level axis contributes zero spread and zero SD
    if matrix.frameworks.len() * matrix.models.len() < 2 {
        return Err(HarnessError::config("need ≥2 cells"));
    }
    let columns: Vec<Vec<T>> = (0..matrix.models.len())
        .map(|m| rows.iter().map(|row| row[m]).collect())
        .collect();
    let sd = |v: &Vec<T>| sample_sd(v).unwrap_or_default();
    Ok(FactorStats {
        cross_model_range: mean(&rows.iter().map(|r| spread(r)).collect::<Vec<_>>()),
        cross_framework_range: mean(&columns.iter().map(|c| spread(c)).collect::<Vec<_>>()),
        cross_model_sd: mean(&rows.iter().map(sd).collect::<Vec<_>>()),
        cross_framework_sd: mean(&columns.iter().map(sd).collect::<Vec<_>>()),
    })
}

/// Unweighted mean of each statistic across domains.
pub fn overall_factor_summary<T: Scalar>(per_domain: &[FactorStats<T>]) -> Result<FactorStats<T>, HarnessError> {
    if per_domain.is_empty() {
        return Err(HarnessError::config("no domains to summarize"));
    }
    let field = |f: fn(&FactorStats<T>) -> T| mean(&per_domain.iter().map(f).collect::<Vec<_>>());
    Ok(FactorStats {
        cross_model_range: field(|s| s.cross_model_range),
        cross_framework_range: field(|s| s.cross_framework_range),
        cross_model_sd: field(|s| s.cross_model_sd),
        cross_framework_sd: field(|s| s.cross_framework_sd),
    })
}

/// Half-up rounding for display. Values within 1e-9 of a tie round up.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x * scale;
    let floor = scaled.floor();
    let rounded = if scaled - floor >= 0.5 - 1e-9 { floor + 1.0 } else { floor };
    rounded / scale
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRow {
    framework: String,
    model: String,
    score: f64,
    #[serde(default)]
    domain: Option<String>,
}

/// Grids by domain, in order of first appearance.
pub type DomainGrids<T> = Vec<(String, ScoreMatrix<T>)>;

/// Reads CSV with header `framework,model,score` and an optional `domain`
/// column. Rows without a domain go to the domain named `""`.
pub fn read_score_csv<T: Scalar, R: Read>(reader: R) -> Result<DomainGrids<T>, HarnessError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut grids: DomainGrids<T> = Vec::new();
    for (i, row) in csv.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| HarnessError::config(format!("score CSV row {}: {e}", i + 1)))?;
        let domain = row.domain.unwrap_or_default();
        let idx = match grids.iter().position(|(d, _)| *d == domain) {
            Some(idx) => idx,
            None => {
                grids.push((domain, ScoreMatrix::new()));
                grids.len() - 1
            }
        };
        grids[idx].1.insert(&row.framework, &row.model, T::lit(row.score))?;
    }
    Ok(grids)
}
