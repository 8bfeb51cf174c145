use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::irt::IrtItem;
use super::TaskQueue;
use crate::error::HarnessError;
use crate::model::Task;
use crate::scalar::Scalar;
use crate::Document;

const MAX_STRATA: usize = 5;

/// Difficulty-stratified subset of a task pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub k: usize,
    pub seed: u64,
    /// Selected task ids, grouped by stratum.
    pub selected: Vec<String>,
    /// Stratum of every task in the pool.
    pub strata: BTreeMap<String, usize>,
    /// Share of the pool in each stratum; sums to 1.
    pub weights: Vec<f64>,
    /// Selected tasks per stratum.
    pub allocation: Vec<usize>,
}

impl SubsetPlan {
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("plans always serialize");
        std::fs::write(path, text)
            .map_err(|e| HarnessError::environment(format!("cannot write {}: {e}", path.display())))
    }
}

/// Largest-remainder apportionment of `k` seats over `sizes`; ties go to the
/// lower index.
fn apportion(k: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut seats: Vec<usize> = sizes.iter().map(|s| k * s / n).collect();
    let mut remainders: Vec<(usize, usize)> = sizes.iter().map(|s| (k * s % n, 0)).collect();
    for (i, r) in remainders.iter_mut().enumerate() {
        r.1 = i;
    }
    remainders.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let left = k - seats.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(left) {
        seats[i] += 1;
    }
    seats
}

/// Splits the pool into `min(k, 5)` equal-count strata by difficulty and
/// draws an apportioned sample from each with a seeded generator.
pub fn select_subset<T: Scalar>(items: &[IrtItem<T>], k: usize, seed: u64) -> Result<SubsetPlan, HarnessError> {
    let n = items.len();
    if k == 0 || k > n {
        return Err(HarnessError::config(format!("subset size k={k} must be in 1..={n}")));
    }
    let mut order: Vec<&IrtItem<T>> = items.iter().collect();
    order.sort_by(|x, y| {
        x.b.partial_cmp(&y.b)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| x.task_id.cmp(&y.task_id))
    });
    let n_strata = k.min(MAX_STRATA);
    let mut members: Vec<Vec<&str>> = vec![Vec::new(); n_strata];
    let mut strata = BTreeMap::new();
    for (rank, item) in order.iter().enumerate() {
        let s = rank * n_strata / n;
        members[s].push(&item.task_id);
        strata.insert(item.task_id.clone(), s);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let allocation = apportion(k, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::with_capacity(k);
    for (group, &take) in members.iter().zip(&allocation) {
        let mut picks = rand::seq::index::sample(&mut rng, group.len(), take).into_vec();
        picks.sort_unstable();
        selected.extend(picks.into_iter().map(|i| group[i].to_string()));
    }
    Ok(SubsetPlan {
        k,
        seed,
        selected,
        strata,
        weights: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        allocation,
    })
}

/// `Σ weight × stratum mean` over the subset scores. Strata that received
/// no selection are left out and the remaining weights renormalized.
/// `None` when a sampled stratum has no scores yet.
pub fn estimate_full(plan: &SubsetPlan, scores: &BTreeMap<String, f64>) -> Option<f64> {
    let mut sums = vec![(0.0, 0usize); plan.weights.len()];
    for id in &plan.selected {
        if let (Some(&s), Some(score)) = (plan.strata.get(id), scores.get(id)) {
            sums[s].0 += score;
            sums[s].1 += 1;
        }
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for (s, &(sum, count)) in sums.iter().enumerate() {
        if plan.allocation[s] == 0 {
            continue;
        }
        if count == 0 {
            return None;
        }
        total += plan.weights[s] * sum / count as f64;
        weight += plan.weights[s];
    }
    (weight > 0.0).then(|| total / weight)
}

/// Runs only a pre-selected informative subset and extrapolates the full
/// score from it.
pub struct InformativeSubsetQueue {
    tasks: BTreeMap<String, Task>,
    pending: VecDeque<String>,
    plan: SubsetPlan,
    scores: BTreeMap<String, f64>,
}

impl InformativeSubsetQueue {
    /// Every task must carry item parameters.
    pub fn new(tasks: Vec<Task>, k: usize, seed: u64) -> Result<Self, HarnessError> {
        let mut items = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let params = task.metadata.item_params.ok_or_else(|| {
                HarnessError::config(format!(
                    "subset selection needs item_params on task {}",
                    task.task_id
                ))
            })?;
            items.push(IrtItem::new(&task.task_id, params.a, params.b)?);
        }
        let plan = select_subset(&items, k, seed)?;
        Ok(Self {
            tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
            pending: plan.selected.iter().cloned().collect(),
            plan,
            scores: BTreeMap::new(),
        })
    }

    pub fn plan(&self) -> &SubsetPlan {
        &self.plan
    }

    pub fn estimate(&self) -> Option<f64> {
        estimate_full(&self.plan, &self.scores)
    }
}

impl TaskQueue for InformativeSubsetQueue {
    fn next(&mut self) -> Option<Task> {
        let id = self.pending.pop_front()?;
        self.tasks.get(&id).cloned()
    }

    fn report_result(&mut self, task_id: &str, _correct: bool, score: f64) {
        self.scores.insert(task_id.to_string(), score);
    }

    fn is_done(&self) -> bool {
        self.pending.is_empty()
    }

    fn summary(&self) -> Document {
        let mut doc = Document::new();
        doc.insert("queue".into(), json!("subset"));
        doc.insert("k".into(), json!(self.plan.k));
        doc.insert("estimated_full_score".into(), json!(self.estimate()));
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(bs: &[f64]) -> Vec<IrtItem<f64>> {
        bs.iter()
            .enumerate()
            .map(|(i, &b)| IrtItem::new(format!("t{i:03}"), 1.0, b).unwrap())
            .collect()
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(10, &[20, 20, 20, 20, 20]), [2, 2, 2, 2, 2]);
        assert_eq!(apportion(7, &[3, 3, 4]), [2, 2, 3]);
        assert_eq!(apportion(2, &[1, 1, 1]), [1, 1, 0]);
    }

    #[test]
    fn plan_shape_and_determinism() {
        let pool = items(&(0..103).map(|i| (i as f64 * 0.37).sin() * 3.0).collect::<Vec<_>>());
        let plan = select_subset(&pool, 10, 7).unwrap();
        assert_eq!(plan.selected.len(), 10);
        assert_eq!(plan.weights.len(), 5);
        assert!((plan.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(plan, select_subset(&pool, 10, 7).unwrap());
        assert_ne!(plan.selected, select_subset(&pool, 10, 8).unwrap().selected);
        let mut unique = plan.selected.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 10);
        assert!(select_subset(&pool, 0, 1).is_err());
        assert!(select_subset(&pool, 104, 1).is_err());
    }

    #[test]
    fn constant_scores_estimate_exactly() {
        let pool = items(&[0.5; 40]);
        for k in [1, 3, 17, 40] {
            let plan = select_subset(&pool, k, 1).unwrap();
            let scores = plan.selected.iter().map(|id| (id.clone(), 1.0)).collect();
            assert!((estimate_full(&plan, &scores).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_mean_of_two_strata() {
        let plan = SubsetPlan {
            k: 4,
            seed: 0,
            selected: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            strata: [("a", 0), ("b", 0), ("c", 1), ("d", 1)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            weights: vec![0.5, 0.5],
            allocation: vec![2, 2],
        };
        let scores: BTreeMap<String, f64> = [("a", 0.0), ("b", 0.4), ("c", 0.8), ("d", 0.8)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        assert!((estimate_full(&plan, &scores).unwrap() - 0.5).abs() < 1e-12);
        let partial: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into();
        assert_eq!(estimate_full(&plan, &partial), None);
    }
}
