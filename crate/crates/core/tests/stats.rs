mod common;

use std::collections::BTreeMap;

use harness_core::eval::stats::{cross_factor_stats, overall_factor_summary, read_score_csv, DomainGrids};
use harness_core::queue::irt::{irt_probability, IrtItem};
use harness_core::queue::subset::{estimate_full, select_subset};
use harness_core::{FactorStatsF32, FactorStatsF64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Published per-domain rows: model range, framework range, model SD,
/// framework SD, in CSV domain order.
const PUBLISHED: [(&str, [f64; 4]); 6] = [
    ("MACS Travel", [23.6, 17.7, 12.3, 9.4]),
    ("MACS Mortgage", [13.7, 8.7, 7.5, 4.5]),
    ("ConVerse Travel Planning", [16.8, 20.1, 8.7, 10.5]),
    ("ConVerse Real Estate", [17.6, 16.0, 9.5, 8.4]),
    ("MultiAgentBench Research", [3.8, 5.6, 2.0, 2.8]),
    ("MultiAgentBench Bargaining", [9.6, 6.4, 4.9, 3.3]),
];

fn values(s: &FactorStatsF64) -> [f64; 4] {
    [s.cross_model_range, s.cross_framework_range, s.cross_model_sd, s.cross_framework_sd]
}

fn per_domain(grids: &DomainGrids<f64>) -> Vec<FactorStatsF64> {
    grids.iter().map(|(_, g)| cross_factor_stats(g).unwrap()).collect()
}

#[test]
fn every_published_domain_row_is_reproduced() {
    let grids = common::table3_grids();
    assert_eq!(grids.len(), 6);
    for ((domain, grid), (name, want)) in grids.iter().zip(PUBLISHED) {
        assert_eq!(domain, name);
        let got = values(&cross_factor_stats(grid).unwrap());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 0.05, "{domain}: got {got:?}, want {want:?}");
        }
    }
}

/// Population SD (divide by n) is a different statistic; it must not land
/// on the published values.
#[test]
fn population_sd_does_not_match() {
    let population_sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let grids = common::table3_grids();
    let (_, travel) = &grids[0];
    let rows: Vec<Vec<f64>> = travel
        .frameworks()
        .iter()
        .map(|f| travel.models().iter().map(|m| travel.get(f, m).unwrap()).collect())
        .collect();
    let cols: Vec<Vec<f64>> = (0..3).map(|m| rows.iter().map(|r| r[m]).collect()).collect();
    let model_sd = rows.iter().map(|r| population_sd(r)).sum::<f64>() / 3.0;
    let framework_sd = cols.iter().map(|c| population_sd(c)).sum::<f64>() / 3.0;
    assert!((model_sd - 12.3).abs() > 0.05, "{model_sd}");
    assert!((framework_sd - 9.4).abs() > 0.05, "{framework_sd}");

    let sample = cross_factor_stats(travel).unwrap();
    let ratio = (3.0f64 / 2.0).sqrt();
    assert!((sample.cross_model_sd - model_sd * ratio).abs() < 1e-9);
}

#[test]
fn single_precision_gives_the_same_display() {
    let text = std::fs::read_to_string(common::manifest_dir().join("tests/data/table3.csv")).unwrap();
    let grids32: DomainGrids<f32> = read_score_csv(text.as_bytes()).unwrap();
    let stats32: Vec<FactorStatsF32> = grids32.iter().map(|(_, g)| cross_factor_stats(g).unwrap()).collect();
    let stats64 = per_domain(&common::table3_grids());
    for (a, b) in stats32.iter().zip(&stats64) {
        assert_eq!(a.display(), b.display());
    }
    let overall = overall_factor_summary(&stats32).unwrap();
    assert_eq!(overall.display(), ["14.2", "12.4", "7.5", "6.5"]);
}

#[test]
fn headline_cell_gap() {
    let grids = common::table3_grids();
    let (_, travel) = &grids[0];
    let gap = travel.get("smolagents", "Haiku 4.5").unwrap() - travel.get("LlamaIndex", "Haiku 4.5").unwrap();
    assert!((gap - 30.9).abs() < 1e-9, "{gap}");
}

/// With per-item expected scores instead of Bernoulli draws, the
/// stratified extrapolation lands within 2 pp for nearly every seed.
#[test]
fn stratified_subset_tracks_continuous_scores() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<IrtItem<f64>> = (0..1000)
            .map(|i| IrtItem::new(format!("p{i:04}"), rng.random_range(0.5..2.0), rng.random_range(-3.0..3.0)).unwrap())
            .collect();
        let scores: BTreeMap<String, f64> = items
            .iter()
            .map(|it| (it.task_id.clone(), irt_probability(0.5, it.a, it.b).unwrap()))
            .collect();
        let full = scores.values().sum::<f64>() / scores.len() as f64;
        let plan = select_subset(&items, 100, seed).unwrap();
        let observed: BTreeMap<String, f64> = plan.selected.iter().map(|id| (id.clone(), scores[id])).collect();
        let estimate = estimate_full(&plan, &observed).unwrap();
        if (estimate - full).abs() <= 0.02 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100");
}
