mod common;

use std::collections::HashSet;

use common::*;
use osal_core::embed::{build_open_set_pool, PoolSpec};
use osal_core::probe::{train_probe, ProbeConfig, ProbeModel};
use osal_core::purity::TemperatureGrid;
use osal_core::sim::precision_metric;
use osal_core::strategy::*;
use osal_core::synth::{generate_synthetic, SynthSpec};
use proptest::prelude::*;

#[test]
fn random_precision_tracks_the_pool_ood_ratio() {
    let (_, manifest, _) = generate_synthetic(&benchmark_spec(21)).unwrap();
    let spec = PoolSpec {
        mismatch_ratio: 0.5,
        ood_ratio: 0.4,
        seed: 21,
    };
    let pool = build_open_set_pool(&manifest, &spec).unwrap();
    let mean = (0..100u64)
        .map(|seed| precision_metric(&random_select(&pool, 50, seed).selected, &manifest, &pool.id_classes).unwrap())
        .sum::<f64>()
        / 100.0;
    assert!((mean - 60.0).abs() <= 3.0, "mean precision {mean}");
}

#[test]
fn clipnal_round_on_a_separable_pool_is_nearly_pure() {
    for seed in 0..3 {
        let (images, manifest, prompts) = generate_synthetic(&benchmark_spec(seed)).unwrap();
        let spec = PoolSpec {
            mismatch_ratio: 0.5,
            ood_ratio: 0.4,
            seed,
        };
        let mut pool = build_open_set_pool(&manifest, &spec).unwrap();
        let initial = random_select(&pool, 20, seed).selected;
        pool.annotate(&manifest, &initial).unwrap();
        let model = train_probe(&images, &pool.labeled_id, pool.k(), &ProbeConfig::default()).unwrap();
        let sel = clipnal_select(&pool, &images, &prompts, &model, 20, &TemperatureGrid::default()).unwrap();
        let precision = precision_metric(&sel.query.selected, &manifest, &pool.id_classes).unwrap();
        assert!(
            precision >= 95.0,
            "seed {seed}: precision {precision}, tau {:?}",
            sel.tau
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selections_are_fresh_and_distinct(
        strategy in prop::sample::select(StrategyKind::ALL.to_vec()),
        labeled in 0usize..40,
        budget in 1usize..60,
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec { per_class: 12, dim: 8, ..benchmark_spec(seed % 5) };
        let (images, manifest, prompts) = generate_synthetic(&spec).unwrap();
        let mut pool = build_open_set_pool(&manifest, &PoolSpec { mismatch_ratio: 0.5, ood_ratio: 0.3, seed }).unwrap();
        let first = random_select(&pool, labeled, seed ^ 1).selected;
        pool.annotate(&manifest, &first).unwrap();
        let model = if pool.labeled_id.is_empty() {
            ProbeModel::zeros(pool.k(), images.dim())
        } else {
            train_probe(&images, &pool.labeled_id, pool.k(), &ProbeConfig { steps: 20, ..ProbeConfig::default() }).unwrap()
        };
        let grid = TemperatureGrid { min: 0.01, max: 1.0, steps: 40 };
        let q = match strategy {
            StrategyKind::Random => random_select(&pool, budget, seed),
            StrategyKind::Conf => top_by_score(&pool.unlabeled, &conf_scores(&model, &images, &pool.unlabeled).unwrap(), budget),
            StrategyKind::Coreset => coreset_select(&images, &pool.labeled_indices(), &pool.unlabeled, budget).unwrap(),
            StrategyKind::Clipnal => clipnal_select(&pool, &images, &prompts, &model, budget, &grid).unwrap().query,
        };
        let unlabeled: HashSet<usize> = pool.unlabeled.iter().copied().collect();
        let distinct: HashSet<usize> = q.selected.iter().copied().collect();
        prop_assert_eq!(q.selected.len(), budget.min(pool.unlabeled.len()));
        prop_assert_eq!(distinct.len(), q.selected.len());
        prop_assert!(q.selected.iter().all(|i| unlabeled.contains(i)));
        if let Some(scores) = &q.scores {
            prop_assert_eq!(scores.len(), q.selected.len());
        }
    }
}
