use std::collections::BTreeSet;

use afsc_core::active::run_episode;
use afsc_core::bank::{generate_synthetic_bank, FeatureBank, SyntheticSpec};
use afsc_core::bench::{heatmap_sweep, mean_ci95, paired_comparison, run_episodes};
use afsc_core::criteria::{lpr_scores, LprMode, OracleConfig};
use afsc_core::inference::{fit_random_multi, EmConfig};
use afsc_core::preprocess::preprocess_episode;
use afsc_core::seed::{derive_seed, rng_from_seed};
use afsc_core::{run_benchmark, sample_task, BenchmarkConfig, PipelineConfig, StrategyRegistry};

fn bank(classes: usize, spread: f64, within: f64, seed: u64) -> FeatureBank {
    generate_synthetic_bank(&SyntheticSpec {
        classes,
        dim: 8,
        samples_per_class: 60,
        center_spread: spread,
        within_std: within,
        seed,
    })
    .unwrap()
}

fn registry() -> StrategyRegistry {
    StrategyRegistry::builtin(OracleConfig::default())
}

#[test]
fn separable_blobs_are_classified_perfectly() {
    let b = bank(3, 5.0, 0.01, 1);
    let cfg = BenchmarkConfig {
        ways: 3,
        labels: 3,
        samples: 30,
        ..Default::default()
    };
    let lss = registry().get("lss").unwrap();
    for seed in 0..20 {
        let mut task = sample_task(&b, &cfg, &mut rng_from_seed(seed)).unwrap();
        let result = run_episode(
            &b,
            &mut task,
            lss.as_ref(),
            &PipelineConfig::default(),
            seed,
        )
        .unwrap();
        assert_eq!(result.weighted_accuracy, 1.0, "episode {seed}");
    }
}

#[test]
fn round_one_takes_the_lowest_lpr_of_each_cluster() {
    let b = bank(8, 1.0, 0.8, 2);
    let pipeline = PipelineConfig::default();
    let lss = registry().get("lss").unwrap();
    let mut rng = rng_from_seed(2);
    for episode in 0..100u64 {
        let cfg = BenchmarkConfig {
            ways: 4,
            labels: 9,
            samples: 40,
            ..Default::default()
        };
        let mut task = sample_task(&b, &cfg, &mut rng).unwrap();
        let raw = task.raw_features(&b);
        let result = run_episode(&b, &mut task, lss.as_ref(), &pipeline, episode).unwrap();

        // recompute the unlabelled clustering the loop started from
        let z = preprocess_episode(raw.view(), &pipeline.smoothing)
            .unwrap()
            .smoothed;
        let em = EmConfig {
            seed: derive_seed(episode, 1),
            ..pipeline.em.clone()
        };
        let model = fit_random_multi(z.view(), 4, &em).unwrap();
        let scores = lpr_scores(z.view(), &model, LprMode::Simplified);

        let first = &result.traces[0];
        assert_eq!(first.selected.len(), 4);
        assert_eq!(first.selected.iter().collect::<BTreeSet<_>>().len(), 4);
        if first.substitutions == 0 {
            let clusters: BTreeSet<usize> = first.selected.iter().map(|&i| model.hard[i]).collect();
            assert_eq!(clusters.len(), 4, "one pick per cluster");
            for &i in &first.selected {
                let k = model.hard[i];
                let best = (0..z.nrows())
                    .filter(|&j| model.hard[j] == k)
                    .min_by(|&a, &c| {
                        scores.assigned[a]
                            .total_cmp(&scores.assigned[c])
                            .then(a.cmp(&c))
                    })
                    .unwrap();
                assert_eq!(i, best, "episode {episode}, cluster {k}");
            }
        }

        // later rounds never re-pick a labelled sample and batch by K
        let mut seen = BTreeSet::new();
        for (r, t) in result.traces.iter().enumerate() {
            let expected = if r == 0 { 4 } else { 4.min(9 - seen.len()) };
            assert_eq!(t.selected.len(), expected);
            for &i in &t.selected {
                assert!(seen.insert(i), "sample {i} picked twice");
            }
        }
        assert_eq!(seen.len(), 9);
    }
}

#[test]
fn single_task_benchmark_has_zero_interval() {
    let b = bank(5, 1.0, 0.5, 3);
    let cfg = BenchmarkConfig {
        tasks: 1,
        samples: 30,
        ..Default::default()
    };
    let report = run_benchmark(
        &b,
        &cfg,
        &PipelineConfig::default(),
        registry().get("lss").unwrap().as_ref(),
    )
    .unwrap();
    assert_eq!(report.ci95, 0.0);
    assert_eq!(report.episodes.len(), 1);
}

#[test]
fn active_beats_random_on_a_separable_bank() {
    let b = bank(10, 2.0, 0.5, 4);
    let cfg = BenchmarkConfig {
        ways: 5,
        labels: 5,
        samples: 40,
        tasks: 200,
        seed: 4,
        ..Default::default()
    };
    let r = registry();
    let c = paired_comparison(
        &b,
        &cfg,
        &PipelineConfig::default(),
        r.get("lss").unwrap().as_ref(),
        r.get("random").unwrap().as_ref(),
    )
    .unwrap();
    let pooled = (c.active_ci95.powi(2) + c.baseline_ci95.powi(2)).sqrt();
    assert!(c.active_mean >= c.baseline_mean + 2.0 * pooled, "{c:?}");
}

#[test]
fn heatmap_conventions_and_gap_closing() {
    let b = bank(6, 2.0, 0.5, 5);
    let base = BenchmarkConfig {
        ways: 3,
        tasks: 40,
        seed: 5,
        ..Default::default()
    };
    let r = registry();
    let cells = heatmap_sweep(
        &b,
        &base,
        &PipelineConfig::default(),
        &[3, 24, 30],
        &[24],
        &[2.0],
        r.get("lss").unwrap().as_ref(),
        r.get("random").unwrap().as_ref(),
    )
    .unwrap();
    let diff = |labels: usize| cells.iter().find(|c| c.labels == labels).unwrap().diff;
    assert_eq!(diff(30), 0.0, "N < labels reports 0");
    assert_eq!(diff(24), 0.0, "everything labelled");
    assert!(diff(24) <= diff(3));
    assert!(diff(3) > 0.0);
}

#[test]
fn more_labels_do_not_hurt_on_average() {
    let b = bank(8, 1.0, 0.9, 6);
    let pipeline = PipelineConfig::default();
    let lss = registry().get("lss").unwrap();
    let run = |labels| {
        let cfg = BenchmarkConfig {
            ways: 3,
            labels,
            samples: 30,
            tasks: 500,
            seed: 6,
            ..Default::default()
        };
        let acc: Vec<f64> = run_episodes(&b, &cfg, &pipeline, lss.as_ref())
            .unwrap()
            .iter()
            .map(|r| r.weighted_accuracy)
            .collect();
        let (mean, std, _) = mean_ci95(&acc);
        (mean, std / (acc.len() as f64).sqrt())
    };
    let (few, se) = run(3);
    let (more, _) = run(6);
    assert!(more >= few - se, "{more} < {few} - {se}");
}
