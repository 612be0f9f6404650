mod common;

use common::*;
use semhallu::harness::{run, DataSource, Pipeline, RunConfig, RunResult, Runner, SweepParam};
use semhallu::pvdh::Merging;
use semhallu::store::write_bank;
use semhallu::synthetic::{generate, SyntheticSpec};
use semhallu::Error;

fn small_config(pipeline: Pipeline, k_shot: usize, episodes: usize) -> RunConfig {
    let mut c = RunConfig {
        data: DataSource::Synthetic(small_spec(3)),
        pipeline,
        ..RunConfig::default()
    };
    c.episodes.n_way = 4;
    c.episodes.k_shot = k_shot;
    c.episodes.m_query = 10;
    c.episodes.episode_count = episodes;
    c.episodes.master_seed = 11;
    c.selection = Some(semhallu::relations::SelectionParams { p: 6, q: 2, k: 1 });
    c.pvdh.resample_count = 30;
    c.fusion.train.iterations = 300;
    c.classifier.iterations = 200;
    c
}

fn without_timestamp(mut r: RunResult) -> RunResult {
    r.metadata.timestamp = 0;
    r
}

#[test]
fn baseline_run_is_reproducible() {
    let mut config = RunConfig {
        pipeline: Pipeline::Baseline,
        ..RunConfig::default()
    };
    config.episodes.episode_count = 200;
    config.episodes.master_seed = 42;
    let a = run(&config).unwrap();
    let b = run(&config).unwrap();
    assert_eq!(without_timestamp(a.clone()), without_timestamp(b));
    assert_eq!(a.per_episode.len(), 200);
    assert!(a.ci95 >= 0.0);
    assert!(a.mean_accuracy > 0.2 && a.mean_accuracy <= 1.0);
    assert!(a.metadata.prng.starts_with("ChaCha8"));
}

#[test]
fn worker_count_does_not_change_results() {
    let config = small_config(Pipeline::Full, 1, 12);
    let runner = Runner::from_source(&config.data).unwrap();
    let one = runner.run(&config).unwrap();
    let runner3 = Runner::from_source(&config.data).unwrap().with_workers(Some(3));
    let three = runner3.run(&config).unwrap();
    assert_eq!(one.to_json().unwrap().len(), three.to_json().unwrap().len());
    assert_eq!(without_timestamp(one), without_timestamp(three));
}

#[test]
fn row_counts_compose() {
    let (n, k, rc) = (4, 3, 30);
    let runner = Runner::from_source(&small_config(Pipeline::Full, k, 1).data).unwrap();
    let rows = |p| runner.run(&small_config(p, k, 2)).unwrap().metadata.train_rows;
    let full = rows(Pipeline::Full);
    assert_eq!(full.support, n * k);
    assert_eq!(full.ivdh, n * k);
    assert_eq!(full.prototype, n);
    assert_eq!(full.resampled, n * rc);
    assert_eq!(full.total(), n * k + n * k + n + n * rc);
    let base = rows(Pipeline::Baseline);
    assert_eq!(base.total(), n * k);
    assert_eq!(rows(Pipeline::IvdhG).total(), 2 * n * k);
    assert_eq!(rows(Pipeline::PvdhP).total(), n * k + n);
    assert_eq!(rows(Pipeline::Pvdh).total(), n * k + n + n * rc);
    assert_eq!(rows(Pipeline::PvdhV).total(), n * k + n + n * rc);
}

#[test]
fn sweep_matches_individual_runs() {
    let config = small_config(Pipeline::Pvdh, 1, 6);
    let runner = Runner::from_source(&config.data).unwrap();
    let swept = runner.sweep(&config, SweepParam::ResampleCount, &[30.0, 0.0]).unwrap();
    assert_eq!(swept.len(), 2);
    assert_eq!(
        without_timestamp(swept[0].clone()),
        without_timestamp(runner.run(&config).unwrap())
    );
    assert_eq!(swept[1].config.pvdh.resample_count, 0);
    assert_eq!(swept[1].metadata.train_rows.resampled, 0);
    assert!(matches!(
        "beta".parse::<SweepParam>().unwrap_err(),
        Error::UnknownParameter(_)
    ));
    let alphas = runner.sweep(&config, SweepParam::Alpha, &[0.0, 0.6, 1.0]).unwrap();
    assert_eq!(alphas.len(), 3);
}

#[test]
fn ci_halves_when_episodes_quadruple() {
    let runner = Runner::from_source(&small_config(Pipeline::Baseline, 1, 1).data).unwrap();
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let mut c = small_config(Pipeline::Baseline, 1, 150);
        c.episodes.master_seed = seed;
        let short = runner.run(&c).unwrap();
        c.episodes.master_seed = seed + 100;
        c.episodes.episode_count = 600;
        let long = runner.run(&c).unwrap();
        ratios.push(long.ci95 / short.ci95);
    }
    let mean = ratios.iter().sum::<f64>() / 3.0;
    assert!((mean - 0.5).abs() <= 0.1, "ratios {ratios:?}");
}

#[test]
fn zero_alpha_without_resampling_reduces_to_support_means() {
    let mut config = small_config(Pipeline::Pvdh, 3, 1);
    config.pvdh.alpha = 0.0;
    config.pvdh.resample_count = 0;
    let runner = Runner::from_source(&config.data).unwrap();
    let rows = runner.episode_projection(&config, 0).unwrap();
    let labels: Vec<String> = rows
        .iter()
        .filter(|r| r.provenance == "prototype")
        .map(|r| r.label.clone())
        .collect();
    assert_eq!(labels.len(), 4);
    for label in labels {
        let support: Vec<&Vec<f64>> = rows
            .iter()
            .filter(|r| r.label == label && r.provenance == "support")
            .map(|r| &r.feature)
            .collect();
        assert_eq!(support.len(), 3);
        let proto = &rows
            .iter()
            .find(|r| r.label == label && r.provenance == "prototype")
            .unwrap()
            .feature;
        for j in 0..proto.len() {
            let mean = support.iter().map(|s| s[j]).sum::<f64>() / 3.0;
            assert!((proto[j] - mean).abs() < 1e-12);
        }
    }
    assert_eq!(rows.iter().filter(|r| r.provenance == "query").count(), 40);
    assert_eq!(rows.iter().filter(|r| r.provenance == "resampled").count(), 0);
}

#[test]
fn merging_strategies_agree_at_one_shot() {
    let mut config = small_config(Pipeline::Pvdh, 1, 5);
    let runner = Runner::from_source(&config.data).unwrap();
    let mut results = Vec::new();
    for merging in [Merging::AfterEstimation, Merging::BeforeEstimation, Merging::NoMerging] {
        config.pvdh.merging = merging;
        results.push(runner.run(&config).unwrap().per_episode);
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0], results[2]);
}

#[test]
fn errors_carry_the_episode_index() {
    let mut config = small_config(Pipeline::Baseline, 1, 3);
    config.episodes.m_query = 100;
    let err = run(&config).unwrap_err();
    assert!(matches!(err, Error::Episode { .. }), "{err}");
    assert!(err.to_string().contains("insufficient samples"), "{err}");

    let mut config = small_config(Pipeline::Baseline, 1, 3);
    config.episodes.n_way = 9;
    assert!(run(&config).unwrap_err().to_string().contains("insufficient classes"));

    let mut config = small_config(Pipeline::Pvdh, 1, 3);
    config.selection = Some(semhallu::relations::SelectionParams { p: 1, q: 2, k: 1 });
    assert!(run(&config).is_err());
}

#[test]
fn result_echo_reproduces_the_run() {
    let config = small_config(Pipeline::Pvdh, 1, 4);
    let first = run(&config).unwrap();
    let text = first.to_json().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["config", "mean_accuracy", "ci95", "per_episode", "metadata"] {
        assert!(parsed.get(key).is_some(), "missing {key}");
    }
    for key in ["prng", "version", "timestamp"] {
        assert!(parsed["metadata"].get(key).is_some(), "missing metadata.{key}");
    }
    let echoed = RunConfig::from_json(&parsed["config"].to_string()).unwrap();
    let second = run(&echoed).unwrap();
    assert_eq!(second.per_episode, first.per_episode);
}

#[test]
fn file_sources_resolve_relative_paths() {
    let spec = SyntheticSpec {
        seed: 3,
        ..small_spec(3)
    };
    let (f, s) = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bank(&f, dir.path().join("f.fshb")).unwrap();
    write_bank(&s, dir.path().join("s.fssb")).unwrap();
    let mut config = small_config(Pipeline::Pvdh, 1, 4);
    config.data = DataSource::Files {
        features: "f.fshb".into(),
        semantics: "s.fssb".into(),
    };
    config.resolve_paths(dir.path());
    let from_files = run(&config).unwrap();
    let from_spec = run(&small_config(Pipeline::Pvdh, 1, 4)).unwrap();
    assert_eq!(from_files.per_episode, from_spec.per_episode);
}
