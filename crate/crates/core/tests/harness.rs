use std::path::Path;

use proptest::prelude::*;
use satstereo::eval::EvalReport;
use satstereo::harness::{
    aggregate, collect_reports, run_pipeline, write_synthetic_tile, LsmMode, RunConfig, SynthTileConfig,
    ORIENTATION_FILE, REPORT_FILE, STATS_CSV, STATS_JSON,
};

fn report(pair: &str, method: &str, success: bool, v: f64) -> EvalReport {
    EvalReport {
        pair_id: pair.into(),
        method: method.into(),
        success,
        inlier_ratio: Some(v),
        epipolar_rms: Some(v * 2.0),
        completeness: success.then_some(90.0 + v),
        rmse: success.then_some(v / 10.0),
        shift: None,
        horizontal_degenerate: false,
        error: None,
    }
}

fn config(dir: &Path, manifest: &Path, run_id: &str, workers: usize) -> RunConfig {
    RunConfig {
        manifest: manifest.to_path_buf(),
        output: dir.join("runs"),
        run_id: run_id.into(),
        workers,
        seed: 42,
        ..RunConfig::default()
    }
}

#[test]
fn three_pair_run_writes_all_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_tile(&dir.path().join("tile"), &SynthTileConfig::default()).unwrap();

    let first = run_pipeline(&config(dir.path(), &manifest, "a", 1)).unwrap();
    assert_eq!(first.reports.len(), 3);
    for r in &first.reports {
        let d = first.run_dir.join(&r.pair_id).join(&r.method);
        assert!(d.join(ORIENTATION_FILE).is_file(), "{}", d.display());
        assert!(d.join(REPORT_FILE).is_file());
        assert!(r.success, "{r:?}");
        assert!(r.completeness.unwrap() > 50.0, "{r:?}");
    }
    assert!(first.run_dir.join(STATS_JSON).is_file());
    assert!(first.run_dir.join(STATS_CSV).is_file());
    assert_eq!(first.stats.methods[0].success_rate, 100.0);

    let second = run_pipeline(&config(dir.path(), &manifest, "b", 3)).unwrap();
    let read = |p: &Path| std::fs::read(p.join(STATS_JSON)).unwrap();
    assert_eq!(read(&first.run_dir), read(&second.run_dir));

    // resuming reuses every task and reproduces the statistics
    let resumed = run_pipeline(&config(dir.path(), &manifest, "a", 2)).unwrap();
    assert_eq!(resumed.resumed, 3);
    assert_eq!(read(&first.run_dir), read(&resumed.run_dir));
    assert_eq!(collect_reports(&first.run_dir).unwrap(), first.reports);
}

#[test]
fn failing_pairs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let tile = SynthTileConfig { noise_images: vec![2], size: 192, ..SynthTileConfig::default() };
    let manifest = write_synthetic_tile(&dir.path().join("tile"), &tile).unwrap();
    let cfg = RunConfig { dense: false, lsm: LsmMode::Both, ..config(dir.path(), &manifest, "n", 2) };
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.reports.len(), 6);
    for r in &run.reports {
        assert_eq!(r.success, !r.pair_id.contains("img02"), "{r:?}");
    }
    for m in &run.stats.methods {
        assert_eq!(m.pairs, 3);
        assert_eq!(m.successes, 1);
        assert_eq!(m.summaries["inlier_ratio"].n, 1);
    }
}

#[test]
fn success_rate_counts_every_pair() {
    let reports: Vec<_> = (0..5).map(|i| report(&format!("p{i}"), "sift", i != 3, 0.5)).collect();
    let s = aggregate(&reports);
    assert_eq!(s.methods[0].success_rate, 80.0);
    assert_eq!(s.methods[0].summaries["completeness"].n, 4);
}

#[test]
fn gated_out_pair_only_changes_the_success_rate() {
    let ok: Vec<_> = (0..4).map(|i| report(&format!("p{i}"), "sift", true, 0.1 * i as f64)).collect();
    let mut with_failure = ok.clone();
    let mut failed = report("p9", "sift", false, 0.9);
    failed.completeness = Some(12.0);
    with_failure.push(failed);
    let (a, b) = (aggregate(&ok), aggregate(&with_failure));
    assert_eq!(a.methods[0].summaries, b.methods[0].summaries);
    assert_eq!(b.methods[0].success_rate, 80.0);
}

#[test]
fn identical_paired_metrics_change_nothing() {
    let mut reports = Vec::new();
    for i in 0..3 {
        reports.push(report(&format!("p{i}"), "sift", true, 0.3 + i as f64));
        reports.push(report(&format!("p{i}"), "sift+lsm", true, 0.3 + i as f64));
    }
    let s = aggregate(&reports);
    assert_eq!(s.lsm_changes.len(), 4);
    assert!(s.lsm_changes.iter().all(|c| c.relative_change == Some(0.0)));
}

#[test]
fn relative_change_replay() {
    // inlier ratios that rise by 0.76 % under refinement
    let plain = [0.41, 0.57, 0.62];
    let mut reports = Vec::new();
    for (i, v) in plain.iter().enumerate() {
        reports.push(report(&format!("p{i}"), "sift", true, *v));
        reports.push(report(&format!("p{i}"), "sift+lsm", true, v * 1.0076));
    }
    // an LSM-only success does not enter the paired means
    reports.push(report("p7", "sift", false, 0.2));
    reports.push(report("p7", "sift+lsm", true, 0.9));
    let s = aggregate(&reports);
    let c = s.lsm_changes.iter().find(|c| c.metric == "inlier_ratio").unwrap();
    assert_eq!(c.pairs, 3);
    let mean_plain = plain.iter().sum::<f64>() / 3.0;
    let mean_lsm = plain.iter().map(|v| v * 1.0076).sum::<f64>() / 3.0;
    let hand = (mean_lsm - mean_plain) / mean_plain * 100.0;
    assert!((c.relative_change.unwrap() - hand).abs() < 1e-9);
    assert!((c.relative_change.unwrap() - 0.76).abs() < 1e-9);
    assert!(s.lsm_csv().contains("sift,0.76,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn summaries_are_ordered_and_rates_bounded(
        values in proptest::collection::vec((any::<bool>(), 0.0f64..1.0), 1..30)
    ) {
        let reports: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &(ok, v))| report(&format!("p{i}"), "m", ok, v))
            .collect();
        let s = aggregate(&reports);
        let m = &s.methods[0];
        prop_assert!((0.0..=100.0).contains(&m.success_rate));
        for sum in m.summaries.values() {
            prop_assert!(sum.min <= sum.q1 && sum.q1 <= sum.median && sum.median <= sum.q3 && sum.q3 <= sum.max);
        }
    }
}
