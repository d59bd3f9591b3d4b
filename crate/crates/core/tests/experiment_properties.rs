use std::io::Cursor;

use splitcd::experiments::{
    builtin, cache_path, compute_reference, field_distance, load_or_compute_reference, run_sweep, ErrorReport,
    ExperimentSpec, KPolicySpec, SweepOptions,
};

fn small(name: &str) -> ExperimentSpec {
    let mut spec = builtin(name).unwrap();
    spec.n = vec![19; spec.dim()];
    if spec.dim() == 3 {
        spec.n = vec![9; 3];
    }
    spec.taus = vec![0.1, 0.05, 0.025];
    spec
}

#[test]
fn repeated_sweeps_give_identical_csv() {
    let spec = small("ex2");
    let a = run_sweep(&spec, &SweepOptions::default()).unwrap().report.to_csv();
    let b = run_sweep(&spec, &SweepOptions { cache_dir: None, jobs: Some(1) }).unwrap().report.to_csv();
    assert_eq!(a, b);
}

#[test]
fn csv_roundtrip_of_a_real_report() {
    let report = run_sweep(&small("ex1"), &SweepOptions::default()).unwrap().report;
    let back = ErrorReport::from_csv(Cursor::new(report.to_csv())).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.err_classical >= 0.0 && r.err_adapted >= 0.0));
    assert!(report.slope_adapted.is_some() && report.slope_classical.is_some());
}

#[test]
fn cached_reference_matches_a_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small("ex3d");
    let first = load_or_compute_reference(&spec, Some(dir.path())).unwrap();
    assert!(!first.from_cache);
    assert!(cache_path(&spec, dir.path()).exists());
    let cached = load_or_compute_reference(&spec, Some(dir.path())).unwrap();
    assert!(cached.from_cache);
    let fresh = compute_reference(&spec).unwrap();
    let scale = splitcd::mesh::discrete_l2(&fresh.field).max(1.0);
    assert!(field_distance(&cached.field, &fresh.field) <= 10.0 * spec.ref_rtol * scale);
}

#[test]
fn corrupt_cache_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small("ex3d");
    std::fs::write(cache_path(&spec, dir.path()), "garbage\n").unwrap();
    let r = load_or_compute_reference(&spec, Some(dir.path())).unwrap();
    assert!(!r.from_cache);
    assert!(load_or_compute_reference(&spec, Some(dir.path())).unwrap().from_cache);
}

#[test]
fn factor_is_one_above_the_sup() {
    let mut spec = small("ex1");
    let sup = spec.problem().unwrap().velocity.max_magnitude();
    spec.k_policy = KPolicySpec::Fixed { k: 1.5 * sup };
    let report = run_sweep(&spec, &SweepOptions::default()).unwrap().report;
    for row in &report.rows {
        assert!((row.factor - 1.0).abs() <= 1e-6, "{row:?}");
    }
}
