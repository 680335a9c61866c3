use std::fs;
use std::path::Path;

use trajedit::harness::{expand, read_cells_csv, run_sweep, Manifest, SweepOptions, SweepSpec};

const FIELD: &str = r#"
[field]
source = "analytic"
kind = "diffusion_eps"
mixture = { shape = "ring", components = 6, radius = 1.5, variance = 0.1 }
[reward]
kind = "quadratic_target"
target = [0.0, 1.5]
[sources]
kind = "mixture"
mixture = { shape = "ring", components = 6, radius = 1.5, variance = 0.1 }
count = 4
seed = 2
[oc]
iterations = 6
"#;

fn spec(head: &str) -> SweepSpec {
    SweepSpec::parse(&format!("{head}\n{FIELD}"), false).unwrap()
}

fn small() -> SweepSpec {
    spec(
        r#"
methods = ["oc", "dps", "freedom", "tfg", "ga"]
repetitions = 2
[scales]
oc = [0.5, 2.0]
dps = [0.01, 0.1]
freedom = [0.01, 0.1]
tfg = [0.01, 0.1]
ga = { min = 0.1, max = 1.0, count = 2 }
"#,
    )
}

fn opts() -> SweepOptions {
    SweepOptions::default()
}

fn read(dir: &Path, f: &str) -> Vec<u8> {
    fs::read(dir.join(f)).unwrap()
}

#[test]
fn zero_weight_sweep_has_no_gain_and_no_distance() {
    let s = spec("methods = [\"oc\"]\n[scales]\noc = [0.0]");
    let dir = tempfile::tempdir().unwrap();
    let out = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(out.records.len(), 4);
    let p = &out.summary.points[0];
    assert_eq!((p.gain_mean, p.distance_mean, p.n), (0.0, 0.0, 4));
}

#[test]
fn scatter_has_one_marker_per_method_and_scale() {
    let dir = tempfile::tempdir().unwrap();
    let s = small();
    let out = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(out.failures, 0);
    assert_eq!(out.records.len(), expand(&s, 4).unwrap().len());
    assert_eq!(out.summary.points.len(), 10);
    let svg = String::from_utf8(read(dir.path(), "scatter.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 10);
    assert!(svg.contains("endpoint distance"));
    for m in ["oc", "dps", "freedom", "tfg", "ga"] {
        assert!(!out.summary.fronts[m].is_empty());
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let s = small();
    run_sweep(&s, Path::new("."), a.path(), &opts()).unwrap();
    let four = SweepOptions {
        workers: 4,
        ..opts()
    };
    run_sweep(&s, Path::new("."), b.path(), &four).unwrap();
    for f in ["cells.csv", "pareto.json", "manifest.json", "scatter.svg"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn interrupted_sweep_resumes_to_the_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = small();
    let full = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    let reference: Vec<Vec<u8>> = ["cells.csv", "pareto.json", "manifest.json"]
        .iter()
        .map(|f| read(dir.path(), f))
        .collect();

    // leave the state an interrupted run would: half the cells journalled,
    // one torn line, no cells.csv, an incomplete manifest
    let records = read_cells_csv(&dir.path().join("cells.csv")).unwrap();
    let half = records.len() / 2;
    let mut journal: String = records[..half]
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    journal.push_str("{\"index\": 3, \"meth");
    fs::write(dir.path().join("cells.jsonl"), journal).unwrap();
    fs::remove_file(dir.path().join("cells.csv")).unwrap();
    let mut manifest: Manifest =
        serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    manifest.complete = false;
    manifest.completed.truncate(half);
    fs::write(
        dir.path().join("manifest.json"),
        serde_json::to_string(&manifest).unwrap(),
    )
    .unwrap();

    let resumed = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(resumed.resumed, half);
    assert_eq!(resumed.records, full.records);
    for (f, bytes) in ["cells.csv", "pareto.json", "manifest.json"]
        .iter()
        .zip(&reference)
    {
        assert_eq!(&read(dir.path(), f), bytes, "{f}");
    }
    assert!(!dir.path().join("cells.jsonl").exists());

    // a finished run is taken over whole
    let again = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(again.resumed, full.records.len());
}

#[test]
fn a_changed_spec_starts_over() {
    let dir = tempfile::tempdir().unwrap();
    run_sweep(&small(), Path::new("."), dir.path(), &opts()).unwrap();
    let mut other = small();
    other.seed_base = 99;
    let out = run_sweep(&other, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(out.resumed, 0);
}

#[test]
fn failing_cells_are_recorded_and_the_sweep_goes_on() {
    // a residual bound of zero rejects every Markovian trajectory
    let s = spec(
        r#"
methods = ["oc", "dps"]
[scales]
oc = [1.0]
dps = [0.01]
"#,
    );
    let mut s = s;
    s.oc.mode = trajedit_core::schedule::Mode::Markovian;
    s.oc.markov.residual_bound = Some(0.0);
    let dir = tempfile::tempdir().unwrap();
    let out = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(out.failures, 4);
    let failed: Vec<_> = out.records.iter().filter(|r| !r.ok()).collect();
    assert!(failed
        .iter()
        .all(|r| r.method == "oc" && !r.error.is_empty() && r.reward_after.is_none()));
    let manifest: Manifest = serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest.failed, vec![0, 1, 2, 3]);
    assert!(manifest.complete);
    assert_eq!(out.summary.points.len(), 1);
    assert_eq!(out.summary.points[0].method, "dps");
    // failed cells are retried on resume
    let again = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert_eq!(again.resumed, 4);
}

#[test]
fn timing_is_off_unless_requested() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("methods = [\"ga\"]\n[scales]\nga = [1.0]");
    let out = run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    assert!(out.records.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn cells_csv_states_the_fidelity_metric() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("methods = [\"ga\"]\n[scales]\nga = [1.0]");
    run_sweep(&s, Path::new("."), dir.path(), &opts()).unwrap();
    let text = String::from_utf8(read(dir.path(), "cells.csv")).unwrap();
    assert!(text.starts_with("# fidelity metric: euclidean endpoint distance"));
}
