use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trajedit::report::RunReport;
use trajedit::trajectory_io;

const RING: &str = "ring:6:1.5:0.1";

fn trajedit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajedit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_names_every_symbol() {
    let dir = tempfile::tempdir().unwrap();
    let edit = String::from_utf8(trajedit(&["edit", "--help"], dir.path()).stdout).unwrap();
    for needle in [
        "Depth T",
        "iterations N",
        "λ",
        "Reward weight w",
        "mode",
        "--residual-bound",
    ] {
        assert!(edit.contains(needle), "edit --help lacks {needle}");
    }
    let base = String::from_utf8(trajedit(&["baseline", "--help"], dir.path()).stdout).unwrap();
    for needle in ["ρ_t", "μ_t", "N_recur", "N_iter", "γ̄", "--ga-lr"] {
        assert!(base.contains(needle), "baseline --help lacks {needle}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--field",
        RING,
        "--reward",
        "linear:1,0",
        "--source",
        "1,0",
        "--out",
        "o",
    ];
    let mut args = vec!["edit", "--t-start", "1.0"];
    args.extend(common);
    let o = trajedit(&args, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(0, 1)"));
    let mut args = vec!["edit", "--lr", "0"];
    args.extend(common);
    assert_eq!(trajedit(&args, dir.path()).status.code(), Some(2));
    assert_eq!(trajedit(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_domain_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = trajedit(
        &[
            "edit",
            "--field",
            "nowhere/field.json",
            "--reward",
            "linear:1,0",
            "--source",
            "1,0",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere/field.json"), "{}", stderr(&o));
}

#[test]
fn zero_weight_edit_returns_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let o = trajedit(
        &[
            "edit",
            "--field",
            RING,
            "--reward",
            "linear:1,0",
            "--source",
            "1.2,0.3",
            "--w",
            "0",
            "--iters",
            "5",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReport::load(&dir.path().join("run/report.json")).unwrap();
    let r = &report.results[0];
    assert_eq!(r.edited.as_deref(), Some(&[1.2, 0.3][..]));
    assert_eq!(r.distance, Some(0.0));
    assert_eq!(r.iterations.len(), 6);
    let a = trajectory_io::read(&dir.path().join("run/trajectory_0_initial.csv")).unwrap();
    let b = trajectory_io::read(&dir.path().join("run/trajectory_0_edited.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn edit_raises_the_reward_and_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("edit.toml"),
        "iterations = 3\nt_start = 0.6\nlearning_rate = 0.5\n",
    )
    .unwrap();
    let o = trajedit(
        &[
            "edit",
            "--config",
            "edit.toml",
            "--iters",
            "8",
            "--field",
            RING,
            "--reward",
            "linear:1,0",
            "--source",
            "0.75,1.3",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReport::load(&dir.path().join("run/report.json")).unwrap();
    assert_eq!(report.method, "oc");
    assert_eq!(report.config["iterations"], 8);
    assert_eq!(report.config["t_start"], 0.6);
    assert_eq!(report.config["learning_rate"], 0.5);
    let r = &report.results[0];
    assert_eq!(r.iterations.len(), 9);
    assert!(r.reward_after.unwrap() > r.reward_before);
}

#[test]
fn markovian_edit_with_several_sources() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sources.csv"), "# x,y\n1.5,0\n-0.75,1.3\n").unwrap();
    let o = trajedit(
        &[
            "edit",
            "--mode",
            "markov",
            "--seed",
            "3",
            "--field",
            "ring:6:1.5:0.1:flow",
            "--reward",
            "quadratic:0,1.5",
            "--source",
            "sources.csv",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReport::load(&dir.path().join("run/report.json")).unwrap();
    assert_eq!(report.results.len(), 2);
    assert!(report
        .results
        .iter()
        .all(|r| r.reward_after.unwrap() > r.reward_before));
    assert!(dir.path().join("run/trajectory_1_edited.csv").exists());
}

#[test]
fn baseline_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["dps", "freedom", "tfg", "ga"] {
        let out = format!("run-{method}");
        let o = trajedit(
            &[
                "baseline",
                "--method",
                method,
                "--field",
                RING,
                "--reward",
                "linear:1,0",
                "--source",
                "-1.5,0",
                "--rho",
                "0.05",
                "--mu",
                "0.01",
                "--out",
                &out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        let report = RunReport::load(&dir.path().join(&out).join("report.json")).unwrap();
        assert_eq!(report.method, method);
        let r = &report.results[0];
        assert!(r.reward_after.unwrap() > r.reward_before, "{method}");
    }
}

#[test]
fn trained_models_feed_edits() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--epochs",
        "2",
        "--steps-per-epoch",
        "20",
        "--hidden",
        "16,16",
    ];
    let mut args = vec![
        "train",
        "dsm",
        "--data",
        "moons:500",
        "--out",
        "field.json",
        "--seed",
        "1",
    ];
    args.extend(small);
    assert!(trajedit(&args, dir.path()).status.success());
    let mut args = vec![
        "train",
        "classifier",
        "--data",
        "ring:4:1.5:0.05:800:parity",
        "--out",
        "clf.json",
    ];
    args.extend(small);
    let o = trajedit(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = trajedit(
        &[
            "edit",
            "--field",
            "field.json",
            "--reward",
            "logit:clf.json:1",
            "--source",
            "0.5,0.2",
            "--iters",
            "4",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = trajedit(
        &[
            "edit",
            "--field",
            "clf.json",
            "--reward",
            "linear:1,0",
            "--source",
            "0,0",
            "--out",
            "r2",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plot_renders_runs_and_empty_directories() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::create_dir(p.join("empty")).unwrap();
    let o = trajedit(&["plot", "--in", "empty", "--out", "figs-empty"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("figs-empty/scatter.svg").exists());

    let o = trajedit(
        &[
            "edit",
            "--field",
            RING,
            "--reward",
            "linear:1,0",
            "--source",
            "0.75,1.3",
            "--iters",
            "4",
            "--out",
            "run",
        ],
        p,
    );
    assert!(o.status.success());
    let o = trajedit(&["plot", "--in", "run", "--out", "figs"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["scatter.svg", "cost_report.svg", "overlay_0.svg"] {
        assert!(
            fs::metadata(p.join("figs").join(f)).unwrap().len() > 0,
            "{f}"
        );
    }
    assert_eq!(
        trajedit(&["plot", "--in", "absent", "--out", "figs"], p)
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn sweep_and_verify_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"
methods = ["oc", "dps"]
[scales]
oc = [0.0, 1.0]
dps = [0.01]
[field]
source = "analytic"
kind = "diffusion_eps"
mixture = { shape = "ring", components = 6, radius = 1.5, variance = 0.1 }
[reward]
kind = "linear_probe"
direction = [1.0, 0.0]
[sources]
kind = "points"
points = [[-1.5, 0.0], [0.75, 1.3]]
[oc]
iterations = 5
"#;
    fs::write(dir.path().join("s.toml"), spec).unwrap();
    let o = trajedit(
        &["sweep", "--spec", "s.toml", "--out", "sw", "--workers", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["cells.csv", "pareto.json", "manifest.json", "scatter.svg"] {
        assert!(dir.path().join("sw").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("sw/cells.jsonl").exists());

    let o = trajedit(&["verify", "--quick"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all oracles passed"));
}
