use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bottleneck-lab"));
    cmd.env("BOTTLENECK_LAB_THREADS", "2");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sweep_writes_traces_critical_points_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture("appendixD1.json");
    let o = run(&[
        "sweep",
        "--problem",
        p.to_str().unwrap(),
        "--framework",
        "both",
        "--beta-grid",
        "log:0.25:64:400",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("wall time"), "{out}");
    assert!(out.contains("400"), "{out}");
    for f in [
        "appendixD1_ib_trace.csv",
        "appendixD1_dual_trace.csv",
        "appendixD1_critical.json",
        "run_config.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("appendixD1_ib_trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    let critical: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("appendixD1_critical.json")).unwrap()).unwrap();
    let reports = critical["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r["points"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn missing_beta_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture("appendixD1.json");
    let o = run(&[
        "solve",
        "--problem",
        p.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn bad_problem_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("bad.json");
    std::fs::write(
        &problem,
        r#"{"p_x": [0.5, 0.5], "p_y_given_x": [[0.5, 0.5], [-0.1, 1.1]]}"#,
    )
    .unwrap();
    let o = run(&["solve", "--problem", problem.to_str().unwrap(), "--beta", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p_y_given_x[1][0]"), "{}", stderr(&o));

    std::fs::write(
        &problem,
        r#"{"p_x": [0.5, 0.5], "p_y_given_x": [[0.5, 0.5], [0.5, 0.5]], "extra": 1}"#,
    )
    .unwrap();
    let o = run(&["solve", "--problem", problem.to_str().unwrap(), "--beta", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
}

#[test]
fn conflicting_and_malformed_flags_exit_two() {
    let p = fixture("appendixD1.json");
    let p = p.to_str().unwrap();
    for args in [
        vec!["solve", "--problem", p, "--beta", "1", "--beta-grid", "log:1:2:3"],
        vec!["sweep", "--problem", p, "--beta", "1"],
        vec!["sweep", "--problem", p, "--beta-grid", "log:2:1:3"],
        vec!["solve", "--problem", p, "--beta", "-1"],
        vec!["solve", "--bogus"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unreadable_problem_exits_one() {
    let o = run(&["solve", "--problem", "/nonexistent/problem.json", "--beta", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_rejected() {
    let p = fixture("appendixD1.json");
    let o = bin()
        .env("BOTTLENECK_LAB_THREADS", "zero")
        .args(["solve", "--problem", p.to_str().unwrap(), "--beta", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("BOTTLENECK_LAB_THREADS"), "{}", stderr(&o));
}

#[test]
fn units_change_the_summary_but_not_the_files() {
    let p = fixture("appendixD1.json");
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    for units in ["nats", "bits"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[
            "solve",
            "--problem",
            p.to_str().unwrap(),
            "--beta",
            "5",
            "--framework",
            "ib",
            "--units",
            units,
            "--output-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        summaries.push(stdout(&o));
        files.push(std::fs::read(dir.path().join("appendixD1_ib_solve.json")).unwrap());
    }
    let i_x = |s: &str, unit: &str| -> f64 {
        let start = s.find("I_x = ").unwrap() + 6;
        let end = s[start..].find(unit).unwrap() + start;
        s[start..end].trim().parse().unwrap()
    };
    let ratio = i_x(&summaries[0], "nats") / i_x(&summaries[1], "bits");
    assert!((ratio - std::f64::consts::LN_2).abs() < 1e-2, "{summaries:?}");
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let p = fixture("appendixD1.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"problem_path": {:?}, "beta": 2.0, "framework": "dual", "seed": 4}}"#,
            p.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--beta",
        "3",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["beta"], 3.0);
    assert_eq!(echoed["seed"], 4);
    assert!(out.join("appendixD1_dual_solve.json").is_file());
    assert!(!out.join("appendixD1_ib_solve.json").exists());
}

#[test]
fn expfam_and_error_exp_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let p = fixture("appendixD1.json");
    let o = run(&[
        "expfam",
        "--problem",
        p.to_str().unwrap(),
        "--beta",
        "4",
        "--output-dir",
        d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("appendixD1_expfam.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("beta,i_x,i_y"));

    let o = run(&[
        "error-exp",
        "--trials",
        "200",
        "--betas",
        "2,64",
        "--n-values",
        "1,4,16",
        "--output-dir",
        d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("m8_error_exp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn csv_problem_tables_load() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    std::fs::write(&table, "p_x,y0,y1\n0.5,0.9,0.1\n0.5,0.2,0.8\n").unwrap();
    let o = run(&[
        "solve",
        "--problem",
        table.to_str().unwrap(),
        "--beta",
        "10",
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("out/table_ib_solve.json").is_file());
}
