use std::process::{Command, Output};

fn oed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oed")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_list_and_show() {
    let o = oed(&["presets", "list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("example2_rasgd_la"));
    assert!(text.contains("timoshenko_case4"));

    let o = oed(&["presets", "show", "linear_gaussian"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("linear_gaussian"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nmodle = 3\n").unwrap();
    let o = oed(&["estimate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));

    assert_eq!(oed(&["estimate", "--preset", "no_such_preset"]).status.code(), Some(2));
    assert_eq!(oed(&["presets", "show", "no_such_preset"]).status.code(), Some(2));
    let o = oed(&["estimate", "--preset", "example2_rasgd_la", "--xi", "5,5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(oed(&["--workers", "0", "presets", "list"]).status.code(), Some(2));
    assert_eq!(oed(&["estimate"]).status.code(), Some(2));
}

#[test]
fn unreadable_config_file_is_a_config_error() {
    let o = oed(&["estimate", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est");
    let o = oed(&[
        "estimate",
        "--preset",
        "theta_independent",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(json["value"].as_f64(), Some(0.0));
}

#[test]
fn optimize_writes_traces_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "optimize",
        "--preset",
        "example2_rasgd_la",
        "--replications",
        "2",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    let o = oed(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace_000.csv", "trace_001.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    let trace = std::fs::read_to_string(out.join("trace_001.csv")).unwrap();
    assert!(trace.starts_with("k,xi_0,xi_1,xibar_0,xibar_1,alpha,gamma,restart,grad_norm,ncfm,grad_evals"));

    // Same seed, different worker count: identical files.
    let o = oed(&[&["--workers", "2"][..], &args].concat());
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("report.json")).unwrap(), report);
    assert_eq!(std::fs::read_to_string(out.join("trace_001.csv")).unwrap(), trace);
}

#[test]
fn contour_and_gradcheck_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        r#"
name = "small"
n_exp = 2
xi0 = [0.5]

[model]
name = "linear_gaussian"
jac = [[1.0, 0.4], [-0.5, 1.2]]
design_gain = 0.3

[prior]
kind = "gaussian"
mean = [0.3, -0.2]
std = [1.0, 0.5]

[noise]
std = [0.5, 0.8]

[estimator]
kind = "mcla"
n_outer = 50

[gradcheck]
n_outer = 50
m_inner = 5

[contour.x]
lo = -1.0
hi = 1.0
n = 5
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = oed(&["contour", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("contour.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    let o = oed(&[
        "gradcheck",
        "--config",
        cfg.to_str().unwrap(),
        "--xi",
        "-0.4",
        "--xi",
        "0.7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 2);
}
