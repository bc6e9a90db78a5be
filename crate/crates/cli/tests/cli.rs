use std::path::Path;
use std::process::{Command, Output};

fn mg1lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mg1lab")).args(args).output().expect("spawn mg1lab")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_spec(dir: &Path, name: &str, service: &str, orders: &str, grid: &str) -> String {
    let path = dir.join(name);
    let spec = format!(
        r#"{{"mu":1.0,"orders":{orders},"epsilon_grid":{grid},"service":{service},"output":"{}"}}"#,
        dir.join(format!("{name}.csv")).display()
    );
    std::fs::write(&path, spec).unwrap();
    path.display().to_string()
}

#[test]
fn constants_reproduce_order_two_series() {
    let v = stdout_json(&mg1lab(&["constants", "--k", "2", "--lambda", "0.9", "--mu", "1"]));
    let series = v["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0]["b"].as_f64().unwrap(), 0.9 / 6.0);
    assert_eq!(series[0]["d"], 3);
    assert_eq!(series[1]["b"].as_f64().unwrap(), 0.9 / 24.0);
    assert_eq!(series[1]["d"], 4);
    for key in ["k", "lambda", "mu", "c1", "c2", "m_prime", "m_double_prime", "m_total"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn mm1_sweep_lower_bounds_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "mm1.json", r#"{"kind":"exponential"}"#, "[2,3]", "[0.2,0.1,0.05]");
    mg1lab(&["sweep", "--config", &spec, "--reproducible"]);
    let csv = std::fs::read_to_string(dir.path().join("mm1.json.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "zol_lb").unwrap();
    let rows: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|&v| v <= 1e-10), "{rows:?}");
}

#[test]
fn matched_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "m3.json",
        r#"{"kind":"matched","order":3}"#,
        "[2]",
        "[0.2,0.1,0.05,0.025,0.0125]",
    );
    assert!(mg1lab(&["sweep", "--config", &spec, "--threads", "2"]).status.success());
    let v = stdout_json(&mg1lab(&["report", "--config", &spec]));
    assert_eq!(v["pass"], true, "{v}");
    assert!(v["orders"][0]["fit"]["slope"].as_f64().unwrap() >= 1.7);
}

#[test]
fn reproducible_sweeps_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "r.json", r#"{"kind":"matched","order":3}"#, "[2]", "[0.2,0.1,0.05]");
    let run = |out: &str| {
        let out = dir.path().join(out);
        let out = out.to_str().unwrap();
        assert!(mg1lab(&["sweep", "--config", &spec, "--out", out, "--reproducible", "--seed", "5"]).status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert!(a.ends_with(b"\n"));
    assert_eq!(a, run("b.csv"));
}

#[test]
fn timestamp_line_without_reproducible_flag() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "t.json", r#"{"kind":"exponential"}"#, "[2]", "[0.2,0.1,0.05]");
    assert!(mg1lab(&["sweep", "--config", &spec]).status.success());
    assert!(std::fs::read_to_string(dir.path().join("t.json.csv")).unwrap().starts_with("# generated unix="));
}

#[test]
fn simulate_writes_binary_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("batch.bin");
    let v = stdout_json(&mg1lab(&[
        "simulate", "--lambda", "0.5", "--samples", "10000", "--replications", "2", "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["records"], 20_000);
    let batch = mg1lab::simulate::read_binary(&out).unwrap();
    assert_eq!(batch.len(), 20_000);
    assert_eq!(batch.meta.config.base_seed, 3);
}

#[test]
fn stein_check_passes() {
    let v = stdout_json(&mg1lab(&["stein-check", "--samples", "20000", "--replications", "4", "--seed", "2"]));
    for c in v["derivative_bounds"].as_array().unwrap() {
        assert_eq!(c["pass"], true, "{c}");
    }
    assert_eq!(v["stationarity"].as_array().unwrap().len(), 6);
}

#[test]
fn exit_codes_and_error_json() {
    let invalid = mg1lab(&["moments", "--lambda", "1.5"]);
    assert_eq!(invalid.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&invalid.stderr).unwrap();
    assert_eq!(err["error"], "unstable_queue");

    assert_eq!(mg1lab(&["no-such-command"]).status.code(), Some(1));

    let runtime = mg1lab(&["match", "--order", "7"]);
    assert_eq!(runtime.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&runtime.stderr).unwrap();
    assert_eq!(err["error"], "infeasible_match");

    let dir = tempfile::tempdir().unwrap();
    let bad = write_spec(dir.path(), "bad.json", r#"{"kind":"exponential"}"#, "[2]", "[0.6,0.1,0.05]");
    assert_eq!(mg1lab(&["sweep", "--config", &bad]).status.code(), Some(1));
}

#[test]
fn moments_csv_table() {
    let out = mg1lab(&["moments", "--lambda", "0.5", "--n", "3", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "j,waiting,sojourn,scaled_sojourn");
    assert_eq!(lines.len(), 4);
    // M/M/1 at λ = 0.5: E[W] = 1, E[D] = 2.
    assert_eq!(lines[1], "1,1,2,1");
}
