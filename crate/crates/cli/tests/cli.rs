use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn gbpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbpc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, v: &Value) -> String {
    let path = dir.join("exp.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn small() -> Value {
    json!({
        "schema": 1,
        "data": { "D": 80, "seed": 1 },
        "horizons": { "L_ini": 2, "L_f": 5 },
        "control": { "Q": [1.0], "R": [0.1], "y_ref": [0.5], "controller": "optimistic", "lambda": 1.0 },
        "run": { "steps": 12, "repetitions": 2, "seed": 2 }
    })
}

#[test]
fn closed_loop_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("runs/run.csv");
    let o = gbpc(&["closed-loop", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,phase,u_1,y_1,wini_1,wini_2,wini_3,wini_4,stage_cost,iterations,lambda_effective"
    );
    assert_eq!(lines.count(), 12);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/run.json")).unwrap()).unwrap();
    assert_eq!(summary["steps_completed"], 12);
    assert_eq!(summary["solves"], 10);
}

#[test]
fn infeasible_run_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["control"]["controller"] = json!("spc");
    v["control"]["u_min"] = json!([0.0]);
    v["control"]["u_max"] = json!([0.0]);
    v["control"]["y_min"] = json!([5.0]);
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("run.csv");
    let o = gbpc(&["closed-loop", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    // warm-up rows are kept
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
}

#[test]
fn config_and_usage_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["control"]["R"] = json!([0.1, 0.2]);
    let cfg = write_config(dir.path(), &v);
    let o = gbpc(&["closed-loop", "--config", &cfg, "--out", "x.csv"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("control.R"));

    assert_eq!(code(&gbpc(&["control", "--config", "/nonexistent.json"])), 3);
    assert_eq!(code(&gbpc(&["verify", "--suite", "nonsense"])), 3);
    assert_eq!(code(&gbpc(&["sweep", "--config", &cfg])), 3);
    assert_eq!(code(&gbpc(&["--help"])), 0);
}

#[test]
fn verify_exit_codes() {
    let o = gbpc(&["verify", "--suite", "all", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = gbpc(&["verify", "--suite", "theorems", "--inject-bug", "--json"]);
    assert_eq!(code(&o), 4);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["inject_bug"], true);
}

#[test]
fn simulate_identify_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let data = dir.path().join("data.csv");
    let beh = dir.path().join("behavior.json");
    assert_eq!(
        code(&gbpc(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()])),
        0
    );
    let o = gbpc(&[
        "identify",
        "--data",
        data.to_str().unwrap(),
        "--config",
        &cfg,
        "--out",
        beh.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("data matrix 14x80, rank 14 (mL + n = 10)"));

    let wini = dir.path().join("wini.csv");
    let uf = dir.path().join("uf.csv");
    std::fs::write(&wini, "u_1,y_1\n0.1,0.0\n-0.2,0.3\n").unwrap();
    std::fs::write(&uf, "u_1\n1\n1\n1\n1\n1\n").unwrap();
    let o = gbpc(&[
        "predict",
        "--behavior",
        beh.to_str().unwrap(),
        "--wini",
        wini.to_str().unwrap(),
        "--uf",
        uf.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "step,channel,mean,var");
    assert_eq!(rows.len(), 6);
    let var: f64 = rows[5].split(',').nth(3).unwrap().parse().unwrap();
    assert!(var > 0.0);

    std::fs::write(&uf, "u_1\n1\n").unwrap();
    let o = gbpc(&[
        "predict",
        "--behavior",
        beh.to_str().unwrap(),
        "--wini",
        wini.to_str().unwrap(),
        "--uf",
        uf.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_echoes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("sweep.csv");
    let o = gbpc(&[
        "sweep",
        "--config",
        &cfg,
        "--grid",
        "0.5,1,1e10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file = std::fs::read_to_string(&out).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), file);
    assert_eq!(file.lines().next().unwrap(), "lambda,mean,std,completed,failed");
    assert_eq!(file.lines().count(), 4);
}
