use gbpc_core::behavior::{GaussianBehavior, PredictiveModel};
use gbpc_core::plant::{self, ModelJson};
use gbpc_core::trajectory::Trajectory;
use gbpc_harness::config::ControllerKind;
use gbpc_harness::experiment::{mean_std, Phase};
use gbpc_harness::{output, tools, verify, Experiment, ExperimentConfig, HarnessError};
use nalgebra::DMatrix;
use serde_json::{json, Value};

fn base() -> Value {
    json!({
        "schema": 1,
        "plant": "default",
        "data": { "D": 120, "seed": 3 },
        "horizons": { "L_ini": 3, "L_f": 8 },
        "control": { "Q": [1.0], "R": [0.1], "y_ref": [1.0], "controller": "spc" },
        "run": { "steps": 30, "repetitions": 4, "seed": 5, "warmup_input_std": 0.3 }
    })
}

fn experiment(v: &Value) -> Experiment {
    Experiment::from_config(ExperimentConfig::from_json(&v.to_string()).unwrap()).unwrap()
}

fn noiseless_plant() -> Value {
    let model = plant::default_benchmark().noiseless();
    serde_json::to_value(ModelJson::from(&model)).unwrap()
}

fn csv_bytes(exp: &Experiment, rep: usize) -> Vec<u8> {
    let id = exp.identify(rep).unwrap();
    let rec = exp.run_closed_loop(&id, rep, exp.parameter()).unwrap();
    let mut buf = Vec::new();
    output::write_run_csv(&rec, &mut buf).unwrap();
    buf
}

#[test]
fn zero_noise_zero_reference_gives_all_zero_run() {
    for controller in ["spc", "robust", "optimistic"] {
        let mut v = base();
        v["plant"] = json!({ "inline": noiseless_plant() });
        v["control"]["y_ref"] = json!([0.0]);
        v["control"]["controller"] = json!(controller);
        v["control"]["lambda"] = json!(1.0);
        v["run"]["warmup_input_std"] = json!(0.0);
        // noiseless data gives a singular predictive covariance
        v["jitter"] = json!(1e-9);
        let exp = experiment(&v);
        let id = exp.identify(0).unwrap();
        let rec = exp.run_closed_loop(&id, 0, exp.parameter()).unwrap();
        assert!(rec.abort.is_none());
        assert_eq!(rec.realized_cost, 0.0, "{controller}");
        assert!(rec.steps.iter().all(|s| s.u.iter().chain(&s.y).all(|v| *v == 0.0)));
    }
}

#[test]
fn fixed_seed_gives_identical_bytes() {
    let mut v = base();
    v["control"]["controller"] = json!("robust");
    v["control"]["lambda_relative"] = json!(2.0);
    let a = csv_bytes(&experiment(&v), 1);
    let b = csv_bytes(&experiment(&v), 1);
    assert_eq!(a, b);
    let c = csv_bytes(&experiment(&v), 2);
    assert_ne!(a, c);
}

#[test]
fn noiseless_spc_reaches_the_reference() {
    let model = plant::default_benchmark().noiseless();
    let gain = model.dc_gain().unwrap()[(0, 0)];
    let mut v = base();
    v["plant"] = json!({ "inline": noiseless_plant() });
    v["control"]["y_ref"] = json!([1.0]);
    v["control"]["u_ref"] = json!([1.0 / gain]);
    v["run"]["steps"] = json!(120);
    let exp = experiment(&v);
    let id = exp.identify(0).unwrap();
    let rec = exp.run_closed_loop(&id, 0, None).unwrap();
    let tail = &rec.steps[100..];
    let err = tail.iter().map(|s| (s.y[0] - 1.0).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "steady-state error {err}");
    let du = tail.iter().map(|s| (s.u[0] - 1.0 / gain).abs()).fold(0.0, f64::max);
    assert!(du < 1e-6, "steady-state input error {du}");
}

#[test]
fn realized_cost_is_the_sum_of_stage_costs() {
    let mut v = base();
    v["control"]["controller"] = json!("deepc");
    v["control"]["lambda_g"] = json!(5.0);
    v["control"]["u_min"] = json!([-1.0]);
    v["control"]["u_max"] = json!([1.0]);
    let exp = experiment(&v);
    let id = exp.identify(0).unwrap();
    let rec = exp.run_closed_loop(&id, 0, exp.parameter()).unwrap();
    let sum: f64 = rec.steps.iter().map(|s| s.stage_cost).sum();
    assert!((sum - rec.realized_cost).abs() <= 1e-9);
    for s in &rec.steps {
        let direct = 0.1 * s.u[0] * s.u[0] + (s.y[0] - 1.0).powi(2);
        assert!((direct - s.stage_cost).abs() <= 1e-12);
        if s.phase == Phase::Control {
            assert!(s.u[0].abs() <= 1.0 + 1e-6);
            assert_eq!(s.w_ini.as_ref().map(Vec::len), Some(6));
        }
    }
}

#[test]
fn warmup_rows_and_w_ini_snapshots_follow_measurements() {
    let exp = experiment(&base());
    let id = exp.identify(0).unwrap();
    let rec = exp.run_closed_loop(&id, 0, None).unwrap();
    assert!(rec.steps[..3]
        .iter()
        .all(|s| s.phase == Phase::Warmup && s.w_ini.is_none()));
    for t in 3..rec.steps.len() {
        let w = rec.steps[t].w_ini.as_ref().unwrap();
        let expect: Vec<f64> = rec.steps[t - 3..t].iter().flat_map(|s| [s.u[0], s.y[0]]).collect();
        assert_eq!(w, &expect);
    }
}

#[test]
fn applying_several_blocks_reuses_the_plan() {
    let mut v = base();
    v["run"]["apply_steps"] = json!(3);
    let exp = experiment(&v);
    let id = exp.identify(0).unwrap();
    let rec = exp.run_closed_loop(&id, 0, None).unwrap();
    assert_eq!(rec.summary(30).solves, 9);
    assert_eq!(rec.steps.iter().filter(|s| s.solved).count(), 9);
    // one plan per three steps
    let snapshots: std::collections::BTreeSet<String> =
        rec.steps[3..].iter().map(|s| format!("{:?}", s.w_ini)).collect();
    assert_eq!(snapshots.len(), 9);
}

#[test]
fn sweep_rows_and_single_point_grid() {
    let mut v = base();
    v["control"]["controller"] = json!("optimistic");
    v["control"]["lambda"] = json!(0.5);
    let exp = experiment(&v);
    let rows = exp.sweep(&[0.1, 0.5, 2.0]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.completed + r.failed == 4));

    let single = exp.sweep(&[0.5]).unwrap();
    let costs: Vec<f64> = (0..4)
        .map(|rep| {
            let id = exp.identify(rep).unwrap();
            exp.run_closed_loop(&id, rep, Some(0.5)).unwrap().realized_cost
        })
        .collect();
    let (mean, std) = mean_std(&costs);
    assert_eq!(single[0].mean, mean);
    assert_eq!(single[0].std, std);
    assert_eq!(single[0], rows[1]);
}

#[test]
fn huge_lambda_cell_matches_spc() {
    let mut v = base();
    v["run"]["repetitions"] = json!(6);
    v["control"]["controller"] = json!("optimistic");
    v["control"]["lambda"] = json!(1.0);
    let opt = experiment(&v);
    let cell = &opt.sweep(&[1e10]).unwrap()[0];
    v["control"]["controller"] = json!("spc");
    let spc = experiment(&v);
    let costs: Vec<f64> = spc
        .monte_carlo(&spc.identify_all(), None)
        .into_iter()
        .map(Option::unwrap)
        .collect();
    let (mean, std) = mean_std(&costs);
    let (mean, std) = (mean.unwrap(), std.unwrap());
    let diff = (cell.mean.unwrap() - mean).abs();
    assert!(
        diff <= 2.0 * std / (costs.len() as f64).sqrt(),
        "diff {diff}, std {std}"
    );
    // common random numbers make the two nearly identical
    assert!(diff <= 1e-4 * mean);
}

#[test]
fn robust_solves_are_optimal_above_the_threshold() {
    let mut v = base();
    v["control"]["controller"] = json!("robust");
    for rel in [1.0, 3.0] {
        v["control"]["lambda_relative"] = json!(rel);
        let exp = experiment(&v);
        for rep in 0..3 {
            let id = exp.identify(rep).unwrap();
            let rec = exp.run_closed_loop(&id, rep, exp.parameter()).unwrap();
            let s = rec.summary(30);
            assert!(s.abort.is_none());
            assert_eq!(s.non_optimal_solves, 0);
            assert_eq!(s.solves, 27);
        }
    }
}

#[test]
fn robust_below_threshold_fails_the_cell() {
    let mut v = base();
    v["control"]["controller"] = json!("robust");
    v["control"]["lambda_relative"] = json!(2.0);
    let exp = experiment(&v);
    let rows = exp.sweep(&[0.5, 2.0]).unwrap();
    assert_eq!((rows[0].completed, rows[0].failed), (0, 4));
    assert_eq!(rows[0].mean, None);
    assert_eq!((rows[1].completed, rows[1].failed), (4, 0));
}

#[test]
fn infeasible_problem_aborts_with_partial_record() {
    let mut v = base();
    v["control"]["u_min"] = json!([0.0]);
    v["control"]["u_max"] = json!([0.0]);
    v["control"]["y_min"] = json!([5.0]);
    let exp = experiment(&v);
    let id = exp.identify(0).unwrap();
    let rec = exp.run_closed_loop(&id, 0, None).unwrap();
    let abort = rec.abort.as_ref().unwrap();
    assert!(abort.infeasible);
    assert_eq!(abort.t, 3);
    assert_eq!(rec.steps.len(), 3);
}

fn config_error(v: &Value) -> String {
    let err = ExperimentConfig::from_json(&v.to_string())
        .and_then(Experiment::from_config)
        .unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    err.to_string()
}

#[test]
fn config_errors_are_caught_before_running() {
    let mut v = base();
    v["control"]["Q"] = json!([1.0, 2.0]);
    assert!(config_error(&v).contains("control.Q"));

    let mut v = base();
    v["control"]["extra"] = json!(1);
    assert!(config_error(&v).contains("unknown field"));

    let mut v = base();
    v["schema"] = json!(2);
    assert!(config_error(&v).contains("schema"));

    let mut v = base();
    v["data"]["T"] = json!(500);
    assert!(config_error(&v).contains("only one"));

    let mut v = base();
    v["data"] = json!({ "file": "/nonexistent/data.csv" });
    assert!(config_error(&v).contains("does not exist"));

    let mut v = base();
    v["plant"] = json!({ "file": "/nonexistent/model.json" });
    let err = ExperimentConfig::from_json(&v.to_string())
        .and_then(Experiment::from_config)
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);

    let mut v = base();
    v["control"]["controller"] = json!("optimistic");
    v["control"]["lambda_grid"] = json!([1.0, 0.5]);
    assert!(config_error(&v).contains("ascending"));

    let mut v = base();
    v["control"]["controller"] = json!("deepc");
    assert!(config_error(&v).contains("lambda_g"));

    let mut v = base();
    v["control"]["controller"] = json!("robust");
    v["control"]["lambda"] = json!(1.0);
    v["control"]["y_max"] = json!([2.0]);
    assert!(config_error(&v).contains("robust"));

    let mut v = base();
    v["run"]["apply_steps"] = json!(9);
    assert!(config_error(&v).contains("apply_steps"));

    let mut v = base();
    v["control"]["R"] = json!([0.0]);
    assert!(config_error(&v).contains("R"));
}

#[test]
fn sweep_rejects_controllers_without_lambda() {
    let exp = experiment(&base());
    assert!(matches!(exp.sweep(&[1.0]), Err(HarnessError::Config(_))));
    let mut v = base();
    v["control"]["controller"] = json!("optimistic");
    v["control"]["lambda"] = json!(1.0);
    let exp = experiment(&v);
    assert!(matches!(exp.sweep(&[2.0, 1.0]), Err(HarnessError::Config(_))));
    assert!(matches!(exp.sweep(&[]), Err(HarnessError::Config(_))));
}

#[test]
fn conditioning_a_sample_behavior_reproduces_the_predictor() {
    let exp = experiment(&base());
    let traj = exp.identification_data(0).unwrap();
    let dm = exp.data_matrix(&traj).unwrap();
    let gb = GaussianBehavior::estimate(&dm, false);
    let gb = GaussianBehavior::from_json(&gb.to_json()).unwrap();
    let pm = PredictiveModel::estimate(&dm, 1e-10).unwrap();
    let w_ini = Trajectory::new(
        exp.dims(),
        DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.3, 0.1, 0.5, 0.0]),
    )
    .unwrap();
    let u_f = DMatrix::from_fn(8, 1, |t, _| (t as f64 * 0.7).sin());
    let pred = tools::predict(&gb, &w_ini, &u_f, 1e-10).unwrap();
    let mean = pm.mean(&u_f.column(0).into_owned(), &w_ini.window(0, 3).unwrap());
    assert!((&pred.dist.mean - mean).amax() < 1e-8);
    assert!((&pred.dist.cov - &pm.cov).amax() < 1e-8);
    assert!(tools::predict(&gb, &w_ini, &DMatrix::zeros(7, 1), 1e-10).is_err());
}

#[test]
fn control_once_reports_a_plan() {
    let mut v = base();
    v["control"]["controller"] = json!("robust");
    v["control"]["lambda_relative"] = json!(2.0);
    let rep = experiment(&v).control_once(None).unwrap();
    assert_eq!(rep.controller, ControllerKind::Robust);
    assert_eq!(rep.u_f.len(), 8);
    assert_eq!(rep.y_var.len(), 8);
    assert_eq!(rep.w_ini.len(), 6);
    assert!(rep.lambda_effective.is_finite());
}

#[test]
fn verify_suite_passes_and_detects_the_injected_bug() {
    let report = verify::run(verify::Suite::All, 0, false);
    for c in &report.checks {
        println!("{}", c.line());
    }
    assert!(report.passed);
    let bad = verify::run(verify::Suite::Theorems, 0, true);
    assert!(!bad.passed);
    let failed: Vec<_> = bad
        .checks
        .iter()
        .filter(|c| !c.passed && !c.informational)
        .map(|c| c.name.as_str())
        .collect();
    assert_eq!(failed, ["deepc_optimistic_equivalence"]);
}

#[test]
fn verify_report_schema_is_stable() {
    let report = verify::run(verify::Suite::Solver, 1, false);
    let v = serde_json::to_value(&report).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["checks", "inject_bug", "passed", "schema", "seed", "suite"]);
    let check: Vec<&str> = v["checks"][0].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        check,
        ["detail", "informational", "name", "passed", "residual", "tolerance"]
    );
}
