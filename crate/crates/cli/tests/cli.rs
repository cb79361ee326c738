use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::process::{Command, Output};

fn pds(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pds"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PDS_OUT")
        .env_remove("PDS_THREADS")
        .output()
        .expect("binary runs")
}

fn hash_file(path: &Path) -> u64 {
    let mut h = DefaultHasher::new();
    std::fs::read(path).unwrap().hash(&mut h);
    h.finish()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const RUN: &str = r#"{
  "agents": 4,
  "graph": {"kind": "named", "family": "cycle"},
  "problem": {"kind": "random_quadratic", "dim": 2},
  "algorithm": {"kind": "pds", "r": 1.0},
  "n": 12,
  "seed": 7
}"#;

#[test]
fn malformed_json_exits_1_with_position() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"agents\": 3,\n  oops\n}").unwrap();
    let out = pds(&["run", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3: column"), "{err}");
}

#[test]
fn unknown_field_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RUN.replace("\"seed\": 7", "\"seed\": 7, \"step_size\": 0.1");
    std::fs::write(dir.path().join("run.json"), cfg).unwrap();
    let out = pds(&["run", "--config", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step_size"));
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pds(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(pds(&["run", "--config", "nope.json"], dir.path()).status.code(), Some(1));
    assert_eq!(pds(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn graph_info_on_p3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p3.txt"), "m 3\n1 2\n2 3\n").unwrap();
    let out = pds(&["graph-info", "--edge-list", "p3.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["m"], 3);
    assert_eq!(v["edges"], 2);
    assert_eq!(v["max_degree"], 2);
    assert!((v["norm"].as_f64().unwrap() - 3.0).abs() < 1e-9);
}

#[test]
fn graph_info_from_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("g.json"),
        r#"{"agents": 5, "graph": {"kind": "named", "family": "complete"}, "operator": "incidence", "dim": 2}"#,
    )
    .unwrap();
    let out = pds(&["graph-info", "--config", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["edges"], 10);
    // ‖B‖² = λ_max(ℒ(K₅)) = 5
    assert!((v["norm"].as_f64().unwrap() - 5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn validate_schedule_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"schedule": {"lipschitz": 4.0, "mu": 0.25, "op_norm": 3.0, "r": 0.5, "mode": "deterministic"}, "horizon": 300}"#;
    std::fs::write(dir.path().join("s.json"), good).unwrap();
    let out = pds(&["validate-schedule", "--config", "s.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["passed"], true);
    assert!(dir.path().join("o/schedule.json").exists());

    let stoch = r#"{"schedule": {"lipschitz": 1.0, "mu": 0.0, "sigma": 1.0, "op_norm": 2.0, "r": 1.0, "c": 0.5, "n": 50, "mode": "stochastic"}}"#;
    std::fs::write(dir.path().join("st.json"), stoch).unwrap();
    let out = pds(&["validate-schedule", "--config", "st.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));

    let missing = r#"{"schedule": {"lipschitz": 1.0, "mu": 0.0, "op_norm": 2.0, "r": 1.0, "mode": "deterministic"}}"#;
    std::fs::write(dir.path().join("m.json"), missing).unwrap();
    assert_eq!(pds(&["validate-schedule", "--config", "m.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), RUN).unwrap();
    for (out, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let o = pds(&["run", "--config", "run.json", "--out", out, "--seed", seed], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let h = |d: &str| hash_file(&dir.path().join(d).join("summary.json"));
    assert_eq!(h("a"), h("b"));
    assert_ne!(h("a"), h("c"));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(s["gradients"], 12);
    assert_eq!(s["init_gradients"], 1);
    assert_eq!(s["audit_violations"], 0);
    assert!(dir.path().join("a/metrics.csv").exists());
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), RUN).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pds"))
        .args(["run", "--config", "run.json"])
        .current_dir(dir.path())
        .env("PDS_OUT", "from_env")
        .env("PDS_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from_env/summary.json").exists());
}

#[test]
fn stochastic_replications() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "agents": 3,
      "graph": {"kind": "named", "family": "path"},
      "problem": {"kind": "random_quadratic", "dim": 2},
      "algorithm": {"kind": "spds", "r": 1.0, "c": 0.5, "sigma": 0.3, "noise": "gaussian"},
      "n": 6,
      "replications": 4,
      "seed": 11
    }"#;
    std::fs::write(dir.path().join("s.json"), cfg).unwrap();
    let a = pds(&["run", "--config", "s.json", "--out", "a", "--threads", "1"], dir.path());
    let b = pds(&["run", "--config", "s.json", "--out", "b", "--threads", "3"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(
        hash_file(&dir.path().join("a/summary.json")),
        hash_file(&dir.path().join("b/summary.json"))
    );
    let v = stdout_json(&a);
    assert_eq!(v["replications"]["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn solver_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RUN.replace(r#"{"kind": "pds", "r": 1.0}"#, r#"{"kind": "baseline", "eta": 1e-3, "q": 1e-3}"#);
    std::fs::write(dir.path().join("run.json"), cfg).unwrap();
    let out = pds(&["run", "--config", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver error"));
}

#[test]
fn solve_constrained_meets_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "objective": {"kind": "quadratic", "agents": [{"q_diag": [1.0, 2.0, 1.0], "b": [0.5, -1.0, 0.0]}]},
      "a": [[1.0, 1.0, 1.0]],
      "b": [1.0],
      "r": 1.0,
      "n": 200
    }"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let out = pds(&["solve-constrained", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(v["residual"].as_f64().unwrap() < 1e-2);
}

#[test]
fn plan_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = r#"{
      "agents": 6,
      "graphs": [
        {"label": "path", "spec": {"kind": "named", "family": "path"}, "expected_max_degree": 2},
        {"label": "star", "spec": {"kind": "named", "family": "star"}, "expected_max_degree": 5}
      ],
      "problem": {"kind": "synthetic_logistic", "rows": 120, "features": 3},
      "algorithms": [
        {"kind": "pds", "r": 1.0, "lipschitz_scale": 0.1},
        {"kind": "baseline", "lipschitz_scale": 0.1},
        {"kind": "spds", "r": 1.0, "c": 1.0, "sigma": 0.5, "noise": "subsampling", "lipschitz_scale": 0.1, "n_step": 5}
      ],
      "targets": [{"kind": "gap", "value": 0.5, "feasibility": 0.5}],
      "round_budget": 3000
    }"#;
    std::fs::write(dir.path().join("plan.json"), plan).unwrap();
    for (out, t) in [("a", "1"), ("b", "4")] {
        let o = pds(&["plan", "--config", "plan.json", "--out", out, "--threads", t], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["results.csv", "results.json"] {
        assert_eq!(hash_file(&dir.path().join("a").join(f)), hash_file(&dir.path().join("b").join(f)));
    }
    let csv = std::fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("a/plot_data").is_dir());
}
