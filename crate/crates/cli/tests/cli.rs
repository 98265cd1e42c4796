//! End-to-end tests of the `qpembed` binary: exit-code contract, JSON/CSV
//! shapes, and byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpembed"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).expect("utf8 stderr");
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write temp file");
}

#[test]
fn cfrac_golden_emits_fibonacci_json() {
    let out = run(&["cfrac", "--alpha", "golden", "--depth", "30", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&stdout_str(&out)).expect("json stdout");
    assert_eq!(doc["schema"], "qpembed/1");
    let q: Vec<&str> = doc["q"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let mut fib = vec![1u64, 1];
    while fib.len() < q.len() {
        fib.push(fib[fib.len() - 1] + fib[fib.len() - 2]);
    }
    let expect: Vec<String> = fib.iter().map(|x| x.to_string()).collect();
    assert_eq!(q, expect);
    assert_eq!(doc["termination"], "requested_depth");
    // Golden mean: ln(q_{n+1})/q_n decays geometrically, so the tail
    // supremum at depth 30 is far below any Liouville signal.
    assert!(doc["beta_hat"].as_f64().unwrap() < 0.01);
}

#[test]
fn gen_instance_is_byte_deterministic() {
    let args = ["gen-instance", "--seed", "99", "--modes", "3", "--amplitude", "2e-3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same seed must give identical bytes");
    let c = run(&["gen-instance", "--seed", "100", "--modes", "3", "--amplitude", "2e-3"]);
    assert_ne!(a.stdout, c.stdout, "different seeds must differ");
}

#[test]
fn gen_instance_matches_requested_norm() {
    let out = run(&["gen-instance", "--seed", "5", "--amplitude", "7e-4", "--h", "0.4"]);
    assert!(out.status.success());
    let cfg: qpembed::embedding::EmbedConfig =
        serde_json::from_str(&stdout_str(&out)).expect("config json");
    let got = cfg.g.norm_h(0.4);
    assert!((got - 7e-4).abs() <= 1e-14 * 7e-4 + 1e-18, "norm {got}");
}

#[test]
fn embed_then_roundtrip_closes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let rep = dir.path().join("rep.json");
    let rt = dir.path().join("rt.json");
    let out = run(&[
        "gen-instance", "--seed", "42", "--modes", "3", "--amplitude", "1e-3",
        "--out", cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&["embed", "--config", cfg.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "roundtrip", "--report", rep.to_str().unwrap(), "--grid", "12",
        "--out", rt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&rt).unwrap()).unwrap();
    assert_eq!(doc["pass"], true);
    let defect = doc["defect"].as_f64().unwrap();
    let tol = doc["tol"].as_f64().unwrap();
    assert!(defect <= tol, "defect {defect} vs tol {tol}");
}

#[test]
fn embed_above_threshold_exits_3_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = run(&[
        "gen-instance", "--seed", "1", "--amplitude", "0.5",
        "--out", cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&["embed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "numerical");
    assert!(err["error"]["message"].as_str().unwrap().contains("threshold"));
}

#[test]
fn missing_and_malformed_configs_exit_2() {
    let out = run(&["embed", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    write(&bad, "{\"schema\": 3}");
    let out = run(&["embed", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "validation");
}

#[test]
fn scan_emits_csv_with_monotone_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.json");
    write(
        &cfg,
        r#"{"schema":"qpembed/1","v":{"dim":1,"periods":[1],"coeffs":[],"real":true},"mu":[0.6180339887498949]}"#,
    );
    let out = run(&[
        "scan", "--config", cfg.to_str().unwrap(),
        "--emin", "-1", "--emax", "1", "--steps", "5", "--iters", "4000",
        "--lyap-iters", "200",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("E,rot,lyap,rot_err"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    // Zero potential: rot(E) = arccos(-E/2)/2pi, nondecreasing in E.
    let mid = rows[2][1];
    assert!((mid - 0.25).abs() < 1e-3, "rot(0) = {mid}");
    for w in rows.windows(2) {
        let band = w[0][3] + w[1][3] + 1e-12;
        assert!(w[1][1] >= w[0][1] - band, "rotation dips: {w:?}");
    }
}

#[test]
fn scan_bytes_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.json");
    write(
        &cfg,
        r#"{"schema":"qpembed/1","v":{"dim":1,"periods":[1],"coeffs":[[1,0.25,0.0],[-1,0.25,0.0]],"real":true},"mu":[0.6180339887498949]}"#,
    );
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = bin()
            .args([
                "scan", "--config", cfg.to_str().unwrap(),
                "--emin", "-0.5", "--emax", "0.5", "--steps", "4",
                "--iters", "2000", "--lyap-iters", "200",
            ])
            .env("QPEMBED_THREADS", threads)
            .output()
            .expect("binary runs");
        assert!(out.status.success());
        outs.push(out.stdout);
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn uhcert_certifies_a_strongly_hyperbolic_cocycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("coc.json");
    let out = run(&[
        "gen-instance", "--seed", "7", "--modes", "2", "--amplitude", "1e-4",
        "--class", "hyperbolic", "--lambda", "0.2", "--emit", "cocycle",
        "--out", cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "uhcert", "--config", cfg.to_str().unwrap(),
        "--n", "10", "--grid", "64", "--margin", "0.02",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(doc["status"], "certified_uh");
    assert!(doc["min_gap"].as_f64().unwrap() > 1.0);
}

#[test]
fn rotation_of_constant_flow_matches_its_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sys.json");
    let zero = r#"{"dim":2,"periods":[1,1],"coeffs":[],"real":true}"#;
    write(
        &cfg,
        &format!(
            r#"{{"schema":"qpembed/1","mu":[1.0,0.6180339887498949],"A":[[0.0,0.9424777960769379],[-0.9424777960769379,0.0]],"F":{{"tag":"sl2R","e":[[{zero},{zero}],[{zero},{zero}]]}},"h":0.3}}"#
        ),
    );
    let out = run(&["rotnum-flow", "--config", cfg.to_str().unwrap(), "--tmax", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let value = doc["value"].as_f64().unwrap();
    assert!((value + 0.15).abs() < 1e-6, "value {value}");

    let out = run(&["lyap-flow", "--config", cfg.to_str().unwrap(), "--tmax", "200"]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert!(doc["value"].as_f64().unwrap().abs() < 1e-10);

    let out = run(&["poincare", "--config", cfg.to_str().unwrap(), "--grid", "2"]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let pts = doc["points"].as_array().unwrap();
    assert_eq!(pts.len(), 4);
    for p in pts {
        assert!((p["det"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}
