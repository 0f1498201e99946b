use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;
use tot_core::set_distance::{lift_ground_metric, LiftMode};
use tot_core::Tensor;

fn tot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tot"))
        .args(args)
        .env_remove("TOT_LP_MAX_VARIABLES")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    cost: PathBuf,
    marginals: PathBuf,
}

fn antidiagonal() -> Fixture {
    let dir = TempDir::new().unwrap();
    let cost = write(&dir, "c.json", r#"{"d": 2, "n": 2, "data": [0, 1, 1, 0]}"#);
    let marginals = write(&dir, "p.json", r#"{"p": [[0.5, 0.5], [0.5, 0.5]]}"#);
    Fixture {
        dir,
        cost,
        marginals,
    }
}

#[test]
fn approx_on_two_by_two_fixture() {
    let f = antidiagonal();
    let trace = f.dir.path().join("trace.jsonl");
    let plan = f.dir.path().join("plan.json");
    let out = tot(&[
        "approx",
        "--cost",
        s(&f.cost),
        "--marginals",
        s(&f.marginals),
        "--delta",
        "0.1",
        "--trace",
        s(&trace),
        "--plan-out",
        s(&plan),
    ]);
    let v = json(&out);
    assert!(v["value"].as_f64().unwrap() <= 0.1);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let positions: Vec<usize> = [
        "value",
        "bracket",
        "delta",
        "lambda",
        "epsilon",
        "k_stop",
        "movement_l1",
    ]
    .iter()
    .map(|k| text.find(&format!("\"{k}\":")).unwrap())
    .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    assert_eq!(v["plan_file"], s(&plan));
    let b = Tensor::from_json(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert!((b.sum() - 1.0).abs() < 1e-12);
    let last = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .to_string();
    let last: Value = serde_json::from_str(&last).unwrap();
    assert!(last.get("bound").is_some());
}

#[test]
fn output_is_deterministic_and_round_trips() {
    let f = antidiagonal();
    let args = [
        "approx",
        "--cost",
        s(&f.cost),
        "--marginals",
        s(&f.marginals),
        "--delta",
        "0.05",
    ];
    let a = tot(&args);
    let b = tot(&args);
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    let value = v["value"].as_f64().unwrap();
    // shortest round-trip text parses back to the same bits
    let text = serde_json::to_string(&v["value"]).unwrap();
    assert_eq!(text.parse::<f64>().unwrap().to_bits(), value.to_bits());
}

#[test]
fn solve_exact_single_mode() {
    let dir = TempDir::new().unwrap();
    let c = write(
        &dir,
        "c.json",
        r#"{"d": 1, "n": 3, "data": [2.0, -1.0, 0.5]}"#,
    );
    let p = write(&dir, "p.json", r#"{"p": [[0.2, 0.3, 0.5]]}"#);
    let v = json(&tot(&[
        "solve-exact",
        "--cost",
        s(&c),
        "--marginals",
        s(&p),
    ]));
    let expected = 0.2 * 2.0 - 0.3 + 0.5 * 0.5;
    assert!((v["value"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn validate_cost_on_lifted_metric() {
    let dir = TempDir::new().unwrap();
    let ground = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0]);
    let c = lift_ground_metric(&ground, 4, LiftMode::Matching).unwrap();
    let path = write(&dir, "c4.json", &c.to_json());
    let v = json(&tot(&["validate-cost", "--cost", s(&path)]));
    assert_eq!(v["bisymmetric"], true);
    assert_eq!(v["distance_matrix"], true);
}

fn set_distance_json(dir: &TempDir, mode: LiftMode) -> Value {
    let ground = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let c = lift_ground_metric(&ground, 4, mode).unwrap();
    let cost = write(dir, "c.json", &c.to_json());
    let left = write(dir, "l.json", r#"{"p": [[0.9, 0.1], [0.2, 0.8]]}"#);
    let right = write(dir, "r.json", r#"{"p": [[0.2, 0.8], [0.9, 0.1]]}"#);
    json(&tot(&[
        "set-distance",
        "--cost",
        s(&cost),
        "--left",
        s(&left),
        "--right",
        s(&right),
        "--solver",
        "exact",
    ]))
}

#[test]
fn set_distance_on_reordered_lists() {
    let dir = TempDir::new().unwrap();
    // the matching lift sees only the multisets
    let v = set_distance_json(&dir, LiftMode::Matching);
    assert!(v["distance"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["flags"]["bisymmetric"], true);
    assert_eq!(v["flags"]["indicator"], 0);
    // the sum lift compares position by position
    let v = set_distance_json(&dir, LiftMode::Sum);
    assert!((v["distance"].as_f64().unwrap() - 1.4).abs() < 1e-12);
    assert_eq!(v["flags"]["bisymmetric"], false);
    assert_eq!(v["flags"]["weak_bisymmetric"], true);
    assert_eq!(v["best_permutation"], serde_json::json!([0, 1]));
}

#[test]
fn scale_round_and_scalable() {
    let f = antidiagonal();
    let a = write(
        &f.dir,
        "a.json",
        r#"{"d": 2, "n": 2, "data": [1, 2, 3, 4]}"#,
    );
    let out = f.dir.path().join("scaled.json");
    let v = json(&tot(&[
        "scale",
        "--tensor",
        s(&a),
        "--marginals",
        s(&f.marginals),
        "--epsilon",
        "0.01",
        "--out",
        s(&out),
    ]));
    assert!(v["k_stop"].as_u64().unwrap() as f64 <= v["bound"].as_f64().unwrap());

    let v = json(&tot(&[
        "round",
        "--plan",
        s(&out),
        "--marginals",
        s(&f.marginals),
    ]));
    assert!(v["movement_l1"].as_f64().unwrap() <= v["movement_bound"].as_f64().unwrap() + 1e-12);

    let diag = write(
        &f.dir,
        "diag.json",
        r#"{"d": 2, "n": 2, "data": [1, 0, 0, 1]}"#,
    );
    let v = json(&tot(&[
        "scalable",
        "--tensor",
        s(&diag),
        "--marginals",
        s(&f.marginals),
    ]));
    assert_eq!(v["scalable"], true);
    let row = write(
        &f.dir,
        "row.json",
        r#"{"d": 2, "n": 2, "data": [1, 1, 0, 0]}"#,
    );
    let v = json(&tot(&[
        "scalable",
        "--tensor",
        s(&row),
        "--marginals",
        s(&f.marginals),
    ]));
    assert_eq!(v["scalable"], false);
}

#[test]
fn solve_entropic_closed_form() {
    let f = antidiagonal();
    let v = json(&tot(&[
        "solve-entropic",
        "--cost",
        s(&f.cost),
        "--marginals",
        s(&f.marginals),
        "--lambda",
        "5",
        "--epsilon",
        "0.01",
    ]));
    let e = (-5.0f64).exp();
    assert!((v["transport_cost"].as_f64().unwrap() - e / (1.0 + e)).abs() < 1e-9);
}

#[test]
fn malformed_files_exit_one_and_name_the_field() {
    let f = antidiagonal();
    let cases = [
        (r#"{"d": 2, "n": 2, "data": [0, 1, 1]}"#, "`data`"),
        (r#"{"d": 2, "data": [0, 1, 1, 0]}"#, "`n`"),
        (r#"{"d": 2, "n": 2, "data": [0, "x", 1, 0]}"#, "`data[1]`"),
        ("not json", "invalid JSON"),
    ];
    for (text, needle) in cases {
        let bad = write(&f.dir, "bad.json", text);
        let out = tot(&[
            "solve-exact",
            "--cost",
            s(&bad),
            "--marginals",
            s(&f.marginals),
        ]);
        assert_eq!(out.status.code(), Some(1), "{text}");
        assert!(stderr(&out).contains(needle), "{text}: {}", stderr(&out));
    }
    let bad = write(&f.dir, "badp.json", r#"{"p": [[0.5, 0.5], [0.9, 0.3]]}"#);
    let out = tot(&["solve-exact", "--cost", s(&f.cost), "--marginals", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`p`"));
}

#[test]
fn contract_violation_exits_two() {
    let f = antidiagonal();
    // the positive variant refuses zero entries
    let out = tot(&[
        "scale",
        "--tensor",
        s(&f.cost),
        "--marginals",
        s(&f.marginals),
        "--epsilon",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sinkhorn_scale"));
    let three = write(
        &f.dir,
        "p3.json",
        r#"{"p": [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]}"#,
    );
    let out = tot(&[
        "solve-exact",
        "--cost",
        s(&f.cost),
        "--marginals",
        s(&three),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_three_and_keeps_the_trace() {
    let f = antidiagonal();
    let a = write(
        &f.dir,
        "a.json",
        r#"{"d": 2, "n": 2, "data": [1, 50, 2, 1]}"#,
    );
    let trace = f.dir.path().join("t.jsonl");
    let out = tot(&[
        "scale",
        "--tensor",
        s(&a),
        "--marginals",
        s(&f.marginals),
        "--epsilon",
        "0.001",
        "--max-iter",
        "1",
        "--trace",
        s(&trace),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() >= 2);
}

#[test]
fn lp_cap_comes_from_the_environment() {
    let f = antidiagonal();
    let out = Command::new(env!("CARGO_BIN_EXE_tot"))
        .args([
            "solve-exact",
            "--cost",
            s(&f.cost),
            "--marginals",
            s(&f.marginals),
        ])
        .env("TOT_LP_MAX_VARIABLES", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cap 3"));
    let out = Command::new(env!("CARGO_BIN_EXE_tot"))
        .args([
            "solve-exact",
            "--cost",
            s(&f.cost),
            "--marginals",
            s(&f.marginals),
        ])
        .env("TOT_LP_MAX_VARIABLES", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("TOT_LP_MAX_VARIABLES"));
}
