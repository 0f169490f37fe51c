use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn srlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srlab"))
        .args(args)
        .env_remove("SRLAB_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check {name}"))
}

/// Compares stdout with `tests/golden/<name>`; `SRLAB_BLESS=1` rewrites it.
fn golden(name: &str, args: &[&str]) {
    let out = srlab(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("SRLAB_BLESS").is_some() {
        std::fs::write(&path, &out.stdout).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn golden_trivial_distance() {
    golden(
        "ccdist_trivial.json",
        &[
            "ccdist",
            "--group",
            "aa",
            "--from",
            "1,2,3",
            "--to",
            "1,2,3",
            "--deterministic",
        ],
    );
}

#[test]
fn golden_gamma0_small_grid() {
    golden(
        "gamma0_small.json",
        &[
            "modulus",
            "--family",
            "gamma0",
            "--n",
            "2",
            "--grid",
            "2,4,2",
            "--deterministic",
        ],
    );
}

#[test]
fn golden_verify_groups() {
    golden(
        "verify_groups.json",
        &[
            "verify",
            "--scope",
            "groups",
            "--samples",
            "50",
            "--deterministic",
        ],
    );
}

#[test]
fn verify_maps_reports_unit_dilatation() {
    let out = srlab(&["verify", "--scope", "maps", "--samples", "2000"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(check(&r, "H_f ≡ 1")["status"], "pass");
    assert!(r["elapsed_seconds"].is_number());
}

#[test]
fn q_one_is_a_config_error() {
    let out = srlab(&["modulus", "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_flags_and_keys_are_config_errors() {
    assert_eq!(srlab(&["verify", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"samples": 10, "sample": 3}"#).unwrap();
    let out = srlab(&["verify", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
    assert_eq!(
        srlab(&["ccdist", "--group", "xx", "--from", "0,0,0", "--to", "1,0,0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        srlab(&["ccdist", "--group", "aa", "--from", "0,0,0", "--to", "1,1,0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"samples": 30, "seed": 5, "scope": "groups"}"#).unwrap();
    let out = srlab(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--samples",
        "20",
        "--deterministic",
    ]);
    let cfg = &json(&out)["config"];
    assert_eq!(cfg["samples"], 20);
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["scope"], "groups");
    let out = Command::new(env!("CARGO_BIN_EXE_srlab"))
        .args(["verify", "--scope", "groups", "--samples", "5"])
        .env("SRLAB_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(json(&out)["config"]["seed"], 11);
}

#[test]
fn affine_distance_example() {
    let out = srlab(&[
        "ccdist",
        "--group",
        "aa",
        "--from",
        "0,1,0",
        "--to",
        "0,2.71828,0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let upper = json(&out)["data"]["upper"].as_f64().unwrap();
    assert!((upper - 0.5).abs() < 0.01, "{upper}");
}

#[test]
fn identical_endpoints_give_zero() {
    let r = json(&srlab(&[
        "ccdist", "--group", "h", "--from", "1,-2,3", "--to", "1,-2,3",
    ]));
    assert_eq!(r["data"]["upper"], 0.0);
    assert_eq!(r["data"]["status"], "trivial");
}

#[test]
fn heisenberg_volume_ratio_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    let out = srlab(&[
        "volume",
        "--group",
        "h",
        "--radii",
        "1,2",
        "--samples",
        "40000",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let ratio = check(&json(&out), "v(2)/v(1)")["measured"]
        .as_f64()
        .unwrap();
    assert!((ratio - 16.0).abs() < 1.28);
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("r,vol_lower,vol_upper,stderr,exponent_running\n"));
}

#[test]
fn ring_sequence_decreases() {
    let out = srlab(&[
        "modulus", "--family", "ring", "--group", "h", "--R", "2,3,4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        check(&json(&out), "strictly decreasing in R")["status"],
        "pass"
    );
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let args = [
        "volume",
        "--group",
        "aa",
        "--radii",
        "0.2,0.3",
        "--samples",
        "3000",
        "--deterministic",
    ];
    let a = srlab(&args);
    let b = srlab(&args);
    assert_eq!(a.stdout, b.stdout);
    assert!(!String::from_utf8_lossy(&a.stdout).contains("elapsed"));
}

#[test]
fn lift_round_trip_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("base.csv");
    let output = dir.path().join("lift.csv");
    std::fs::write(&input, "s,xi,eta\n0,1,0\n0.5,1.5,0\n1,2,0\n").unwrap();
    let report = dir.path().join("report.json");
    let out = srlab(&[
        "lift",
        "--input",
        input.to_str().unwrap(),
        "--a0",
        "-1",
        "--curve-out",
        output.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(
        check(&r, "projection of the lift is the input")["status"],
        "pass"
    );
    // η constant ⇒ a stays at a0
    let text = std::fs::read_to_string(output).unwrap();
    assert_eq!(text.lines().nth(3), Some("1.0,-1.0,2.0,0.0"));
}

#[test]
fn numbers_carry_seventeen_digits() {
    let out = srlab(&[
        "ccdist",
        "--group",
        "h",
        "--from",
        "0,0,0",
        "--to",
        "0,0,0",
        "--deterministic",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"upper\": 0.0000000000000000e0"));
}
