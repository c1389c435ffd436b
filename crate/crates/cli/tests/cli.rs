use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn momentshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momentshift")).args(args).output().expect("binary runs")
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthesize(dir: &Path, name: &str, args: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut full = vec!["synthesize"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", path.to_str().unwrap()]);
    let o = momentshift(&full);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

#[test]
fn synthesize_depolarizing_two_copies() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize(dir.path(), "de.json", &["--noise", "depolarizing", "--eps", "0.1", "--k", "2", "--n", "1"]);
    let v = json_file(&p);
    assert!((v["f"].as_f64().unwrap() - 1.234568).abs() < 1e-6);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "mixed_unitary");
}

#[test]
fn synthesize_noiseless() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_file(&synthesize(dir.path(), "id.json", &["--noise", "depolarizing", "--eps", "0", "--k", "2"]));
    assert_eq!(v["f"].as_f64(), Some(1.0));
    assert_eq!(v["t"].as_f64(), Some(0.0));
}

#[test]
fn synthesize_forced_program_prints_solver_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ad.json");
    let o = momentshift(&["synthesize", "--noise", "amplitude-damping", "--eps", "0.2", "--force-sdp", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.contains("source    sdp") && err.contains("Optimal") && err.contains("residuals"), "{err}");
    let v = json_file(&path);
    assert!((v["f"].as_f64().unwrap() - 1.5625).abs() < 1e-4);
}

#[test]
fn singular_noise_exits_with_infeasible_code() {
    let o = momentshift(&["synthesize", "--noise", "depolarizing", "--eps", "1", "--k", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise channel not invertible or moment unrecoverable"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(momentshift(&["synthesize", "--noise", "depolarizing"]).status.code(), Some(1));
    assert_eq!(momentshift(&["synthesize", "--noise", "bitflip", "--eps", "0.1"]).status.code(), Some(1));
    assert_eq!(momentshift(&["verify", "--unknown-field", "1"]).status.code(), Some(1));
    assert_eq!(momentshift(&["synthesize", "--noise", "depolarizing", "--eps", "-0.1"]).status.code(), Some(1));
    assert_eq!(momentshift(&["--help"]).status.code(), Some(0));
}

#[test]
fn overhead_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = momentshift(&[
        "overhead-sweep", "--noise", "amplitude-damping", "--k", "2", "--eps", "0,0.1,0.2", "--methods", "shift,inverse",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["eps", "method", "overhead", "status"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let val = |i: usize| rows[i][2].parse::<f64>().unwrap();
    assert!((val(0) - 1.0).abs() < 1e-4 && (val(1) - 1.0).abs() < 1e-4);
    for i in (0..6).step_by(2) {
        assert_eq!(&rows[i][1], "shift");
        assert!(val(i) <= val(i + 1) + 1e-6);
    }
    assert!((val(5) - 2.25).abs() < 1e-3, "{}", val(5));
}

#[test]
fn estimate_planned_shots_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize(dir.path(), "de.json", &["--noise", "depolarizing", "--eps", "0.1"]);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = momentshift(&["estimate", "--protocol", p.to_str().unwrap(), "--state", "mixed", "--seed", seed, "--renyi", "2", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("renyi_2"));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("11", "a.json");
    let b = run("11", "b.json");
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["shots"], 4498);
    assert!((v["estimate"].as_f64().unwrap() - 0.5).abs() <= 0.05);
    assert_ne!(a, run("12", "c.json"));
}

#[test]
fn estimate_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize(dir.path(), "ad.json", &["--noise", "amplitude-damping", "--eps", "0.2"]);
    let out = dir.path().join("shots.csv");
    let o = momentshift(&["estimate", "--protocol", p.to_str().unwrap(), "--shots", "25", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["shot_index", "component", "outcome", "value"]);
    assert_eq!(rdr.records().count(), 25);
}

#[test]
fn exact_mode_round_trips_through_the_protocol_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize(dir.path(), "de3.json", &["--noise", "depolarizing", "--eps", "0.2", "--k", "3"]);
    let exact = |name: &str| {
        let out = dir.path().join(name);
        let o = momentshift(&["estimate", "--protocol", p.to_str().unwrap(), "--exact", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        json_file(&out)
    };
    let a = exact("a.json");
    // Re-serialize the protocol file and evaluate again.
    let reread = dir.path().join("copy.json");
    std::fs::write(&reread, serde_json::to_string(&json_file(&p)).unwrap()).unwrap();
    let out = dir.path().join("b.json");
    assert!(momentshift(&["estimate", "--protocol", reread.to_str().unwrap(), "--exact", "--seed", "4", "--out", out.to_str().unwrap()]).status.success());
    let b = json_file(&out);
    assert!((a["zeta"].as_f64().unwrap() - b["zeta"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((a["estimate"].as_f64().unwrap() - a["moment"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn recursive_protocol_needs_exact_mode() {
    let dir = tempfile::tempdir().unwrap();
    let p = synthesize(dir.path(), "de3.json", &["--noise", "depolarizing", "--eps", "0.2", "--k", "3"]);
    let o = momentshift(&["estimate", "--protocol", p.to_str().unwrap(), "--shots", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--exact"));
}

#[test]
fn verify_moments_suite() {
    let o = momentshift(&["verify", "--suite", "moments"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().len() >= 5);
}

#[test]
fn verify_sdp_and_protocols_suites() {
    for suite in ["sdp", "protocols"] {
        let o = momentshift(&["verify", "--suite", suite]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
    }
}

#[test]
fn hubbard_demo_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig.csv");
    let summary = dir.path().join("summary.json");
    let args = ["hubbard-demo", "--eps", "0.1", "--shots", "200", "--trials", "10", "--seed", "3", "--out", out.to_str().unwrap(), "--summary", summary.to_str().unwrap()];
    let o = momentshift(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read_to_string(&out).unwrap();
    let mut rdr = csv::Reader::from_reader(first.as_bytes());
    assert_eq!(rdr.headers().unwrap(), vec!["trial_index", "method", "estimate"]);
    let methods: Vec<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(methods.len(), 20);
    assert_eq!(methods.iter().filter(|m| *m == "mitigated").count(), 10);
    let s = json_file(&summary);
    assert!(s["exact"].as_f64().unwrap() > 0.25 && s["exact"].as_f64().unwrap() <= 1.0);
    assert_eq!(s["params"]["trials"], 10);
    assert!(momentshift(&args).status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn floats_use_twelve_significant_digits() {
    let o = momentshift(&["overhead-sweep", "--noise", "depolarizing", "--eps", "0.1", "--methods", "inverse"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let value = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    let digits = value.chars().filter(|c| c.is_ascii_digit()).count();
    assert!(digits <= 12, "{value}");
    assert!((value.parse::<f64>().unwrap() - (1.05f64 / 0.9).powi(2)).abs() < 1e-4);
}
