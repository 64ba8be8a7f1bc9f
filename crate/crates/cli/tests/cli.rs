use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn locc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn classify_qubit_family_finds_certificate() {
    let o = locc(&["classify", &fixture("qubit_family_q0.5_e0.25.json")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["delta"], 0);
    assert_eq!(v["classification"], "NotFiniteRoundLOCC");
}

#[test]
fn classify_limit_is_inconclusive() {
    let o = locc(&["classify", &fixture("m0_q0.5.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["delta"], 1);
    assert_eq!(v["classification"], "Inconclusive");
}

#[test]
fn corrupt_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("m0_q0.5.json")).unwrap();
    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, &text[..text.len() / 2]).unwrap();
    assert_eq!(locc(&["classify", &bad]).status.code(), Some(1));
    assert_eq!(locc(&["classify", &path(dir.path(), "missing.json")]).status.code(), Some(1));
}

#[test]
fn dimension_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("m0_q0.5.json")).unwrap()).unwrap();
    v["party_dims"] = serde_json::json!([2, 3]);
    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(locc(&["delta", &bad]).status.code(), Some(1));
}

#[test]
fn delta_prints_report() {
    let o = locc(&["delta", &fixture("m0_q0.5.json")]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["delta"], 1);
    assert_eq!(v["n"], 3);
    assert!(v["classification"].is_null());
}

#[test]
fn build_qubit_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = locc(&["build", "--family", "qubit", "--q", "0.5", "--eps", "0.25", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["measurement.json", "cycle.json", "m0.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(stdout(&o).contains("measurement: outcomes=4 complete=true delta=0"));
    let built = fs::read_to_string(dir.path().join("measurement.json")).unwrap();
    let fixed = fs::read_to_string(fixture("qubit_family_q0.5_e0.25.json")).unwrap();
    assert_eq!(built, fixed);
}

#[test]
fn build_general_logs_zero_deficit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = locc(&[
        "build", "--family", "general", "--dA", "3", "--dB", "3", "--L", "3", "--eps", "0.05",
        "--seed", "11", "--out", &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("epsilon_star="));
    assert!(s.contains("q_star="));
    assert!(s.contains("measurement: outcomes=6 complete=true delta=0"), "{s}");
}

#[test]
fn build_general_above_threshold_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let ok = locc(&[
        "build", "--family", "general", "--dA", "3", "--dB", "3", "--L", "3", "--eps", "0.05",
        "--seed", "11", "--out", &out,
    ]);
    let eps_star = stdout(&ok)
        .split_whitespace()
        .find_map(|w| w.strip_prefix("epsilon_star="))
        .expect("threshold logged")
        .to_string();
    let o = locc(&[
        "build", "--family", "general", "--dA", "3", "--dB", "3", "--L", "3", "--eps", "0.9",
        "--seed", "11", "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains(&eps_star), "{}", stderr(&o));
}

#[test]
fn build_delta_one_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = locc(&["build", "--family", "delta-one", "--N", "6", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tree = path(dir.path(), "tree.json");
    assert!(locc(&["validate-tree", &tree]).status.success());
    let c = locc(&["classify", "--tree", &tree]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(json(&c)["delta"], 1);
}

#[test]
fn builder_output_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = d.path().display().to_string();
        let o = locc(&[
            "build", "--family", "general", "--L", "2", "--eps", "0.1", "--seed", "5", "--out", &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["measurement.json", "cycle.json", "m0.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let m = fs::read_to_string(a.path().join("measurement.json")).unwrap();
    let again = locc_core::io::measurement_to_json(&locc_core::io::measurement_from_json(&m).unwrap());
    assert_eq!(m, again);
}

#[test]
fn validate_tree_rejects_broken_sum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(locc(&["build", "--family", "delta-one", "--N", "3", "--out", &out]).status.success());
    let tree = path(dir.path(), "tree.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tree).unwrap()).unwrap();
    v["root"]["children"][0]["cumulative_local"][0][0] = serde_json::json!([0.25, 0.0]);
    fs::write(&tree, v.to_string()).unwrap();
    let o = locc(&["validate-tree", &tree]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("violation"));
}

#[test]
fn infinitize_then_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(locc(&["build", "--family", "delta-one", "--N", "3", "--out", &out]).status.success());
    let inf: PathBuf = dir.path().join("inf");
    let o = locc(&[
        "infinitize", &path(dir.path(), "tree.json"), "--eps", "0.05", "--seed", "3", "--out",
        &inf.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("delta=0"));
    let c = locc(&["classify", &path(&inf, "measurement.json")]);
    assert_eq!(c.status.code(), Some(3));

    let s = locc(&["simulate", &path(&inf, "protocol.json"), "--passes", "3"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let records = json(&s);
    let total: f64 = records
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-10, "{total}");
}

#[test]
fn simulate_cycle_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = locc(&["build", "--family", "qubit", "--q", "0.5", "--eps", "0.5", "--out", &out]);
    assert!(o.status.success());
    let s = locc(&["simulate", &path(dir.path(), "cycle.json"), "--passes", "4"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let v = json(&s);
    let last = v.as_array().unwrap().last().unwrap();
    assert_eq!(last["residual"], true);
    assert!((last["probability"].as_f64().unwrap() - 0.00390625).abs() < 1e-12);
    let bad = locc(&["simulate", &path(dir.path(), "cycle.json"), "--state", "basis:9"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn distance_between_fixtures() {
    let o = locc(&[
        "distance",
        &fixture("qubit_family_q0.5_e0.25.json"),
        &fixture("m0_q0.5.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&o);
    let lo = v["d_lower"].as_f64().unwrap();
    let hi = v["d_upper"].as_f64().unwrap();
    assert!(lo > 0.0 && lo <= hi + 1e-9, "{lo} {hi}");
    let same = locc(&["distance", &fixture("m0_q0.5.json"), &fixture("m0_q0.5.json")]);
    assert_eq!(json(&same)["d_lower"].as_f64().unwrap(), 0.0);
}

fn converge(grid: &str) -> (Output, String) {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "rows.csv");
    let o = locc(&["converge", "--family", "qubit", "--q", "0.5", "--eps-grid", grid, "--out", &csv]);
    let text = fs::read_to_string(&csv).unwrap_or_default();
    (o, text)
}

#[test]
fn converge_bound_column() {
    let (_, text) = converge("0.1");
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let bound: f64 = row[3].parse().unwrap();
    assert!((bound - 0.10526315789473684).abs() < 1e-12);
}

#[test]
fn converge_qubit_rows_within_bound() {
    let (o, text) = converge("0.2,0.1,0.05");
    assert_eq!(text.lines().count(), 4);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn converge_zero_grid() {
    let (o, text) = converge("0");
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].split(',').all(|f| f.parse::<f64>().unwrap() == 0.0), "{}", lines[1]);
}

#[test]
fn converge_rejects_out_of_range_grid() {
    let (o, _) = converge("0.1,1.5");
    assert_eq!(o.status.code(), Some(1));
}
