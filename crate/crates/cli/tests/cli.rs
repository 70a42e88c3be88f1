use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn peerfx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peerfx"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn json_of(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn coef<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no coefficient {name}"))
}

fn simulate(dir: &Path, seed: &str) {
    let out = peerfx(&["simulate", "--seed", seed, "--out", "sim"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_then_estimate_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "11");
    let out = peerfx(&["estimate", "--input", "sim/sample.csv", "--out", "est", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&dir.path().join("est/estimate.json"));
    let rho = coef(&report, "rho");
    let f1 = coef(&report, "f1");
    let (r, se) = (rho["estimate"].as_f64().unwrap(), rho["se"].as_f64().unwrap());
    assert!((r - 0.4).abs() < 4.0 * se, "rho {r} se {se}");
    let (f, se_f) = (f1["estimate"].as_f64().unwrap(), f1["se"].as_f64().unwrap());
    assert!((f - 1.0).abs() < 4.0 * se_f, "f1 {f} se {se_f}");
    assert_eq!(report["convergence"]["converged"], true);
    // stdout carries the same JSON as the file.
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout, report);
    assert!(dir.path().join("est/estimate.tsv").exists());
    assert!(dir.path().join("est/estimate.txt").exists());
}

#[test]
fn json_numbers_carry_17_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "12");
    let out = peerfx(&["estimate", "--input", "sim/sample.csv", "--format", "json"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("\"estimate\"")).unwrap();
    let num = line.split(": ").nth(1).unwrap().trim_end_matches(',');
    let mantissa = num.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{num}");
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "13");
    let a = peerfx(&["estimate", "--input", "sim/sample.csv", "--format", "json"], dir.path());
    let b = peerfx(&["estimate", "--input", "sim/sample.csv", "--format", "json"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    let again = tempfile::tempdir().unwrap();
    simulate(again.path(), "13");
    assert_eq!(
        std::fs::read(dir.path().join("sim/sample.csv")).unwrap(),
        std::fs::read(again.path().join("sim/sample.csv")).unwrap()
    );
}

#[test]
fn identical_scores_report_unit_f1() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("student_id,class_id,school_id,class_type,y1,y2,sv_x\n");
    for c in 0..30 {
        for i in 0..6 {
            let y = 400.0 + ((c * 7 + i * 3) % 17) as f64 * 5.0 + c as f64;
            let ty = if c % 2 == 0 { "small" } else { "regular" };
            csv.push_str(&format!("s{c}_{i},c{c},sch{},{ty},{y},{y},{}\n", c % 5, (c * 3 + i * i) % 7));
        }
    }
    std::fs::write(dir.path().join("same.csv"), csv).unwrap();
    let out = peerfx(&["estimate", "--input", "same.csv", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let f1 = coef(&report, "f1")["estimate"].as_f64().unwrap();
    assert!((f1 - 1.0).abs() < 1e-10, "{f1}");
    assert_eq!(report["convergence"]["method"], "exact-fit");
    assert!(coef(&report, "rho")["se"].is_null());
}

#[test]
fn diagnose_pseudo_r2_in_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "14");
    let out = peerfx(&["diagnose", "--input", "sim/sample.csv", "--format", "json", "--out", "diag"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&dir.path().join("diag/diagnose.json"));
    let r2 = report["pseudo_r2"].as_array().unwrap();
    assert_eq!(r2.len(), 2);
    for g in r2 {
        let v = g["value"].as_f64().unwrap();
        assert!(v > 0.0 && v < 1.0, "{g}");
    }
    let types: Vec<&str> = report["descriptives"].as_array().unwrap().iter().map(|d| d["class_type"].as_str().unwrap()).collect();
    assert_eq!(types, ["regular", "small"]);
}

#[test]
fn validation_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "student_id,class_id,class_type,y1,y2\n1,a,t,1,2\n2,a,t,1,2\n3,b,t,1,2\n",
    )
    .unwrap();
    let out = peerfx(&["--error-json", "estimate", "--input", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    assert_eq!(err["error"]["line"], 4);

    let out = peerfx(&["estimate", "--input", "missing.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("c.toml"), "[estimator]\nnot_a_field = 1\n").unwrap();
    simulate(dir.path(), "15");
    let out = peerfx(&["estimate", "--input", "sim/sample.csv", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_field"));
}

#[test]
fn weak_instrument_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("student_id,class_id,class_type,y1,y2\n");
    for c in 0..10 {
        for i in 0..4 {
            let y2 = if c % 2 == 0 { 0.0 } else { 3.0 };
            let ty = if c % 2 == 0 { "a" } else { "b" };
            csv.push_str(&format!("s{c}_{i},c{c:02},{ty},{},{y2}\n", ((c * 4 + i) as f64 * 0.37).sin()));
        }
    }
    std::fs::write(dir.path().join("weak.csv"), csv).unwrap();
    let out = peerfx(&["--error-json", "estimate", "--input", "weak.csv", "--fe", "classtype"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "identification");
}

#[test]
fn non_convergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "16");
    std::fs::write(dir.path().join("c.toml"), "[estimator]\nmax_iter = 1\ntol = 1e-300\n").unwrap();
    let out = peerfx(&["estimate", "--input", "sim/sample.csv", "--config", "c.toml", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["convergence"]["converged"], false);
}

#[test]
fn montecarlo_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mc.toml"),
        "[dgp]\nclassrooms = 40\nschools = 10\n[montecarlo]\nreps = 4\nmaster_seed = 5\n",
    )
    .unwrap();
    let out = peerfx(&["montecarlo", "--config", "mc.toml", "--out", "mc", "--format", "tsv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let tsv = std::fs::read_to_string(dir.path().join("mc/mc_summary.tsv")).unwrap();
    assert!(tsv.starts_with("param\ttruth\tmean"));
    assert!(tsv.lines().any(|l| l.starts_with("rho\t")));
    let json = json_of(&dir.path().join("mc/mc_summary.json"));
    assert_eq!(json["reps"], 4);
}

#[test]
fn fixed_effect_and_instrument_flags() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "17");
    let out = peerfx(
        &["estimate", "--input", "sim/sample.csv", "--fe", "school", "--a-choice", "MtM", "--variance", "clustered", "--format", "json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["coefficients"].as_array().unwrap().iter().any(|c| c["name"].as_str().unwrap().starts_with("fe_school[")));
    assert_eq!(report["config"]["a_choice"], "MtM");
    assert_eq!(report["variance"], "clustered");
    let out = peerfx(&["estimate", "--input", "sim/sample.csv", "--instrument", "col:nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
