use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FIXTURE: &str = "y,d,x1\n1,1,0\n2,1,0\n3,1,0\n4,0,0\n";

fn neyman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neyman")).args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Resolves relative `$ref`s to sibling files in `schemas/`.
struct SchemaDir;

impl jsonschema::Retrieve for SchemaDir {
    fn retrieve(
        &self,
        uri: &jsonschema::Uri<String>,
    ) -> Result<Value, Box<dyn std::error::Error + Send + Sync>> {
        let name = uri.path().as_str().rsplit('/').next().unwrap_or_default();
        Ok(schema(name))
    }
}

fn validator(name: &str) -> jsonschema::Validator {
    jsonschema::options().with_retriever(SchemaDir).build(&schema(name)).unwrap()
}

fn assert_valid(name: &str, value: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{value:#}");
}

fn simulated(dir: &TempDir, n: &str, seed: &str) -> (PathBuf, PathBuf) {
    let csv = dir.path().join("sim.csv");
    let out = neyman(&["simulate", "--dgp", "linear-logit", "--n", n, "--seed", seed, "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (csv.clone(), dir.path().join("sim.truth.json"))
}

#[test]
fn fixture_estimators_give_minus_two() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "fx.csv", FIXTURE);
    for est in ["plugin", "onestep", "tmle"] {
        let out = neyman(&["estimate", "--data", s(&data), "--estimator", est, "--riesz", "ls-linear", "--lambda", "0"]);
        assert_eq!(out.status.code(), Some(0), "{est}: {}", String::from_utf8_lossy(&out.stderr));
        let r = json(&out);
        assert!((r["tau_hat"].as_f64().unwrap() + 2.0).abs() < 1e-6, "{est}: {r}");
        assert_valid("estimate_report.schema.json", &r);
    }
}

#[test]
fn simulate_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (ca, ta) = simulated(&a, "200", "11");
    let (cb, tb) = simulated(&b, "200", "11");
    assert_eq!(fs::read(ca).unwrap(), fs::read(cb).unwrap());
    assert_eq!(fs::read(ta).unwrap(), fs::read(tb).unwrap());
}

#[test]
fn validation_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let single = write(&dir, "one.csv", "y,d,x1\n1,1,0\n");
    let nonbinary = write(&dir, "nb.csv", "y,d,x1\n1,2,0\n2,0,1\n3,1,2\n4,0,3\n");
    let bad_header = write(&dir, "hdr.csv", "d,y,x1\n1,1,0\n0,2,1\n");
    for data in [&single, &nonbinary, &bad_header] {
        let out = neyman(&["estimate", "--data", s(data)]);
        assert_eq!(out.status.code(), Some(1), "{}", data.display());
        let r = json(&out);
        assert_eq!(r["status"], "error");
        assert_eq!(r["kind"], "validation");
    }
}

#[test]
fn unknown_flags_exit_one() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "fx.csv", FIXTURE);
    assert_eq!(neyman(&["estimate", "--data", s(&data), "--bogus"]).status.code(), Some(1));
    assert_eq!(neyman(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(neyman(&["estimate", "--data", s(&data), "--basis", "spline"]).status.code(), Some(1));
    assert_eq!(neyman(&["--help"]).status.code(), Some(0));
}

#[test]
fn conflicting_options_exit_one() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "fx.csv", FIXTURE);
    let out = neyman(&["estimate", "--data", s(&data), "--pipeline", "recommended", "--estimator", "ipw"]);
    assert_eq!(out.status.code(), Some(1));
    let out = neyman(&["estimate", "--data", s(&data), "--riesz", "oracle"]);
    assert_eq!(out.status.code(), Some(1), "oracle without a truth sidecar");
}

#[test]
fn separated_logistic_fit_exits_two_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "sep.csv", "y,d,x1\n0,0,-2\n1,0,-1\n2,1,1\n3,1,2\n");
    let out = neyman(&["estimate", "--data", s(&data), "--estimator", "ipw", "--riesz", "kl-logistic", "--lambda", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json(&out);
    assert_eq!(r["kind"], "numerical");
    assert!(r["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn oracle_representer_reports_decomposition() {
    let dir = TempDir::new().unwrap();
    let (csv, truth) = simulated(&dir, "500", "4");
    let out = neyman(&["estimate", "--data", s(&csv), "--truth", s(&truth), "--estimator", "onestep", "--riesz", "oracle"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_valid("estimate_report.schema.json", &r);
    let d = &r["decomposition"];
    assert_eq!(r["eq1_term"], d["eq1"]);
    // the representer error vanishes when the true representer is used
    assert!(d["eq1"].as_f64().unwrap().abs() < 1e-12);
    let total = d["oracle_noise"].as_f64().unwrap() + d["nuisance_cross"].as_f64().unwrap()
        - d["eq1"].as_f64().unwrap()
        - d["eq2"].as_f64().unwrap();
    assert!((total - r["neyman_error"].as_f64().unwrap()).abs() < 1e-10);
    assert_eq!(r["true_ate"].as_f64(), Some(1.5));
}

#[test]
fn recommended_pipeline_records_its_steps() {
    let dir = TempDir::new().unwrap();
    let (csv, truth) = simulated(&dir, "800", "9");
    let out = neyman(&["estimate", "--data", s(&csv), "--truth", s(&truth), "--pipeline", "recommended"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_valid("estimate_report.schema.json", &r);
    let steps = r["pipeline"].as_array().unwrap();
    let names: Vec<&str> = steps.iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["outcome regression", "logistic Riesz model", "residual-weighted tailored loss", "TMLE"]);
    assert_eq!(r["residual_weights"], true);
    assert!(r["score_residual"].as_f64().unwrap().abs() < 1e-8);
    assert!(r["neyman_error"].as_f64().unwrap().abs() < 1e-10);
    let d = &r["decomposition"];
    let total = d["oracle_noise"].as_f64().unwrap() + d["nuisance_cross"].as_f64().unwrap()
        - d["eq1"].as_f64().unwrap()
        - d["eq2"].as_f64().unwrap();
    assert!((total - r["neyman_error"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn fitted_entropy_weights_balance_exactly() {
    let dir = TempDir::new().unwrap();
    let (csv, _) = simulated(&dir, "400", "2");
    let w = dir.path().join("w.csv");
    let out = neyman(&[
        "estimate", "--data", s(&csv), "--estimator", "ipw", "--riesz", "kl-logistic", "--lambda", "0",
        "--weights-out", s(&w),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&w).unwrap().starts_with("w\n"));
    let out = neyman(&["balance-check", "--data", s(&csv), "--weights", s(&w), "--form", "eb"]);
    assert!(out.status.success());
    let r = json(&out);
    assert_valid("balance_report.schema.json", &r);
    assert!(r["max_abs_violation"].as_f64().unwrap() <= 1e-6, "{r}");
}

#[test]
fn fitted_squared_weights_balance_in_sbw_form() {
    let dir = TempDir::new().unwrap();
    let (csv, _) = simulated(&dir, "300", "5");
    let w = dir.path().join("w.csv");
    let out = neyman(&[
        "estimate", "--data", s(&csv), "--estimator", "ipw", "--riesz", "ls-linear", "--lambda", "0",
        "--weights-out", s(&w),
    ]);
    assert!(out.status.success());
    let r = json(&neyman(&["balance-check", "--data", s(&csv), "--weights", s(&w), "--form", "sbw"]));
    assert!(r["max_abs_violation"].as_f64().unwrap() <= 1e-6, "{r}");
}

#[test]
fn uniform_and_zero_weights_violate_balance() {
    let dir = TempDir::new().unwrap();
    let (csv, _) = simulated(&dir, "300", "6");
    let n = 300;
    let ones = write(&dir, "ones.csv", &format!("w\n{}", "1\n".repeat(n)));
    let zeros = write(&dir, "zeros.csv", &format!("w\n{}", "0\n".repeat(n)));

    let r = json(&neyman(&["balance-check", "--data", s(&csv), "--weights", s(&ones), "--form", "eb"]));
    assert!(r["max_abs_violation"].as_f64().unwrap() > 1e-3);

    // zero weights leave the whole target unmatched
    let r = json(&neyman(&["balance-check", "--data", s(&csv), "--weights", s(&zeros), "--form", "sbw"]));
    let resid: Vec<f64> = r["residuals"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let max = resid.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert_eq!(r["max_abs_violation"].as_f64().unwrap(), max);
    assert!(max > 0.0);
}

#[test]
fn weights_of_wrong_length_exit_one() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "fx.csv", FIXTURE);
    let w = write(&dir, "w.csv", "w\n1\n2\n");
    let out = neyman(&["balance-check", "--data", s(&data), "--weights", s(&w), "--form", "sbw"]);
    assert_eq!(out.status.code(), Some(1));
    let w = write(&dir, "bad.csv", "weight\n1\n2\n3\n4\n");
    let out = neyman(&["balance-check", "--data", s(&data), "--weights", s(&w), "--form", "sbw"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn equivalence_check_statuses() {
    let dir = TempDir::new().unwrap();
    let clean = write(&dir, "clean.csv", "y,d,x1\n1,1,0\n2,0,1\n3,1,3\n4,0,4.5\n");
    let r = json(&neyman(&["equivalence-check", "--data", s(&clean)]));
    assert_valid("equivalence_report.schema.json", &r);
    assert_eq!(r["status"], "verified");
    assert!(r["max_deviation"].as_f64().unwrap() <= 1e-8);

    // the treated unit at 1 is equidistant from both controls
    let ties = write(&dir, "ties.csv", "y,d,x1\n1,0,0\n2,1,1\n3,0,2\n4,1,5\n");
    let out = neyman(&["equivalence-check", "--data", s(&ties), "--metric", "euclidean"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_valid("equivalence_report.schema.json", &r);
    assert_eq!(r["status"], "inconclusive-ties");
    assert!(r["tied_units"].as_u64().unwrap() >= 1);
}

#[test]
fn monte_carlo_is_independent_of_job_count() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one.json");
    let four = dir.path().join("four.json");
    let common = ["estimate", "--reps", "12", "--dgp", "linear-logit", "--n", "300", "--seed", "3"];
    let a = neyman(&[&common[..], &["--jobs", "1", "--out", s(&one)]].concat());
    let b = neyman(&[&common[..], &["--jobs", "4", "--out", s(&four)]].concat());
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(fs::read(&one).unwrap(), fs::read(&four).unwrap());
    let r: Value = serde_json::from_str(&fs::read_to_string(&one).unwrap()).unwrap();
    assert_valid("monte_carlo_report.schema.json", &r);
    assert_eq!(r["completed"], 12);
    assert_eq!(r["estimates"].as_array().unwrap().len(), 12);
}

#[test]
fn matching_estimator_reports_voronoi_balance() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "m.csv", "y,d,x1\n1,1,0\n2,0,1\n3,1,3\n4,0,4.5\n");
    let out = neyman(&["estimate", "--data", s(&data), "--estimator", "match"]);
    assert!(out.status.success());
    let r = json(&out);
    assert_valid("estimate_report.schema.json", &r);
    assert_eq!(r["estimator"], "matching");
    assert!(r["balance"]["max_abs_violation"].as_f64().unwrap() < 1e-12);
}
