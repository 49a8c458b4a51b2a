use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kou_wdra::io;
use kou_wdra::kou::KouParams;
use kou_wdra::simulation::{log_returns, simulate, SimConfig};
use serde_json::Value;

fn kouwdra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kouwdra"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_into(dir: &Path, paths: &str, days: &str, seed: &str) -> PathBuf {
    let out = kouwdra(&[
        "simulate", "--paper-params", "--paths", paths, "--days", days, "--seed", seed, "--out-dir", s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("paths.csv")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path) {
    let m = manifest(dir);
    let listed: BTreeSet<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let on_disk: BTreeSet<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(listed, on_disk);
    assert!(m["duration_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["version"].is_string());
}

#[test]
fn simulate_shape_determinism_and_roundtrip() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let csv = simulate_into(a.path(), "100", "247", "7");
    simulate_into(b.path(), "100", "247", "7");
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 248);
    assert!(lines.iter().all(|l| l.split(',').count() == 101));
    assert_eq!(fs::read(&csv).unwrap(), fs::read(b.path().join("paths.csv")).unwrap());
    assert_manifest_complete(a.path());
    assert_eq!(manifest(a.path())["seed"], 7);

    let side = io::read_sidecar(&io::sidecar_path(&csv)).unwrap();
    let back = io::read_paths_csv(&csv, Some(&side), 0.0).unwrap();
    let expected = simulate(
        &KouParams::paper(),
        &SimConfig {
            n_paths: 100,
            n_days: 247,
            seed: 7,
            ..SimConfig::default()
        },
    )
    .unwrap();
    assert_eq!(back, expected);
}

#[test]
fn simulate_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = kouwdra(&["simulate", "--paper-params", "--paths", "0", "--seed", "1", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"mu":0,"sigma":-1,"lambda":1,"p":0.5,"eta1":2,"eta2":1,"alpha":0}"#).unwrap();
    let out = kouwdra(&["simulate", "--params", s(&bad), "--seed", "1", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let out = kouwdra(&["--test-mode", "simulate", "--paper-params", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

fn returns_file(dir: &Path) -> PathBuf {
    let set = simulate(
        &KouParams::paper(),
        &SimConfig {
            n_paths: 1,
            n_days: 2000,
            seed: 3,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let p = dir.join("returns.csv");
    io::write_returns_csv(&p, &log_returns(&set)[0]).unwrap();
    p
}

#[test]
fn calibrate_pipeline_is_deterministic() {
    let input = tempfile::tempdir().unwrap();
    let returns = returns_file(input.path());
    let run = |dir: &Path| {
        let out = kouwdra(&["calibrate", s(&returns), "--seed", "5", "--plot", "--out-dir", s(dir)]);
        assert!(matches!(code(&out), 0 | 3), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.join("params.json")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path()), run(b.path()));

    let params: Value = serde_json::from_slice(&fs::read(a.path().join("params.json")).unwrap()).unwrap();
    let p = KouParams::new(
        params["mu"].as_f64().unwrap(),
        params["sigma"].as_f64().unwrap(),
        params["lambda"].as_f64().unwrap(),
        params["p"].as_f64().unwrap(),
        params["eta1"].as_f64().unwrap(),
        params["eta2"].as_f64().unwrap(),
        params["alpha"].as_f64().unwrap(),
    );
    assert!(p.is_ok());
    assert!(params["log_likelihood"].as_f64().unwrap().is_finite());
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,log_likelihood,best_log_likelihood\n"));
    let density = fs::read_to_string(a.path().join("density_report.csv")).unwrap();
    assert!(density.starts_with("x,model_density,kde_density\n"));
    assert!(a.path().join("density.svg").is_file());
    assert_manifest_complete(a.path());
    let m = manifest(a.path());
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    // the fitted parameters feed straight back into simulate
    let sim = tempfile::tempdir().unwrap();
    let params_path = a.path().join("params.json");
    let out = kouwdra(&["simulate", "--params", s(&params_path), "--seed", "1", "--paths", "3", "--out-dir", s(sim.path())]);
    assert_eq!(code(&out), 0);
}

#[test]
fn calibrate_errors_and_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.path().join("out");
    let out = kouwdra(&["calibrate", s(&empty), "--seed", "1", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "log_return\n0.01\nnot-a-number\n").unwrap();
    let out = kouwdra(&["calibrate", s(&bad), "--seed", "1", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let returns = returns_file(dir.path());
    let out = kouwdra(&["calibrate", s(&returns), "--seed", "1", "--max-iters", "5", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 3);
    let params: Value = serde_json::from_slice(&fs::read(out_dir.join("params.json")).unwrap()).unwrap();
    assert_eq!(params["converged"], false);
    assert_eq!(params["iterations"], 5);
    assert_manifest_complete(&out_dir);
}

fn small_train(dir: &Path, paths: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", s(paths), "--hidden", "4", "--seed", "9", "--out-dir", s(dir)];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "3"]);
    }
    args.extend_from_slice(extra);
    kouwdra(&args)
}

#[test]
fn train_outputs_and_determinism() {
    let data = tempfile::tempdir().unwrap();
    let paths = simulate_into(data.path(), "10", "20", "2");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(a.path(), &paths, &["--plot"])), 0);
    assert_eq!(code(&small_train(b.path(), &paths, &[])), 0);
    let trace = fs::read(a.path().join("utility_trace.csv")).unwrap();
    assert_eq!(trace, fs::read(b.path().join("utility_trace.csv")).unwrap());
    let text = String::from_utf8(trace).unwrap();
    assert!(text.starts_with("epoch,expected_utility\n"));
    assert_eq!(text.lines().count(), 4);
    for f in ["theta.csv", "consumption.csv"] {
        let t = fs::read_to_string(a.path().join(f)).unwrap();
        assert!(t.starts_with("day,mean,p10,p90\n"));
        assert_eq!(t.lines().count(), 21);
    }
    assert_eq!(fs::read_to_string(a.path().join("terminal_wealth.csv")).unwrap().lines().count(), 11);
    assert!(a.path().join("checkpoint.json").is_file());
    assert!(a.path().join("utility_trace.svg").is_file());
    assert_manifest_complete(a.path());
    let m = manifest(a.path());
    assert_eq!(m["config"]["hidden_size"], 4);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn train_zero_epochs_and_errors() {
    let data = tempfile::tempdir().unwrap();
    let paths = simulate_into(data.path(), "5", "12", "2");
    let out = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(out.path(), &paths, &["--epochs", "0"])), 0);
    assert_eq!(
        fs::read_to_string(out.path().join("utility_trace.csv")).unwrap(),
        "epoch,expected_utility\n"
    );
    assert_eq!(code(&small_train(out.path(), &paths, &["--days", "30"])), 2);
    assert_eq!(code(&small_train(out.path(), &data.path().join("missing.csv"), &[])), 2);
    assert_eq!(code(&small_train(out.path(), &paths, &["--zeta", "1.5"])), 2);
}

#[test]
fn train_improves_utility_under_default_settings() {
    let data = tempfile::tempdir().unwrap();
    let paths = simulate_into(data.path(), "100", "247", "7");
    let out = tempfile::tempdir().unwrap();
    let o = kouwdra(&["train", s(&paths), "--epochs", "20", "--seed", "7", "--out-dir", s(out.path())]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out.path().join("utility_trace.csv")).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 20);
    assert!(values.last().unwrap() > values.first().unwrap());
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn compare_outputs_and_equivalence() {
    let data = tempfile::tempdir().unwrap();
    let paths = simulate_into(data.path(), "10", "20", "4");
    let base = ["compare", s(&paths), "--hidden", "4", "--epochs", "3", "--seed", "4"];

    let dflt = tempfile::tempdir().unwrap();
    let mut args = base.to_vec();
    args.extend(["--plot", "--out-dir", s(dflt.path())]);
    assert_eq!(code(&kouwdra(&args)), 0);
    let sm = summary(dflt.path());
    let keys: BTreeSet<&str> = sm.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "crra_final_utility",
        "wdra_final_utility",
        "crra_theta_std",
        "wdra_theta_std",
        "crra_mean_terminal_wealth",
        "wdra_mean_terminal_wealth",
        "crra_mean_cumulative_consumption",
        "wdra_mean_cumulative_consumption",
    ]
    .into_iter()
    .collect();
    assert_eq!(keys, expected);
    for f in ["utility_trace.csv", "terminal_wealth_hist.csv", "theta_hist.csv", "theta.csv", "consumption.csv"] {
        assert!(dflt.path().join(f).is_file(), "{f}");
    }
    assert!(fs::read_to_string(dflt.path().join("utility_trace.csv"))
        .unwrap()
        .starts_with("epoch,crra,wdra\n"));
    assert_manifest_complete(dflt.path());

    let eq = tempfile::tempdir().unwrap();
    let mut args = base.to_vec();
    args.extend(["--rho", "3", "--b0", "3", "--b1", "0", "--b2", "0", "--out-dir", s(eq.path())]);
    assert_eq!(code(&kouwdra(&args)), 0);
    let sm = summary(eq.path());
    for k in ["final_utility", "theta_std", "mean_terminal_wealth", "mean_cumulative_consumption"] {
        assert_eq!(sm[format!("crra_{k}")], sm[format!("wdra_{k}")], "{k}");
    }

    let missing = data.path().join("nope.csv");
    let out = kouwdra(&["compare", s(&missing), "--seed", "1", "--out-dir", s(eq.path())]);
    assert_eq!(code(&out), 2);
}
