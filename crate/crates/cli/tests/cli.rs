use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn perihom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perihom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models().join(format!("{name}.model")).to_string_lossy().into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn sigma_of_harmonic_mean_file() {
    let out = perihom(&["sigma", "--model", &model("harmonic-mean"), "--grid", "256"]);
    assert_eq!(out.status.code(), Some(0));
    let sigma = json(&out)["sigma"][0][0].as_f64().unwrap();
    assert!((sigma / 3f64.sqrt() - 1.0).abs() < 1e-3, "{sigma}");
}

#[test]
fn inspect_reports_but_does_not_fail() {
    let out = perihom(&["inspect", "--model", &model("bad-atom"), "--grid", "64"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    let checks = report["checks"].as_array().unwrap();
    let kernel = checks.iter().find(|c| c["name"] == "kernel_nonnegative").unwrap();
    assert_eq!(kernel["passed"], false);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(perihom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(perihom(&["sigma", "--bogus"]).status.code(), Some(2));
    assert_eq!(perihom(&["sigma"]).status.code(), Some(2));
    assert_eq!(perihom(&["sigma", "--model", "builtin:nope"]).status.code(), Some(2));
}

#[test]
fn malformed_model_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.model");
    std::fs::write(&path, "name = \"broken\"\ndiffusion = [[").unwrap();
    let out = perihom(&["verify", "--model", path.to_str().unwrap(), "--paths", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `parse`"), "{err}");
}

#[test]
fn version_names_the_build() {
    let out = perihom(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("build "));
}

#[test]
fn help_documents_every_flag() {
    let out = perihom(&["verify", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--model", "--grid", "--config", "--out", "--workers", "--eps", "--dt", "--horizon", "--paths", "--seed", "--delta"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn verify_is_byte_identical_across_runs_and_workers() {
    let m = model("constant-levy");
    let args = ["verify", "--model", &m, "--eps", "0.2,0.1", "--paths", "1000", "--seed", "7"];
    let a = perihom(&args);
    let b = perihom(&args);
    let mut single: Vec<&str> = args.to_vec();
    single.extend(["--workers", "1"]);
    let c = perihom(&single);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    assert_eq!(json(&a)["law"]["reduced_path_used"], true);
}

#[test]
fn failed_verdict_exits_one_and_agrees_with_report() {
    // jumps of size ε·0.5 all exceed δ = 0.01, so the large-jump check fails
    let out = perihom(&[
        "verify", "--model", "builtin:constant-levy", "--eps", "0.2,0.1", "--paths", "1000", "--delta", "0.01",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    assert_eq!(report["passed"], false);
    let etp1 = report["verdicts"].as_array().unwrap().iter().find(|v| v["name"] == "etp1").unwrap();
    assert_eq!(etp1["passed"], false);
}

#[test]
fn flags_override_config_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "model = \"builtin:brownian\"\ngrid = 32\n[sweep]\neps = [0.5, 0.25]\nn_paths = 1000\nseed = 3\ndt = 0.05\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = perihom(&[
        "verify", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["config"]["sweep"]["seed"], 11);
    assert_eq!(report["config"]["sweep"]["n_paths"], 1000);
    assert_eq!(report["config"]["grid"], 32);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"builtin:brownian\"\n[sweep]\npaths = 10\n").unwrap();
    let out = perihom(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_outputs_land_in_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (cmd, file) in [("invariant", "invariant.csv"), ("corrector", "corrector.csv"), ("sigma", "sigma.json")] {
        let o = perihom(&[cmd, "--model", "builtin:asymmetric-atom", "--grid", "64", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
        assert!(o.stdout.is_empty());
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let pi = std::fs::read_to_string(dir.path().join("invariant.csv")).unwrap();
    assert_eq!(pi.lines().count(), 65);
    let total: f64 = pi
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_writes_summary_and_path_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = perihom(&[
        "simulate", "--model", "builtin:brownian", "--grid", "32", "--eps", "0.5,0.25", "--paths", "200", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps of dt"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulation.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("paths_eps0.25.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
}

fn key_paths(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let p = format!("{prefix}.{k}");
                out.push(p.clone());
                key_paths(x, &p, out);
            }
        }
        serde_json::Value::Array(a) => {
            if let Some(x) = a.first() {
                key_paths(x, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn report_schema_matches_golden() {
    let out = perihom(&[
        "verify", "--model", &model("constant-levy"), "--grid", "32", "--eps", "0.5,0.25", "--paths", "1000", "--seed", "1",
    ]);
    let mut keys = Vec::new();
    key_paths(&json(&out), "", &mut keys);
    keys.sort();
    keys.dedup();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_keys.txt");
    if std::env::var_os("PERIHOM_BLESS").is_some() {
        std::fs::write(&golden_path, keys.join("\n") + "\n").unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    let expected: Vec<&str> = golden.lines().collect();
    assert_eq!(keys, expected);
}
