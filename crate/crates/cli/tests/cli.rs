use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_behavclust");

const SMALL_SPEC: &str = "\
accounts_per_cluster = 20
length_min = 20
length_max = 37
cluster1.a = 0.8 0 0 0.8
cluster1.noise = 1 0.2 0.2 1
cluster1.default_probability = 0.1
cluster1.onset = 0 1
cluster2.a = -0.6 0 0 -0.6
cluster2.noise = 1 0.2 0.2 1
cluster2.default_probability = 0.2
cluster2.onset = 0 1
cluster3.a = 0 0.7 -0.7 0
cluster3.noise = 1 0.2 0.2 1
cluster3.default_probability = 0.7
cluster3.onset = 0 1
";

fn spec_file(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("small.spec");
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("BEHAV_OUT_DIR")
        .env_remove("BEHAV_THREADS")
        .output()
        .unwrap()
}

fn base_args(spec: &Path) -> Vec<String> {
    ["--synthetic", spec.to_str().unwrap(), "--n-samples", "2000", "--seed", "11"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn pipeline(spec: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["pipeline".to_string()];
    args.extend(base_args(spec));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs, out)
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn pipeline_is_reproducible_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let outs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for (out, threads) in outs.iter().zip(["1", "1", "4"]) {
        let o = pipeline(&spec, out, &["--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["evaluation.json", "evaluation.csv", "manifest.json", "matrix_predict.csv", "clusters_forecast.csv"] {
        let first = read(&outs[0], name);
        assert_eq!(first, read(&outs[1], name), "{name} differs between runs");
        assert_eq!(first, read(&outs[2], name), "{name} differs between thread counts");
    }
    let csv = String::from_utf8(read(&outs[0], "evaluation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "model,h_measure,ks,gini,auc");
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn stages_reproduce_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    assert!(pipeline(&spec, &whole, &[]).status.success());

    let args = base_args(&spec);
    for stage in ["fit", "dissim", "cluster", "score", "evaluate"] {
        let mut a = vec![stage];
        a.extend(args.iter().map(String::as_str));
        let o = run(&a, &staged);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["evaluation.json", "manifest.json", "coefficients_predict_combined.csv", "scores_forecast_aggregate.csv"] {
        assert_eq!(read(&whole, name), read(&staged, name), "{name}");
    }
}

#[test]
fn euclidean_measure_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let out = tmp.path().join("out");
    let o = pipeline(&spec, &out, &["--measure", "euclidean", "--experiment", "predict"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(&out, "evaluation.csv")).unwrap();
    assert!(csv.contains("predict/cluster_dummies/euclidean"));
    assert!(csv.contains("predict/aggregate/none"));
    assert!(!csv.contains("forecast/"));
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_accounts.csv");
    let o = run(&["fit", "--input", missing.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_accounts.csv"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let out = tmp.path().join("out");
    for bad in [["--alpha", "1.5"], ["--k", "1"], ["--measure", "manhattan"]] {
        let o = pipeline(&spec, &out, &bad);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
    }
    let o = Command::new(BIN).arg("pipeline").arg("--bogus").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn computation_failure_leaves_marker() {
    let tmp = tempfile::tempdir().unwrap();
    // no account ever defaults, so no logistic model can be fitted
    let body = ["0.1", "0.2", "0.7"].iter().fold(SMALL_SPEC.to_string(), |s, p| {
        s.replace(&format!("default_probability = {p}"), "default_probability = 0")
    });
    let spec = spec_file(tmp.path(), &body);
    let out = tmp.path().join("out");
    let o = pipeline(&spec, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let marker = String::from_utf8(read(&out, "FAILED")).unwrap();
    assert!(!marker.is_empty());
}

#[test]
fn environment_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let out = tmp.path().join("from_env");
    let mut args = vec!["simulate".to_string()];
    args.extend(base_args(&spec));
    let o = Command::new(BIN).args(&args).env("BEHAV_OUT_DIR", &out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("accounts.csv").is_file());
    assert!(out.join("truth.csv").is_file());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path(), SMALL_SPEC);
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        format!("synthetic = {}\nn_samples = 2000\nseed = 11\nmeasure = ellipsoid\nexperiment = predict\n", spec.display()),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = run(
        &["pipeline", "--config", cfg.to_str().unwrap(), "--measure", "euclidean", "--designs", "aggregate"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = String::from_utf8(read(&out, "manifest.json")).unwrap();
    assert!(manifest.contains("measure = euclidean"));
    assert!(manifest.contains("n_samples = 2000"));
    let csv = String::from_utf8(read(&out, "evaluation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
