use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"schema_version = 1
seed = 11

[map]
a1 = 660.0
a2 = -12.0

[[groups]]
label = "non-minority"
mu0 = 2.89
var_theta = 28.73
var_score = 0.5
var_other = 4.0
threshold = 2.6

[[groups]]
label = "minority"
mu0 = 1.13
var_theta = 15.96
var_score = 2.46
var_other = 4.0
threshold = 3.0
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisescreen"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{BASE}\n{extra}")).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_rejects_zero_n() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulate]\nn = 0\n");
    let out_dir = tmp.path().join("out");
    let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "n must be ≥ 1");
    assert_eq!(err["kind"], "config");
    assert_eq!(err["exit_code"], 2);
    assert!(!out_dir.exists(), "failed job must not create outputs");
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let no_seed = tmp.path().join("no_seed.toml");
    std::fs::write(&no_seed, BASE.replace("seed = 11\n", "") + "[simulate]\nn = 10\n").unwrap();
    let out = run(&["simulate", "-c", no_seed.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"].as_str().unwrap().contains("seed"));

    let cfg = write_config(tmp.path(), "[estimate]\ntargets = \"missing.csv\"\n");
    let out = run(&["estimate", "-c", cfg.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"].as_str().unwrap().contains("missing.csv"));

    let out = run(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "config");

    let cfg = write_config(tmp.path(), "[simulate]\nn = 10\n");
    let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "--gamma", "1.5", "--out", tmp.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulate]\nn = 10\n");
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["kind"], "io");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulate]\nn = 20000\ntruncation = true\n\n[bias_lab]\nn_per_group = 600\nreplications = 3\n\n[[panel.groups]]\ngroup = \"minority\"\nn_banks = 4\nn_geos = 6\nn_periods = 8\nexam_every = 4\neligible_share = 0.5\nbase_volume = 20.0\navg_default = 0.055\nmarginal_default = 0.069\nexam_lift = 3.0\neffect_sd = 2.0\nnoise_sd = 2.0\n",
    );
    for command in ["simulate", "bias-lab", "panel"] {
        let mut runs = Vec::new();
        for (i, threads) in ["1", "8", "8"].iter().enumerate() {
            let dir = tmp.path().join(format!("{command}-{i}"));
            let out = run(&[command, "-c", cfg.to_str().unwrap(), "--threads", threads, "--out", dir.to_str().unwrap()]);
            assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
            runs.push(dir_files(&dir));
        }
        assert!(runs[0].iter().any(|(n, _)| n == "manifest.json"));
        assert_eq!(runs[0], runs[1], "{command}: 1 vs 8 threads");
        assert_eq!(runs[1], runs[2], "{command}: repeated run");
    }
}

#[test]
fn manifest_records_hashes_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulate]\nn = 500\n");
    let dir = tmp.path().join("out");
    let out = run(&["simulate", "-c", cfg.to_str().unwrap(), "--seed", "99", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["gamma"], 0.4);
    assert_eq!(manifest["command"], "simulate");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for o in outputs {
        let bytes = std::fs::read(dir.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"], bytes.len());
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }

    // the saved config alone reproduces the run
    let again = tmp.path().join("again");
    let out = run(&["simulate", "-c", dir.join("config.toml").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["population.csv", "moments.csv"] {
        assert_eq!(std::fs::read(dir.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap());
    }
}

#[test]
fn simulate_estimate_counterfactual_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let sim_dir = tmp.path().join("sim");
    let est_dir = tmp.path().join("est");
    let cf_dir = tmp.path().join("cf");
    let cfg = write_config(
        tmp.path(),
        "[simulate]\nn = 20000\n\n[estimate]\ntargets = \"sim/moments.csv\"\nn = 20000\nstarts = 2\nmax_iter = 100\nfixed_map = true\nfix = [\"mu0\", \"var_theta\", \"var_score\"]\n\n[counterfactual]\nparams = \"est/params.csv\"\nn = 20000\n",
    );
    let cfg = cfg.to_str().unwrap();
    let out = run(&["simulate", "-c", cfg, "--out", sim_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["estimate", "-c", cfg, "--out", est_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut params = csv::Reader::from_path(est_dir.join("params.csv")).unwrap();
    let headers = params.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let truth = [("non-minority", 4.0, 2.6), ("minority", 4.0, 3.0)];
    let mut seen = 0;
    for rec in params.records() {
        let rec = rec.unwrap();
        let (_, var_other, threshold) = truth.iter().find(|t| t.0 == &rec[col("group")]).unwrap();
        let fitted_other: f64 = rec[col("var_other")].parse().unwrap();
        let fitted_threshold: f64 = rec[col("threshold")].parse().unwrap();
        assert!((fitted_other / var_other - 1.0).abs() < 0.1, "var_other {fitted_other}");
        assert!((fitted_threshold - threshold).abs() < 0.1, "threshold {fitted_threshold}");
        assert_eq!(rec[col("mu0")].parse::<f64>().unwrap() > 2.0, &rec[col("group")] == "non-minority");
        seen += 1;
    }
    assert_eq!(seen, 2);

    let out = run(&["counterfactual", "-c", cfg, "--out", cf_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(cf_dir.join("counterfactuals.csv")).unwrap();
    for scenario in ["baseline", "remove-other-signal", "equalize-score-precision"] {
        assert_eq!(text.matches(scenario).count(), 2, "{scenario}");
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(cf_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["inputs"][0]["path"].as_str().unwrap().ends_with("params.csv"));
}

#[test]
fn estimate_fix_names_are_checked() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("t.csv"),
        "group,approval_rate,avg_default,marginal_default,avg_approved_score,avg_rejected_score,default_vs_score_slope,score_vs_default_slope\nminority,0.37,0.05,0.07,694,655,-0.0009,-60\n",
    )
    .unwrap();
    let cfg = write_config(tmp.path(), "[estimate]\ntargets = \"t.csv\"\nfix = [\"sigma\"]\n");
    let out = run(&["estimate", "-c", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"].as_str().unwrap().contains("sigma"));
}

#[test]
fn metrics_reads_population_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulate]\nn = 3000\n\n[metrics]\ninput = \"sim/population.csv\"\nroc_points = 50\n");
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["simulate", "-c", cfg, "--out", tmp.path().join("sim").to_str().unwrap()]).status.success());
    let out = run(&["metrics", "-c", cfg, "--out", tmp.path().join("m").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(tmp.path().join("m/metrics.csv")).unwrap();
    let auc_col = r.headers().unwrap().iter().position(|h| h == "auc").unwrap();
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let auc: f64 = row[auc_col].parse().unwrap();
        assert!(auc > 0.5 && auc <= 1.0);
    }
}
