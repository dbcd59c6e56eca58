mod common;

use std::fs;

use coldmap::config::ExperimentConfig;
use coldmap::eval::MetricReport;
use common::*;

#[test]
fn missing_input_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("[data]\ntarget = {missing:?}\nauxiliary = {missing:?}\n"),
    );
    let out = coldmap(&["similarity", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn unknown_method_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "m");
    let out = coldmap(&["run", "--config", cfg.to_str().unwrap(), "--method", "cdtf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cdtf"));
    assert!(!dir.path().join("m/results.json").exists());
}

#[test]
fn similarity_pair_count_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!(
            "[data]\nsource = \"synthetic\"\n[synthetic]\nn_linked = 99\nn_cold = 1\n[experiment]\noutput_dir = {:?}\n",
            dir.path().join("s")
        ),
    );
    let first = coldmap(&["similarity", "--config", cfg.to_str().unwrap()]);
    ok(&first);
    assert!(String::from_utf8_lossy(&first.stdout).contains("100 users, 4950 pairs"));
    let a = fs::read(dir.path().join("s/similarity_target.json")).unwrap();
    ok(&coldmap(&["similarity", "--config", cfg.to_str().unwrap()]));
    let b = fs::read(dir.path().join("s/similarity_target.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn factorize_without_similarity_when_beta_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "f");
    let text = fs::read_to_string(&cfg).unwrap().replace("[mfus]\n", "[mfus]\nbeta = 0.0\n");
    fs::write(&cfg, text).unwrap();
    ok(&coldmap(&["factorize", "--config", cfg.to_str().unwrap()]));
    let model = fs::read_to_string(dir.path().join("f/model_target.json")).unwrap();
    assert!(model.contains("coldmap-model-v1"));
    let log = fs::read_to_string(dir.path().join("f/log_target.csv")).unwrap();
    let objectives: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.len() > 1);
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn factorize_requires_a_matching_similarity_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "g");
    let out = coldmap(&["factorize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    ok(&coldmap(&["similarity", "--config", cfg.to_str().unwrap(), "--domain", "auxiliary"]));
    let aux_sim = dir.path().join("g/similarity_auxiliary.json");
    let small = synthetic_config(dir.path(), "h");
    let text = fs::read_to_string(&small).unwrap().replace("n_linked = 40", "n_linked = 20");
    fs::write(&small, text).unwrap();
    ok(&coldmap(&["similarity", "--config", small.to_str().unwrap()]));
    let bad = dir.path().join("h/similarity_target.json");
    let out = coldmap(&["factorize", "--config", cfg.to_str().unwrap(), "--similarity", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    ok(&coldmap(&[
        "factorize",
        "--config",
        cfg.to_str().unwrap(),
        "--domain",
        "auxiliary",
        "--similarity",
        aux_sim.to_str().unwrap(),
    ]));
}

#[test]
fn flags_override_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "e");
    ok(&coldmap(&["run", "--config", cfg.to_str().unwrap(), "--seed", "5", "--method", "af"]));
    let echoed = ExperimentConfig::load(&dir.path().join("e/config.toml")).unwrap();
    assert_eq!(echoed.experiment.seed, 5);
    let json = fs::read(dir.path().join("e/results.json")).unwrap();
    let reports: Vec<MetricReport> = serde_json::from_slice(&json).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].method, "af");
    assert_eq!(reports[0].seed, 5);
    assert_eq!(reports[0].config_hash, echoed.hash().unwrap());
}

#[test]
fn experiment_and_grid_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "x");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("methods = [\"cdlfm\", \"af\", \"mf_gbt\", \"mfus_gbt\", \"tmatrix\"]", "methods = [\"af\", \"tmatrix\"]\ngrid_k = [2, 3]\ngrid_alpha = [0.01]\ngrid_beta = [0.0, 0.005]\ngrid_rho = [[0.6, 0.2, 0.2]]");
    fs::write(&cfg, text).unwrap();
    ok(&coldmap(&["experiment", "--config", cfg.to_str().unwrap(), "--protocol", "density"]));
    let reports: Vec<MetricReport> =
        serde_json::from_slice(&fs::read(dir.path().join("x/results.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 6);
    let bad = coldmap(&["experiment", "--config", cfg.to_str().unwrap(), "--protocol", "bogus"]);
    assert_eq!(bad.status.code(), Some(2));
    ok(&coldmap(&["grid", "--config", cfg.to_str().unwrap()]));
    let reports: Vec<MetricReport> =
        serde_json::from_slice(&fs::read(dir.path().join("x/results.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 5);
    assert!(dir.path().join("x/results.csv").exists());
}
