#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn coldmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldmap"))
        .args(args)
        .output()
        .expect("spawn coldmap")
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

pub fn files_config(dir: &Path, target: &str, aux: &str, test: &str, extra: &str) -> PathBuf {
    let t = write(dir, "target.csv", target);
    let a = write(dir, "aux.csv", aux);
    let s = write(dir, "test.csv", test);
    let cfg = format!(
        "[data]\ntarget = {t:?}\nauxiliary = {a:?}\ntest = {s:?}\n\n[experiment]\noutput_dir = {:?}\n{extra}",
        dir.join("out")
    );
    write(dir, "config.toml", &cfg)
}

pub fn synthetic_config(dir: &Path, out: &str) -> PathBuf {
    let cfg = format!(
        r#"[data]
source = "synthetic"

[synthetic]
n_linked = 40
n_cold = 10
n_items_target = 30
n_items_aux = 30
k_true = 3
density_target = 0.3
density_aux = 0.3

[mfus]
k = 3
max_outer_iters = 30

[gbt]
max_stages = 30

[experiment]
seed = 11
methods = ["cdlfm", "af", "mf_gbt", "mfus_gbt", "tmatrix"]
output_dir = {:?}
"#,
        dir.join(out)
    );
    write(dir, &format!("{out}.toml"), &cfg)
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn predictions(path: &Path) -> Vec<(String, String, String, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|row| {
            let row = row.unwrap();
            (
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
                row[3].parse().unwrap(),
            )
        })
        .collect()
}

pub fn report(name: &str, pass: bool) {
    println!("criterion {name}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {name} failed");
}
