use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

use urelu_sysid::urelu::UReluNet;

const PARAMS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk_boucwen.json");

fn urelu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urelu"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn kv<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in\n{stdout}"))
}

fn small_config(dir: &Path, signal: &str) -> PathBuf {
    let cfg = format!(
        r#"{{
  "seed": 3,
  "regressors": {{ "n_u": 2, "n_y": 2 }},
  "init": {{ "n": 2 }},
  "net": {{ "q": 4 }},
  "train": {{ "max_iter": 8 }},
  "paths": {{
    "train": "d/train.csv",
    "validation": ["d/validation.csv"],
    "model": "d/model.json",
    "report": "d/report.json",
    "history": "d/history.csv",
    "out_dir": "d"
  }},
  "datagen": {{
    "params": "{PARAMS}",
    "records": [
      {{ "name": "train", "n_samples": 512, "signal": {signal} }},
      {{ "name": "validation", "n_samples": 256, "signal": {signal} }}
    ]
  }}
}}"#
    );
    let p = dir.join("c.json");
    std::fs::write(&p, cfg).unwrap();
    p
}

const MULTISINE: &str = r#"{ "kind": "multisine", "f_min": 5.0, "f_max": 150.0, "amplitude_rms": 20.0 }"#;

#[test]
fn datagen_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), MULTISINE);
    ok(&urelu(tmp.path(), &["datagen", "--config", "c.json", "--out-dir", "a"]));
    ok(&urelu(tmp.path(), &["datagen", "--config", "c.json", "--out-dir", "b"]));
    ok(&urelu(tmp.path(), &["datagen", "--config", "c.json", "--out-dir", "c", "--seed", "4"]));
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("train.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));

    let meta: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("a/datagen.json")).unwrap()).unwrap();
    assert_eq!(meta["fs"], 750.0);
    assert_eq!(meta["records"][0]["seed"], 3);
    assert_eq!(meta["records"][1]["seed"], 4);
}

#[test]
fn zero_force_gives_zero_output() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), r#"{ "kind": "zero" }"#);
    ok(&urelu(tmp.path(), &["datagen", "--config", "c.json"]));
    let text = std::fs::read_to_string(tmp.path().join("d/train.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 512);
    for r in rows {
        let (u, y) = r.split_once(',').unwrap();
        assert_eq!(u.parse::<f64>().unwrap(), 0.0);
        assert_eq!(y.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn fit_eval_simulate_regions() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), MULTISINE);
    ok(&urelu(tmp.path(), &["datagen", "--config", "c.json"]));

    let fit = ok(&urelu(tmp.path(), &["fit", "--config", "c.json"]));
    assert_eq!(kv(&fit, "m"), "5");
    assert_eq!(kv(&fit, "param_count"), "19");
    assert!(kv(&fit, "iterations").parse::<usize>().unwrap() <= 8);
    assert!(tmp.path().join("d/model.json").exists());
    let history = std::fs::read_to_string(tmp.path().join("d/history.csv")).unwrap();
    assert!(history.starts_with("step,residual_sq\n"));

    let eval = ok(&urelu(tmp.path(), &["eval", "--config", "c.json"]));
    assert_eq!(kv(&eval, "validation.n_s"), "254");
    assert_eq!(kv(&eval, "validation.diverged"), "false");
    assert!(kv(&eval, "validation.rmse_db").parse::<f64>().unwrap() < -40.0);

    let sim = ok(&urelu(
        tmp.path(),
        &["simulate", "--config", "c.json", "--input", "d/validation.csv", "--output", "d/sim.csv"],
    ));
    assert_eq!(kv(&sim, "rmse_db"), kv(&eval, "validation.rmse_db"));
    let rows = std::fs::read_to_string(tmp.path().join("d/sim.csv")).unwrap();
    assert_eq!(rows.lines().count(), 257);

    let regions = ok(&urelu(tmp.path(), &["regions", "--config", "c.json", "--limit", "5"]));
    let mut lines = regions.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["total_cells"], 16);
    assert_eq!(header["truncated"], true);
    assert_eq!(lines.count(), 5);
}

fn save_net(dir: &Path, m: usize, n: usize, q: usize) -> PathBuf {
    let v = DMatrix::from_fn(m, n, |r, c| if r == c { 1.0 } else { 0.1 * (r + c) as f64 });
    let beta = DMatrix::from_fn(n, q, |_, j| j as f64 / q as f64);
    let w = DVector::from_fn(n * q + 1, |i, _| 0.5 - (i % 3) as f64 * 0.25);
    let net = UReluNet::new(v, beta, w, vec![0.0; n], vec![1.0; n]).unwrap();
    let p = dir.join(format!("net_{n}_{q}.json"));
    net.save(&p).unwrap();
    p
}

#[test]
fn regions_of_a_toy_net() {
    let tmp = TempDir::new().unwrap();
    let model = save_net(tmp.path(), 2, 2, 3);
    let out = ok(&urelu(tmp.path(), &["regions", "--model", model.to_str().unwrap()]));
    let mut lines = out.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["total_cells"], 9);
    assert_eq!(header["truncated"], false);
    let cells: Vec<Value> = lines.map(|l| serde_json::from_str::<Value>(l).unwrap()["cell"].clone()).collect();
    assert_eq!(cells.len(), 9);
    assert_eq!(cells[0], serde_json::json!([1, 1]));
    assert_eq!(cells[8], serde_json::json!([3, 3]));
}

#[test]
fn regions_honour_the_limit() {
    let tmp = TempDir::new().unwrap();
    let model = save_net(tmp.path(), 6, 5, 10);
    let out = ok(&urelu(tmp.path(), &["regions", "--model", model.to_str().unwrap(), "--limit", "100"]));
    let mut lines = out.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["total_cells"], 100_000);
    assert_eq!(header["truncated"], true);
    assert_eq!(lines.count(), 100);

    let file = tmp.path().join("r.jsonl");
    let summary = ok(&urelu(
        tmp.path(),
        &["regions", "--model", model.to_str().unwrap(), "--limit", "100", "--out", file.to_str().unwrap()],
    ));
    assert_eq!(std::fs::read_to_string(&file).unwrap().lines().count(), 101);
    assert!(!summary.trim().is_empty());
}

#[test]
fn missing_file_exits_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let out = urelu(tmp.path(), &["fit", "--train", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_override_exits_with_code_one() {
    let tmp = TempDir::new().unwrap();
    let out = urelu(tmp.path(), &["fit", "--set", "net.q=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("net.q"));
}
