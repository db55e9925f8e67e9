use std::path::{Path, PathBuf};
use std::process::Command;

use eceth_cli::commands::{evaluate, plot_data, simulate, to_json};
use eceth_cli::{Flags, RunConfig, SimGrid};
use eceth_core::simbench::{generate_rct, Setting};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eceth"));
    c.env_remove("ECETH_SEED");
    c
}

fn rct_csv(dir: &Path, n: usize, alpha: f64, seed: u64) -> PathBuf {
    let path = dir.join(format!("rct_{n}_{alpha}.csv"));
    generate_rct(n, alpha, 0, seed).dataset.write_csv(&path).unwrap();
    path
}

fn flags(input: &Path) -> Flags {
    Flags {
        input: Some(input.to_path_buf()),
        known_pi: Some(0.5),
        bootstrap: Some(0),
        ..Default::default()
    }
}

#[test]
fn calibrated_rct_estimate_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = rct_csv(dir.path(), 20_000, 0.0, 1);
    let mut f = flags(&csv);
    f.bins = Some("10".parse().unwrap());
    f.bootstrap = Some(100);
    f.score = Some(eceth_cli::ScoreArg::Ipw);
    let c = f.resolve(None).unwrap();
    let r = evaluate(&c).unwrap();
    let b = r.bootstrap.unwrap();
    assert!(r.robust.raw.abs() < 0.02, "robust {}", r.robust.raw);
    assert!(b.ci.low <= 0.0 && 0.0 <= b.ci.high, "{:?}", b.ci);
    assert_eq!(r.calibration_table.len(), 10);
    assert_eq!(r.n, 20_000);
    // perfectly calibrated: each bin's γ̂ tracks its mean prediction
    for row in &r.calibration_table {
        assert!((row.gamma_hat.unwrap() - row.mean_delta.unwrap()).abs() < 0.2);
    }
}

#[test]
fn auto_bins_echo_rule() {
    let dir = tempfile::tempdir().unwrap();
    let csv = rct_csv(dir.path(), 500, 0.15, 2);
    let c = flags(&csv).resolve(None).unwrap();
    let r = evaluate(&c).unwrap();
    let v: Value = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
    assert_eq!(v["bins"]["requested"], "auto");
    assert_eq!(v["bins"]["resolved"], 20);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["seed"], 0);
}

#[test]
fn missing_prediction_column_names_flag() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("nodelta.csv");
    std::fs::write(&csv, "y,w,x\n1,0,0.1\n2,1,0.3\n").unwrap();
    let out = bin().args(["evaluate", "--input"]).arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--prediction-col"), "{err}");
    assert!(err.contains("delta"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // bad flag value
    let out = bin().args(["evaluate", "--level", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // single treatment arm: valid input, estimation fails
    let csv = dir.path().join("onearm.csv");
    let mut text = String::from("y,w,x,delta\n");
    for i in 0..50 {
        text.push_str(&format!("{i},1,{},{}\n", i % 7, i as f64 / 50.0));
    }
    std::fs::write(&csv, text).unwrap();
    let out = bin()
        .args(["evaluate", "--bootstrap", "0", "--score", "ipw", "--input"])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_reproduces_from_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = rct_csv(dir.path(), 600, 0.3, 3);
    let first = dir.path().join("first.json");
    let status = bin()
        .args(["evaluate", "--known-pi", "0.5", "--bootstrap", "20", "--epsilon", "0.05", "--epsilon", "0.2"])
        .args(["--seed", "17", "--input"])
        .arg(&csv)
        .arg("--out")
        .arg(&first)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&first).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tests"].as_array().unwrap().len(), 2);
    let cfg = dir.path().join("embedded.json");
    std::fs::write(&cfg, v["config"].to_string()).unwrap();
    let again = bin().args(["evaluate", "--config"]).arg(&cfg).output().unwrap();
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn seed_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let csv = rct_csv(dir.path(), 300, 0.3, 4);
    let out = bin()
        .env("ECETH_SEED", "99")
        .args(["evaluate", "--known-pi", "0.5", "--bootstrap", "0", "--input"])
        .arg(&csv)
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["seed"], 99);
    let out = bin()
        .env("ECETH_SEED", "99")
        .args(["evaluate", "--known-pi", "0.5", "--bootstrap", "0", "--seed", "5", "--input"])
        .arg(&csv)
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["seed"], 5);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"folds": 3, "bins": 7, "bootstrap": 0}"#).unwrap();
    let f = Flags {
        config: Some(cfg),
        bins: Some("4".parse().unwrap()),
        ..Default::default()
    };
    let c = f.resolve(None).unwrap();
    assert_eq!(c.folds, 3);
    assert_eq!(c.bins, "4".parse().unwrap());
}

#[test]
fn plot_data_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = rct_csv(dir.path(), 2000, 0.0, 5);
    let mut f = flags(&csv);
    f.bins = Some("10".parse().unwrap());
    let out = plot_data(&f.resolve(None).unwrap()).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "bin_index,delta_low,delta_high,mean_delta,gamma_hat,count,reference");
    assert_eq!(lines.len(), 11);

    f.bins = Some("1".parse().unwrap());
    let out = plot_data(&f.resolve(None).unwrap()).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    let ds = eceth_core::data::load_csv(&csv, &Default::default()).unwrap();
    let delta = ds.predictions().unwrap();
    let lo = delta.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((cells[1], cells[2]), (lo, hi));
    assert_eq!(cells[5], 2000.0);
}

#[test]
fn simulate_smoke_and_validation() {
    let grid = SimGrid {
        setting: Setting::Rct,
        alphas: vec![0.0],
        ns: vec![500],
        replicates: 10,
        ..Default::default()
    };
    let c = RunConfig {
        simulate: Some(grid.clone()),
        seed: Some(1),
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let r = simulate(&c).unwrap();
    assert!(start.elapsed().as_secs() < 30);
    assert_eq!(r.robust.len(), 1);
    assert_eq!(r.robust[0].estimates.len(), 10);
    let md = r.tables_markdown();
    assert_eq!(md.lines().filter(|l| l.starts_with("| 0 |")).count(), 2);

    let bad = RunConfig {
        simulate: Some(SimGrid { alphas: vec![1.5], ..grid }),
        ..Default::default()
    };
    assert_eq!(simulate(&bad).unwrap_err().exit_code(), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    std::fs::write(&cfg, r#"{"simulate": {"setting": "rct", "alphas": [1.5], "ns": [500], "replicates": 10}}"#).unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_one_layout() {
    // full grid shape with a token number of replicates
    let c = RunConfig {
        simulate: Some(SimGrid {
            replicates: 2,
            ..Default::default()
        }),
        seed: Some(2),
        ..Default::default()
    };
    let r = simulate(&c).unwrap();
    assert_eq!(r.robust.len(), 12);
    assert_eq!(r.plug_in.len(), 12);
    let csv = eceth_core::simbench::emit_tables(&r.robust, eceth_core::simbench::TableFormat::Csv);
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    std::fs::write(
        &cfg,
        r#"{"simulate": {"setting": "observational", "score": "ipw", "misspecify_propensity": true,
            "alphas": [0.15], "ns": [400], "replicates": 4}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let status = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    for f in ["tables.md", "tables_robust.csv", "tables_plug_in.csv", "raw.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(out.join("raw.json")).unwrap()).unwrap();
    let note = raw["robust"][0]["propensity_model"].as_str().unwrap();
    assert!(note.contains("misspecified"), "{note}");
}
