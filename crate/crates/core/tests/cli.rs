use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
trials = 3
seed = 11

[scene]
snr_db = 5.0
num_snapshots = 100
sources = [{ theta_deg = -15.0, spread_deg = 1.0 }, { theta_deg = 30.0, spread_deg = 1.0 }]

[sweep]
variable = "snr_db"
values = [0.0, 10.0]
"#;

fn pcdoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcdoa")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn sweep_csv_is_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = pcdoa(&["sweep", "--config", &cfg, "--threads", "1"]);
    let b = pcdoa(&["sweep", "--config", &cfg, "--threads", "3"]);
    let c = pcdoa(&["sweep", "--config", &cfg, "--threads", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "estimator,sweep_var,sweep_value,rmse_deg,failure_rate,trials_used");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("stage1,snr_db,0,"));
    assert!(lines[4].starts_with("stage2,snr_db,10,"));
}

#[test]
fn sweep_writes_out_file_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("table.json");
    let o = pcdoa(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "json", "--trials", "1", "--seed", "2",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["trials_used"].as_u64().unwrap() <= 1));
}

#[test]
fn spectrum_is_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = pcdoa(&["spectrum", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut max = [0.0f64; 2];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let i = if f[0] == "stage1" { 0 } else { 1 };
        max[i] = max[i].max(f[2].parse().unwrap());
    }
    assert_eq!(max, [1.0, 1.0]);
    assert_eq!(text.lines().count(), 1 + 2 * 360);
}

#[test]
fn simulated_snapshots_round_trip_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let z = dir.path().join("z.csv");
    assert!(pcdoa(&["simulate", "--config", &cfg, "--out", z.to_str().unwrap()]).status.success());
    let direct = pcdoa(&["estimate", "--config", &cfg, "--format", "json"]);
    let from_file = pcdoa(&["estimate", "--config", &cfg, "--format", "json", "--input", z.to_str().unwrap()]);
    assert!(direct.status.success() && from_file.status.success());
    let a: serde_json::Value = serde_json::from_slice(&direct.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&from_file.stdout).unwrap();
    assert_eq!(a["stage2_doa_deg"], b["stage2_doa_deg"]);
    assert_eq!(a["truth_doa_deg"], serde_json::json!([-15.0, 30.0]));
}

#[test]
fn config_errors_exit_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scene]\nsources = [{ theta_deg = 1.0 }]\nmystery = 3\n");
    let o = pcdoa(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[config]"), "{err}");
    assert!(err.contains("mystery"), "{err}");
}

#[test]
fn missing_config_is_io_error() {
    let o = pcdoa(&["sweep", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error[io]"));
}

#[test]
fn point_index_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = pcdoa(&["estimate", "--config", &cfg, "--point", "7"]);
    assert_eq!(o.status.code(), Some(2));
}
