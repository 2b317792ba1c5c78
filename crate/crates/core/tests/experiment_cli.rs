use std::path::PathBuf;
use std::process::Command;

use cellfree::experiment::{preset, run_experiment, ExperimentSpec};

fn small_spec() -> ExperimentSpec {
    let mut spec = preset("desk-fig2").unwrap();
    spec.sweep.values = vec![4, 8];
    spec.num_scenarios = 6;
    spec.base.num_aps = 8;
    spec.base.antennas_per_ap = 2;
    spec.base.num_prbs = 15;
    spec
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree")).args(args).output().unwrap()
}

#[test]
fn csv_is_identical_across_runs_and_thread_counts() {
    let spec = small_spec();
    let a = run_experiment(&spec).unwrap().to_csv().unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&spec).unwrap().to_csv().unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 2 * 6 * 3);
}

#[test]
fn summary_cdfs_are_well_formed() {
    let out = run_experiment(&small_spec()).unwrap();
    for p in &out.summary.points {
        for cdf in [&p.rate_cdf, &p.max_power_cdf, &p.device_power_cdf] {
            if cdf.is_empty() {
                continue;
            }
            assert_eq!(cdf.first().unwrap().p, 0.0);
            assert_eq!(cdf.last().unwrap().p, 1.0);
            assert!(cdf.windows(2).all(|w| w[0].x <= w[1].x && w[0].p <= w[1].p));
        }
    }
    for r in &out.rows {
        assert_eq!(r.feasible, r.min_user_rate_bps.is_some());
        if let Some(q) = r.max_device_power_w {
            assert!((0.0..=out_pd()).contains(&q));
        }
    }
}

fn out_pd() -> f64 {
    small_spec().base.max_device_power_w * (1.0 + 1e-12)
}

#[test]
fn cli_run_writes_the_same_bytes_as_the_library() {
    let dir = scratch("cli-run");
    let spec_path = dir.join("spec.toml");
    std::fs::write(&spec_path, toml::to_string(&small_spec()).unwrap()).unwrap();
    let out = cli(&["run", spec_path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(dir.join("out/rows.csv")).unwrap();
    assert_eq!(written, run_experiment(&small_spec()).unwrap().to_csv().unwrap());
    assert!(dir.join("out/summary.json").exists());
}

#[test]
fn cli_exit_codes() {
    let dir = scratch("cli-codes");
    assert_eq!(cli(&["presets"]).status.code(), Some(0));

    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "num_aps = 0\n").unwrap();
    assert_eq!(cli(&["validate-config", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(cli(&["validate-config", bad.to_str().unwrap()]).status.code(), Some(2));

    let good = dir.join("good.toml");
    std::fs::write(&good, "num_users = 4\nnum_devices = 8\n").unwrap();
    let out = cli(&["validate-config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tau_p=6"));

    assert_eq!(cli(&["oracle", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(cli(&["oracle", "--trials", "100000000"]).status.code(), Some(4));

    let mut hopeless = small_spec();
    hopeless.base.max_device_power_w = 1e-15;
    hopeless.base.pilot_power_device_w = vec![1e-15; hopeless.base.num_devices];
    let spec_path = dir.join("hopeless.toml");
    std::fs::write(&spec_path, toml::to_string(&hopeless).unwrap()).unwrap();
    assert_eq!(cli(&["run", spec_path.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn cli_oracle_writes_a_report() {
    let dir = scratch("cli-oracle");
    let path = dir.join("report.json");
    let out = cli(&["oracle", "--trials", "2000", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(report["trials"], 2000);
}
