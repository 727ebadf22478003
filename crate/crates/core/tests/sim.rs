mod common;

use std::process::Command;
use tval::config::Mode;
use tval::sim::run_scenario;
use tval::telemetry::{write_csv, COLUMNS};

fn csv(mode: Mode, seed: u64) -> Vec<u8> {
    let out = run_scenario(&common::scenario(mode, seed, 300, 12.0)).unwrap();
    assert!(out.completed());
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.records).unwrap();
    buf
}

#[test]
fn identical_runs_are_byte_identical() {
    assert_eq!(csv(Mode::Tval, 4), csv(Mode::Tval, 4));
    assert_ne!(csv(Mode::Tval, 4), csv(Mode::Tval, 5));
}

#[test]
fn driver_only_never_blends() {
    let out = run_scenario(&common::scenario(Mode::DriverOnly, 1, 300, 12.0)).unwrap();
    assert!(out.records.iter().any(|r| r.tau_r));
    for r in &out.records {
        assert_eq!(r.w1, 0.0);
        assert_eq!((r.u_f, r.u_r), (r.u_f_driver, r.u_r_driver));
    }
}

#[test]
fn non_learning_modes_share_the_driver_trajectory() {
    let runs: Vec<_> = [Mode::Passive, Mode::DriverOnly, Mode::TvAlways]
        .into_iter()
        .map(|m| run_scenario(&common::scenario(m, 2, 300, 12.0)).unwrap())
        .collect();
    let passive = &runs[0];
    assert!(passive.records.iter().all(|r| r.w1 == 0.0 && !r.tau_r));
    for other in &runs[1..] {
        for (a, b) in passive.records.iter().zip(&other.records) {
            assert_eq!(a.v_true, b.v_true);
            assert_eq!(a.u_r, b.u_r);
            assert_eq!(a.d_est, b.d_est);
        }
    }
    // The peak-force power bound is never below the power actually drawn.
    assert!(runs[2].summary.energy >= runs[1].summary.energy);
}

#[test]
fn learning_engages_on_the_first_segment() {
    let out = run_scenario(&common::scenario(Mode::Tval, 1, 1000, 12.0)).unwrap();
    let seg = &out.summary.segments[0];
    assert!(seg.full_engagement.is_some());
    assert!(seg.d_error() < 0.1, "D error {}", seg.d_error());
    let dp = common::default_config().regulation.delta_p as f64;
    assert!(out.summary.max_w1_step <= 1.0 / dp + 1e-12);
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tval"));
    c.env("RUST_LOG", "off");
    c
}

#[test]
fn cli_writes_telemetry_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let status = cli()
        .arg("--scenario")
        .arg(common::default_scenario_path())
        .args([
            "--mode",
            "driver-only",
            "--seed",
            "3",
            "-n",
            "200",
            "--duration",
            "3",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        status.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("driver-only_seed3.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, COLUMNS.join(","));
    assert_eq!(text.lines().count(), 301);
    let summary =
        std::fs::read_to_string(dir.path().join("driver-only_seed3_summary.txt")).unwrap();
    for key in [
        "mode = driver-only",
        "seed = 3",
        "particles = 200",
        "status = completed",
        "energy_j = ",
    ] {
        assert!(summary.contains(key), "missing {key:?}");
    }
    assert_eq!(String::from_utf8(status.stdout).unwrap(), summary);
}

#[test]
fn cli_rejects_bad_input() {
    let out = cli()
        .args(["--scenario", "/nonexistent/scenario.toml", "--summary-only"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = cli()
        .arg("--scenario")
        .arg(common::default_scenario_path())
        .args(["-n", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cycle.txt"), "t v_ref\n0 0\n40 800\n").unwrap();
    let scenario = r#"
mode = "driver-only"
duration = 40.0
drive_cycle = "cycle.txt"

[filter]
particles = 100

[[surface]]
t_start = 0.0
label = "grip"
rho = "clear"
theta = { b = 10.0, c = 1.9, d = 2.0, e = 0.97 }
"#;
    let path = dir.path().join("runaway.toml");
    std::fs::write(&path, scenario).unwrap();
    let out = cli()
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary =
        std::fs::read_to_string(dir.path().join("driver-only_seed1_summary.txt")).unwrap();
    assert!(!summary.contains("status = completed"));
}

#[test]
fn driver_tracks_the_cycle_on_dry_road() {
    let mut cfg = common::default_config();
    cfg.mode = Mode::DriverOnly;
    cfg.filter.particles = 100;
    cfg.surface.truncate(1);
    let out = run_scenario(&common::build(cfg)).unwrap();
    assert!(out.completed());
    assert!(
        out.summary.speed_rmse < 0.5,
        "speed RMSE {}",
        out.summary.speed_rmse
    );
}
