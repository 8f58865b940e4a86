use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fiberlink::noise::{synth_power_law_phase_noise, PowerLawNoiseModel};
use fiberlink::scenario::write_series_csv;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn fiberlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberlink"))
        .args(args)
        .env_remove("FIBERLINK_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The 108 km scenario shortened to a minute of simulated time.
fn short_scenario(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("link108.cfg")).unwrap();
    let text = text[..text.find("[outputs]").unwrap()]
        .replace("duration_s = 400.0", "duration_s = 60.0")
        .replace(
            "welch_segment_samples = 262144",
            "welch_segment_samples = 65536",
        )
        .replace(
            "taus_s = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0]",
            "taus_s = [0.1, 1.0]",
        );
    let path = dir.join("short.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&fiberlink(&["--help"])), 0);
    assert_eq!(code(&fiberlink(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&fiberlink(&[])), 1);
    assert_eq!(code(&fiberlink(&["frobnicate"])), 1);
    assert_eq!(code(&fiberlink(&["analyze", "x.csv"])), 1);
}

#[test]
fn shipped_scenarios_validate_cleanly() {
    for name in ["link108", "link86", "cascade600"] {
        let o = fiberlink(&["validate", arg(&scenarios().join(format!("{name}.cfg")))]);
        assert_eq!(code(&o), 0, "{name}: {}", stdout(&o));
        assert!(stdout(&o).contains("ok (0 warnings)"), "{}", stdout(&o));
    }
}

#[test]
fn validate_lists_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenarios().join("link108.cfg"))
        .unwrap()
        .replace("seed = 20070108\n", "")
        .replace("length_km = 11.0", "length_km = -11.0");
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, text).unwrap();
    let o = fiberlink(&["validate", arg(&path)]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("seed required for reproducibility"), "{out}");
    assert!(
        out.contains("shared-1") && out.contains("length_km"),
        "{out}"
    );
}

#[test]
fn missing_file_is_an_io_error() {
    let o = fiberlink(&["validate", "/nonexistent/x.cfg"]);
    assert_eq!(code(&o), 3);
    let o = fiberlink(&["run", "/nonexistent/x.cfg"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_writes_artifacts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_scenario(dir.path());
    let out = dir.path().join("out");
    let o = fiberlink(&["run", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("rule of thumb"));
    for f in [
        "budget.csv",
        "psd_free.csv",
        "psd_compensated.csv",
        "rejection.csv",
        "adev_residual_filtered.csv",
        "adev_residual_unfiltered.csv",
        "report.txt",
        "report.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let psd = std::fs::read_to_string(out.join("psd_free.csv")).unwrap();
    assert!(psd.starts_with("frequency_hz,psd_rad2_per_hz\n"));
}

#[test]
fn run_out_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_scenario(dir.path());
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_fiberlink"))
        .args(["run", arg(&cfg)])
        .env("FIBERLINK_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("report.json").exists());
}

#[test]
fn run_refuses_route_files_and_plan_refuses_scenarios() {
    let o = fiberlink(&["run", arg(&scenarios().join("cascade600.cfg"))]);
    assert_eq!(code(&o), 1);
    let o = fiberlink(&["plan", arg(&scenarios().join("link108.cfg"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn plan_splits_600_km_into_four_segments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan");
    let o = fiberlink(&[
        "plan",
        arg(&scenarios().join("cascade600.cfg")),
        "--out",
        arg(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).contains("4 segment(s), 3 repeater station(s)"),
        "{}",
        stdout(&o)
    );
    let plan = std::fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(plan.lines().count(), 5);
    let predicted = std::fs::read_to_string(out.join("predicted_adev.csv")).unwrap();
    assert_eq!(predicted.lines().count(), 5);
    let o = fiberlink(&["validate", arg(&out.join("segment.cfg"))]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn analyze_computes_adev_and_psd() {
    let dir = tempfile::tempdir().unwrap();
    let m = PowerLawNoiseModel::power_law(0.0, 1e-6).unwrap();
    let s = synth_power_law_phase_noise(&m, 1000.0, 100_000, 4).unwrap();
    let series = dir.path().join("series.csv");
    write_series_csv(&series, &s).unwrap();

    let o = fiberlink(&["analyze", arg(&series), "--adev", "--taus-s", "0.01,0.1,1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("tau_s,adev,error_bar,count\n"));
    assert_eq!(text.lines().count(), 4);

    let out = dir.path().join("psd.csv");
    let o = fiberlink(&[
        "analyze",
        arg(&series),
        "--psd",
        "--segment",
        "4096",
        "--out",
        arg(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let psd = std::fs::read_to_string(&out).unwrap();
    assert_eq!(psd.lines().count(), 1 + 2048);
}

#[test]
fn analyze_rejects_malformed_series() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t_s,phase_rad\n0,1\n0.1,2\n0.3,3\n").unwrap();
    let o = fiberlink(&["analyze", arg(&bad), "--adev"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("non-uniform"), "{}", stderr(&o));
}
