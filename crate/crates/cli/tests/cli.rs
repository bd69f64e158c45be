//! Drives the `cowqkd` binary end to end.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use cowqkd::link::SessionConfig;
use cowqkd::sweep::{CalibrationTarget, ConfigFile, PresetSection, CSV_HEADER};

fn cowqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cowqkd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .parse()
        .unwrap()
}

#[test]
fn budget_reproduces_the_80_km_chain() {
    let o = cowqkd(&["budget", "--preset", "80km"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(field(&text, "loss_db"), 16.0);
    assert!((field(&text, "photons_after_fiber") - 0.0126).abs() < 5e-5);
    assert!((field(&text, "total_clicks_hz") - 19305.0).abs() / 19305.0 < 5e-3);
    assert!(text.contains("status = Ok"));
}

#[test]
fn sweep_writes_csv_in_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = cowqkd(&[
        "sweep",
        "--distance",
        "40,80,120",
        "--dr",
        "0.03125",
        "--cr",
        "0.5",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], CSV_HEADER);
    let d: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(d, ["40", "80", "120"]);
}

#[test]
fn preset_sweeps_keep_the_attenuator_columns() {
    let o = cowqkd(&["sweep", "--preset", "145km", "--dr", "0.03125", "--cr", "0.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap().starts_with("120,5,"), "{text}");
}

#[test]
fn configuration_errors_exit_2() {
    assert_eq!(cowqkd(&["sweep", "--dr", "0.1"]).status.code(), Some(2));
    assert_eq!(cowqkd(&["sweep", "--cr", "1.5", "--arbitrary-dr"]).status.code(), Some(2));
    assert_eq!(cowqkd(&["budget", "--preset", "nowhere"]).status.code(), Some(2));
    assert_eq!(cowqkd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cowqkd(&["--config", "/nonexistent.toml", "budget"]).status.code(), Some(2));
    assert!(cowqkd(&["sweep", "--dr", "0.1", "--arbitrary-dr"]).status.success());
}

#[test]
fn calibration_reports_every_preset_and_fails_with_3_when_infeasible() {
    let o = cowqkd(&["calibrate"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["40km", "80km", "120km", "145km"] {
        assert!(text.contains(&format!("{name}: ")), "{text}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut config = ConfigFile::default();
    config.presets.insert(
        "impossible".into(),
        PresetSection {
            distance_km: 80.0,
            extra_db: 0.0,
            filtering_pct: None,
            targets: vec![CalibrationTarget::new(1.0e6, 0.03125, 0.5, 50.0)],
        },
    );
    std::fs::write(&path, config.render()).unwrap();
    let o = cowqkd(&["--config", path.to_str().unwrap(), "calibrate", "--preset", "impossible"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn show_config_round_trips_through_the_loader() {
    let o = cowqkd(&["--show-config"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let again = cowqkd(&["--config", path.to_str().unwrap(), "--show-config"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn stability_summary_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("series.csv");
    let o = cowqkd(&[
        "stability",
        "--mode",
        "analytic",
        "--duration-s",
        "600",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "rel_std"), 0.0);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 11);
    assert_eq!(cowqkd(&["stability", "--duration-s", "30"]).status.code(), Some(2));
}

fn write_session_config(dir: &Path, bit_error: f64) -> String {
    let config = ConfigFile {
        session: SessionConfig::noiseless(200_000, bit_error),
        ..ConfigFile::default()
    };
    let path = dir.join("session.toml");
    std::fs::write(&path, config.render()).unwrap();
    path.to_str().unwrap().to_string()
}

/// Starts Alice on ephemeral ports and returns her child process plus the
/// addresses she reports.
fn spawn_alice(config: &str, extra: &[&str]) -> (std::process::Child, String, String) {
    let mut alice = Command::new(env!("CARGO_BIN_EXE_cowqkd"))
        .args(["--config", config, "serve-alice", "--classical", "127.0.0.1:0", "--quantum", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(alice.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
    let words: Vec<&str> = first.split_whitespace().collect();
    // "listening classical = A quantum = B"
    (alice, words[3].to_string(), words[6].to_string())
}

#[test]
fn tcp_endpoints_agree_on_a_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_session_config(dir.path(), 0.03);
    let (alice_key, bob_key) = (dir.path().join("alice.key"), dir.path().join("bob.key"));
    let (alice, classical, quantum) =
        spawn_alice(&config, &["--seed", "11", "--key-out", alice_key.to_str().unwrap()]);
    let bob = cowqkd(&[
        "--config",
        &config,
        "serve-bob",
        "--classical",
        &classical,
        "--quantum",
        &quantum,
        "--seed",
        "12",
        "--key-out",
        bob_key.to_str().unwrap(),
    ]);
    let alice = alice.wait_with_output().unwrap();
    assert!(bob.status.success(), "{}", String::from_utf8_lossy(&bob.stderr));
    assert!(alice.status.success(), "{}", String::from_utf8_lossy(&alice.stderr));
    let key = std::fs::read(&alice_key).unwrap();
    assert!(!key.is_empty());
    assert_eq!(key, std::fs::read(&bob_key).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join("alice.key.manifest")).unwrap();
    assert_eq!(manifest, std::fs::read_to_string(dir.path().join("bob.key.manifest")).unwrap());
    assert!(manifest.contains("cr = 0.5"));
}

#[test]
fn noisy_tcp_session_aborts_on_both_ends() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_session_config(dir.path(), 0.10);
    let (alice, classical, quantum) = spawn_alice(&config, &["--seed", "3"]);
    let bob = cowqkd(&["--config", &config, "serve-bob", "--classical", &classical, "--quantum", &quantum]);
    let alice = alice.wait_with_output().unwrap();
    assert_eq!(bob.status.code(), Some(1));
    assert_eq!(alice.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&alice.stderr).contains("qber_exceeded"));
    assert!(String::from_utf8_lossy(&bob.stderr).contains("qber_exceeded"));
}
