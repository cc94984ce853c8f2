//! End-to-end checks of the command-line contract: file equivalence between
//! the chained commands and a single run, determinism, exit codes and the
//! hash checks between stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Shortened scenario so each test stays within a few seconds.
const SHORT_RUN: &str = r#"
seed = 7

[dynamics]
duration = 1500.0
"#;

/// Atom parked far outside the modes: every frame looks like the empty
/// cavity. A strict detection quantile keeps chance detections away.
const EMPTY_RUN: &str = r#"
seed = 3

[dynamics]
duration = 1000.0
x0 = 4.0
y0 = 4.0
speed_cm_s = 0.0

[reconstruction.grid]
detect_quantile = 0.9999
"#;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cavitrack"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn cavitrack(config: &Path, out: &Path, args: &[&str]) -> Output {
    binary()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Output files whose bytes do not depend on the output directory.
const RESULT_FILES: [&str; 6] = [
    "trajectory.csv",
    "detector.csv",
    "grid.bin",
    "grid.txt",
    "path.csv",
    "evaluation.toml",
];

#[test]
fn chained_commands_match_single_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let (chain, single) = (tmp.path().join("chain"), tmp.path().join("single"));
    for step in ["simulate", "detect", "grid", "reconstruct", "evaluate"] {
        ok(&cavitrack(&cfg, &chain, &[step]));
    }
    ok(&cavitrack(&cfg, &single, &["run"]));
    for name in RESULT_FILES {
        assert!(read(&chain, name) == read(&single, name), "{name} differs");
    }
}

#[test]
fn resolved_config_hash_matches_headers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let out = tmp.path().join("out");
    ok(&cavitrack(&cfg, &out, &["simulate"]));
    let resolved = String::from_utf8(read(&out, "config.resolved.toml")).unwrap();
    let hash = resolved
        .lines()
        .next()
        .and_then(|l| l.split("run_hash ").nth(1))
        .expect("hash line")
        .to_string();
    let trajectory = String::from_utf8(read(&out, "trajectory.csv")).unwrap();
    assert!(trajectory.lines().any(|l| l.starts_with('#') && l.contains(&hash)));
    // rerunning from the resolved file reproduces the trajectory
    let again = tmp.path().join("again");
    ok(&cavitrack(&out.join("config.resolved.toml"), &again, &["simulate"]));
    assert!(read(&out, "trajectory.csv") == read(&again, "trajectory.csv"));
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    ok(&cavitrack(&cfg, &dirs[0], &["simulate"]));
    ok(&cavitrack(&cfg, &dirs[1], &["simulate"]));
    ok(&cavitrack(&cfg, &dirs[2], &["--seed", "8", "simulate"]));
    assert!(read(&dirs[0], "trajectory.csv") == read(&dirs[1], "trajectory.csv"));
    assert!(read(&dirs[0], "trajectory.csv") != read(&dirs[2], "trajectory.csv"));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let (one, four) = (tmp.path().join("one"), tmp.path().join("four"));
    ok(&cavitrack(&cfg, &one, &["--threads", "1", "run"]));
    ok(&cavitrack(&cfg, &four, &["--threads", "4", "run"]));
    for name in RESULT_FILES {
        assert!(read(&one, name) == read(&four, name), "{name} differs");
    }
}

#[test]
fn truth_columns_do_not_reach_the_reconstruction() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let (plain, truth) = (tmp.path().join("plain"), tmp.path().join("truth"));
    for (dir, extra) in [(&plain, None), (&truth, Some("--with-truth"))] {
        ok(&cavitrack(&cfg, dir, &["simulate"]));
        let mut detect = vec!["detect"];
        detect.extend(extra);
        ok(&cavitrack(&cfg, dir, &detect));
        ok(&cavitrack(&cfg, dir, &["grid"]));
        ok(&cavitrack(&cfg, dir, &["reconstruct"]));
    }
    assert!(read(&plain, "detector.csv") != read(&truth, "detector.csv"));
    assert!(read(&plain, "path.csv") == read(&truth, "path.csv"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let out = tmp.path().join("out");
    let zero = cavitrack(&cfg, &out, &["simulate", "--duration", "0"]);
    assert_eq!(zero.status.code(), Some(1));
    let bad = cavitrack(&cfg, &out, &["pattern", "--resolution", "0"]);
    assert_eq!(bad.status.code(), Some(1));
    let garbage = cavitrack(&cfg, &out, &["pattern", "--resolution", "many"]);
    assert_eq!(garbage.status.code(), Some(1));

    let broken = tmp.path().join("broken.toml");
    fs::write(&broken, "seed = 1\n[dynamics]\nnot_a_field = 2\n").unwrap();
    let parse = cavitrack(&broken, &out, &["simulate"]);
    assert_eq!(parse.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("broken.toml:3:"));
}

#[test]
fn grid_from_other_physics_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let other = tmp.path().join("other.toml");
    fs::write(&other, format!("{SHORT_RUN}\n[physics]\ng0_mhz = 15.0\n")).unwrap();
    let (run, foreign) = (tmp.path().join("run"), tmp.path().join("foreign"));
    ok(&cavitrack(&cfg, &run, &["simulate"]));
    ok(&cavitrack(&cfg, &run, &["detect"]));
    ok(&cavitrack(&other, &foreign, &["grid"]));
    let grid = foreign.join("grid.bin");
    let o = cavitrack(&cfg, &run, &["reconstruct", "--grid", grid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}

#[test]
fn empty_cavity_record_gives_empty_path_and_warning_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), EMPTY_RUN);
    let out = tmp.path().join("out");
    for step in ["simulate", "detect", "grid"] {
        ok(&cavitrack(&cfg, &out, &[step]));
    }
    let o = cavitrack(&cfg, &out, &["reconstruct"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let path = String::from_utf8(read(&out, "path.csv")).unwrap();
    let rows: Vec<&str> = path.lines().filter(|l| !l.starts_with('#') && !l.starts_with("t_mid")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').nth(4) == Some("0")), "{rows:?}");
}

#[test]
fn tolerance_failure_exits_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SHORT_RUN);
    let out = tmp.path().join("out");
    ok(&cavitrack(&cfg, &out, &["run"]));
    let o = cavitrack(&cfg, &out, &["evaluate", "--tolerance", "0.0"]);
    assert_eq!(o.status.code(), Some(3));
    ok(&cavitrack(&cfg, &out, &["evaluate", "--tolerance", "100.0"]));
}

#[test]
fn pattern_writes_greymap() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[pattern]\nresolution = 41\n");
    let out = tmp.path().join("out");
    ok(&cavitrack(&cfg, &out, &["pattern", "--atom", "0.5,-0.3"]));
    let pgm = read(&out, "pattern.pgm");
    assert!(pgm.starts_with(b"P5\n41 41\n65535\n"));
    assert_eq!(pgm.len(), b"P5\n41 41\n65535\n".len() + 41 * 41 * 2);
}
