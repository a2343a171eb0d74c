//! End-to-end checks of the `kgan` binary and its artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use kgan::checkpoint::Checkpoint;
use kgan::cli::report::REPORT_HEADER;
use kgan::cli::run::{prepare, CHECKPOINT_FILE, METRICS_FILE, SAMPLES_FILE};
use kgan::cli::parse_config;
use kgan::trainer::METRICS_HEADER;

const SMOKE_BUDGET: Duration = Duration::from_secs(60);

fn kgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn bundled_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_modes.conf")
}

const SMALL: &str = "\
[data]
samples = 64
[model]
loss = logistic
features = 8
hidden = 4
[train]
iterations = 30
log_interval = 10
batch_size = 16
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn metrics_header_is_stable() {
    assert_eq!(METRICS_HEADER, "iter,h,g_recovered,gap,div_estimate,wall_ms");
    assert_eq!(REPORT_HEADER, "check,lhs,rhs,tolerance,pass");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = kgan(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("o").join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("10,"));
    assert!(lines[3].starts_with("30,"));
}

#[test]
fn writes_only_inside_the_output_directory() {
    let root = tempfile::tempdir().unwrap();
    let conf_dir = root.path().join("conf");
    let work = root.path().join("work");
    std::fs::create_dir_all(&conf_dir).unwrap();
    std::fs::create_dir_all(&work).unwrap();
    let cfg = write_config(&conf_dir, &format!("{SMALL}snapshots = true\nout = results\n"));
    let out = kgan(&work, &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(listing(root.path()), ["conf", "work"]);
    assert_eq!(listing(&conf_dir), ["run.conf"]);
    assert_eq!(listing(&work), ["results"]);
    let produced = listing(&work.join("results"));
    for name in [CHECKPOINT_FILE, METRICS_FILE, SAMPLES_FILE, "snapshot_0000030.svg"] {
        assert!(produced.iter().any(|p| p == name), "{name} missing from {produced:?}");
    }
}

#[test]
fn zero_iterations_write_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), &SMALL.replace("iterations = 30", "iterations = 0"));
    let out = kgan(dir.path(), &["train", "--config", cfg_path.to_str().unwrap(), "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("o").join(METRICS_FILE)).unwrap();
    assert_eq!(metrics, format!("{METRICS_HEADER}\n"));
    let saved = Checkpoint::load(&dir.path().join("o").join(CHECKPOINT_FILE)).unwrap();
    let init = prepare(&parse_config(&cfg_path).unwrap()).unwrap().generator;
    assert_eq!(saved.generator.sizes(), init.sizes());
    assert_eq!(saved.generator.to_flat(), init.to_flat());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    assert_eq!(code(&kgan(p, &["verify-pairs"])), 0);
    assert_eq!(code(&kgan(p, &["kernel-test"])), 0);
    assert_eq!(code(&kgan(p, &["duality-gap", "--loss", "hinge"])), 0);
    assert_eq!(code(&kgan(p, &["duality-gap", "--budget", "1"])), 1);
    assert_eq!(code(&kgan(p, &["verify-pairs", "--tol", "0"])), 1);
    assert_eq!(code(&kgan(p, &["train"])), 2);
    assert_eq!(code(&kgan(p, &["duality-gap", "--loss", "zero-one"])), 2);

    let bad = write_config(p, "[model]\nloss = logistic\n\n[train]\nfoo = 1\n");
    let out = kgan(p, &["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));

    let wild = write_config(
        p,
        "[model]\nloss = exponential\nlambda = 0.001\nfeatures = 8\n[train]\niterations = 200\ndual_step = 1000\ngenerator_step = 1000\n",
    );
    let out = kgan(p, &["train", "--config", wild.to_str().unwrap(), "--out", "wild"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let partial = std::fs::read_to_string(p.join("wild").join(METRICS_FILE)).unwrap();
    assert!(partial.starts_with(METRICS_HEADER));
}

#[test]
fn report_rows_and_tampered_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgan(dir.path(), &["report", "--out", "r"]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("r").join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * 4 + 2);
    assert!(rows.iter().all(|r| r.ends_with(",true")));

    let out = kgan(dir.path(), &["report", "--out", "r", "--tol", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bundled_config_runs_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = kgan(
        dir.path(),
        &["train", "--config", bundled_config().to_str().unwrap(), "--out", "two_modes"],
    );
    let elapsed = start.elapsed();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed < SMOKE_BUDGET, "took {elapsed:?}");
    let snapshots = listing(&dir.path().join("two_modes"))
        .into_iter()
        .filter(|n| n.ends_with(".svg"))
        .count();
    assert_eq!(snapshots, 20);
}
