use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adaptmh"));
    cmd.env_remove("ADAPTMH_OUT").env("RUST_LOG", "warn");
    cmd
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const MHCMA: &str = r#"
[run]
adapter = "mhcma"
dim = 2
n_steps = 3000
n_seeds = 3
base_seed = 11
burn_in = 300

[target]
kind = "gaussian"
cov = [[1.0, 0.5], [0.5, 2.0]]

[diagnostics]
envelope_window = 1000
decay_start = 100
decay_window = 100
"#;

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn one_step_fixed_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[run]\nadapter = \"fixed\"\ndim = 3\nn_steps = 1\n\n[target]\nkind = \"gaussian\"\n",
    );
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.code().is_some(), "{out:?}");
    let trace = fs::read_to_string(out_dir.join("trace_seed_0.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "t,x_0,x_1,x_2,alpha,accepted,sigma,log_det_C,adaptation_gap,tau"
    );
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MHCMA);
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(status.code().is_some());
        manifests.push(fs::read(out.join("manifest.json")).unwrap());
        for seed in 11..14 {
            assert!(out.join(format!("trace_seed_{seed}.csv")).exists());
        }
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(
        fs::read(dir.path().join("a/trace_seed_12.csv")).unwrap(),
        fs::read(dir.path().join("b/trace_seed_12.csv")).unwrap()
    );
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MHCMA);
    let target = dir.path().join("from-env");
    bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .env("ADAPTMH_OUT", &target)
        .output()
        .unwrap();
    assert!(target.join("report.json").exists());
    assert!(target.join("envelopes.csv").exists());
}

#[test]
fn report_rebuilds_the_same_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MHCMA);
    let out = dir.path().join("run");
    bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let first = fs::read(out.join("report.json")).unwrap();
    let rep = bin()
        .args(["report", "--trace-dir"])
        .arg(&out)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(rep.status.code().is_some());
    assert!(stdout(&rep).contains("adaptation_decay"));
    assert_eq!(fs::read(out.join("report.json")).unwrap(), first);
}

#[test]
fn verify_exit_codes() {
    let ok = bin()
        .args([
            "verify", "--suite", "lemma9", "--cases", "50", "--seed", "3",
        ])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).starts_with("PASS lemma9"));

    let spd = bin()
        .args(["verify", "--suite", "spd", "--cases", "20", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(spd.status.code(), Some(0));
    assert!(stdout(&spd).contains("PASS spd.asymmetric_fixture_rejected"));

    let bad = bin()
        .args(["verify", "--suite", "nope", "--cases", "5", "--seed", "1"])
        .output()
        .unwrap();
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &MHCMA.replace("burn_in = 300", "burn_in = 300\nx0 = [1.0]"),
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("never"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.x0"));
    assert!(!dir.path().join("never").exists());
}
