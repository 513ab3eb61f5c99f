use std::path::{Path, PathBuf};
use std::process::Command;

use spinmqc_cli::RunConfig;
use spinmqc_cli::sweep::expand;

fn mqc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mqc"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
experiment = "mqc"
seed = 4

[mqc]
n_spins = 6
truncation = "nnn"
initial = "end_polarized"
times = { start_inv_b = 0.0, stop_inv_b = 2.0, count = 5 }
backend = { kind = "typicality", realizations = 2 }
"#;

#[test]
fn example_configs_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if text.contains("[sweep]") {
            assert!(!expand(&text).unwrap().1.is_empty(), "{}", path.display());
        } else {
            RunConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn run_writes_outputs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let st = mqc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("mqc.csv")).unwrap();
    assert!(csv.starts_with("time,J0,J1,"));
    assert_eq!(csv.lines().count(), 6);
    let again = tmp.path().join("again");
    let st = mqc()
        .args(["run", "--replay"])
        .arg(out.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(
        std::fs::read(out.join("mqc.csv")).unwrap(),
        std::fs::read(again.join("mqc.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_typicality_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let st = mqc()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed-override", seed])
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        std::fs::read(out.join("mqc.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        &SMALL.replace("n_spins = 6", "n_spins = 6\nspin_count = 3"),
    );
    let out = tmp.path().join("out");
    let o = mqc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mqc.spin_count"));
    assert!(!out.exists());
    let syntax = write(tmp.path(), "syntax.toml", "experiment = ");
    let st = mqc()
        .args(["run", "--config"])
        .arg(&syntax)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn runtime_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "fit"

[fit]
data_csv = "DATA"
n_spins = 6
initial = "thermal"
inv_b_guess_us = 1.0
"#;
    let cfg = write(
        tmp.path(),
        "fit.toml",
        &text.replace("DATA", "/nonexistent/j0.csv"),
    );
    let st = mqc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .status()
        .unwrap();
    assert_ne!(st.code(), Some(0));
    let blocked = write(tmp.path(), "plain.toml", SMALL);
    let file = write(tmp.path(), "occupied", "");
    let st = mqc()
        .args(["run", "--config"])
        .arg(&blocked)
        .arg("--out")
        .arg(file.join("sub"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn sweep_writes_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        r#"
experiment = "analytic"

[analytic]
n_spins = 5
initial = "thermal"
times = { values_inv_b = [0.0, 1.0] }

[sweep]
grid = { "analytic.n_spins" = [5, 7], "analytic.initial" = ["thermal", "end_polarized"] }
"#,
    );
    let out = tmp.path().join("sweep");
    let st = mqc()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(
        lines[0],
        "point,analytic.initial,analytic.n_spins,status,dir"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.contains(",ok,point_")));
    assert!(out.join("point_0003/analytic.csv").exists());

    let empty = write(
        tmp.path(),
        "empty.toml",
        "experiment = \"analytic\"\n[sweep]\ngrid = {}\n",
    );
    let st = mqc()
        .args(["sweep", "--config"])
        .arg(&empty)
        .arg("--out")
        .arg(tmp.path().join("e"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn fit_recovers_time_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let (t0, inv_b) = (3.0, 40.0);
    let mut data = String::from("time_us,J0\n");
    for i in 0..60 {
        let t_us = t0 + i as f64 * 4.0;
        let j0 = spinmqc::analytic::j_thermal_nn(12, (t_us - t0) / inv_b).0;
        data.push_str(&format!("{t_us},{j0}\n"));
    }
    let csv = write(tmp.path(), "j0.csv", &data);
    let out = tmp.path().join("fit");
    let st = mqc()
        .args(["fit", "--data"])
        .arg(&csv)
        .args([
            "--n-spins",
            "12",
            "--initial",
            "thermal",
            "--inv-b-guess",
            "35",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(out.join("fit.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(
        (row[0] - t0).abs() < 1e-3 && (row[1] - inv_b).abs() < 1e-3,
        "{row:?}"
    );
}
