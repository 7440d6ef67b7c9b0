//! End-to-end exercises of the `pdelab` binary: run, sweep, and landscape
//! on a miniature configuration, checking the emitted files.

use std::fs;
use std::process::Command;

fn pdelab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdelab"))
}

const TINY: &str = r#"
problem = "ex1:k=1"

[network]
width = 6
depth = 2

[sampler]
n_g = 8

[loss]
formulation = "pinn"
w_b = 10.0

[optimizer]
epochs = 120

[run]
seeds = [0, 1]
indicator_period = 20
test_grid = 15
"#;

#[test]
fn run_sweep_and_landscape_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cfg.toml");
    fs::write(&config_path, TINY).unwrap();
    let out = dir.path().join("out");

    let status = pdelab()
        .args(["run", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for name in [
        "report.csv",
        "checkpoint_0.bin",
        "checkpoint_1.bin",
        "field_0.svg",
        "field_1.svg",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("cell-id,mean_rel_l2,std_rel_l2,n_converged,wall_mean_s"));
    assert_eq!(report.lines().count(), 2);

    // seed override limits the artifacts
    let out2 = dir.path().join("out2");
    let status = pdelab()
        .args(["run", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out2)
        .args(["--seeds", "3", "--epochs", "40"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out2.join("checkpoint_3.bin").exists());
    assert!(!out2.join("checkpoint_0.bin").exists());

    let sweep_out = dir.path().join("sweep");
    let status = pdelab()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&sweep_out)
        .args(["--axis", "wB=1,10,100", "--epochs", "30"])
        .status()
        .unwrap();
    assert!(status.success());
    let report = fs::read_to_string(sweep_out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4, "three cells plus header");
    assert!(report.contains("wB=1,"));

    let ls_out = dir.path().join("ls");
    let status = pdelab()
        .args(["landscape", "--config"])
        .arg(&config_path)
        .args(["--checkpoint"])
        .arg(out.join("checkpoint_0.bin"))
        .arg("--out")
        .arg(&ls_out)
        .args(["--grid", "5", "--range", "0.5"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(ls_out.join("landscape.csv")).unwrap();
    assert!(csv.starts_with("alpha,beta,loss,rel_l2"));
    assert_eq!(csv.lines().count(), 26, "5x5 grid plus header");
    assert!(ls_out.join("landscape.svg").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cfg.toml");
    fs::write(&config_path, "problem = \"who-knows\"").unwrap();
    let status = pdelab()
        .args(["run", "--config"])
        .arg(&config_path)
        .status()
        .unwrap();
    assert!(!status.success());

    fs::write(&config_path, TINY).unwrap();
    let status = pdelab()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .args(["--axis", "bogus=1,2"])
        .status()
        .unwrap();
    assert!(!status.success());
}
