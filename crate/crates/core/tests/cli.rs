use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use deepfea_core::config::{Profile, RunConfig};

fn deepfea(args: &[&str], out: &Path, config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfea"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--config")
        .arg(config)
        .env("DEEPFEA_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Desk grid with very short simulations and a tiny network.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.sim.steps = 10;
    cfg.model.hidden = vec![2];
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.timing_sims = 3;
    let path = dir.join("quick.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn full_command_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("run");

    ok(&deepfea(&["gen"], &out, &cfg));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("dataset/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sims"].as_array().unwrap().len(), 96);

    // untrained network: report exists and has no displacement skill
    ok(&deepfea(
        &["eval", "--untrained", "--no-timing"],
        &out,
        &cfg,
    ));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for name in ["d_x", "d_y", "R_d"] {
        let line = csv
            .lines()
            .find(|l| l.starts_with(&format!("{name},")))
            .unwrap();
        let r2: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(r2 <= 0.0, "{line}");
    }

    ok(&deepfea(&["train"], &out, &cfg));
    for f in [
        "model/model.json",
        "model/model.bin",
        "history.csv",
        "metrics.csv",
        "metrics.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(out.join("history.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    ok(&deepfea(&["eval"], &out, &cfg));
    let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
    assert!(timing.starts_with("sims,surrogate_mean_s,oracle_mean_s,speedup\n3,"));

    ok(&deepfea(
        &[
            "predict",
            "--node",
            "76",
            "--angle",
            "45",
            "--magnitude",
            "1e6",
        ],
        &out,
        &cfg,
    ));
    assert!(out.join("prediction/manifest.json").exists());
    assert!(out.join("prediction/averages.csv").exists());

    ok(&deepfea(
        &[
            "plot",
            "--sim",
            "5",
            "--model",
            out.join("model").to_str().unwrap(),
        ],
        &out,
        &cfg,
    ));
    for f in [
        "sim_0005.csv",
        "sim_0005_predicted.csv",
        "sim_0005_stress.svg",
        "sim_0005_stress_0010.svg",
    ] {
        assert!(out.join("plot").join(f).exists(), "{f}");
    }
}

#[test]
fn oracle_average_stress_rises_under_the_ramp() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&deepfea(&["gen"], &out, &cfg));
    for sim in ["0", "40", "95"] {
        ok(&deepfea(&["plot", "--sim", sim], &out, &cfg));
        let csv = fs::read_to_string(
            out.join(format!("plot/sim_{:04}.csv", sim.parse::<usize>().unwrap())),
        )
        .unwrap();
        let stress: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        let peak = stress.iter().cloned().fold(0.0, f64::max);
        // damped oscillation about the quasi-static path may dip slightly
        for w in stress.windows(2) {
            assert!(w[1] >= w[0] - 0.02 * peak, "sim {sim}: {stress:?}");
        }
        assert!(stress.last().unwrap() > &(0.5 * peak));
    }
}

#[test]
fn failures_print_one_json_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(
        &bad,
        RunConfig::profile(Profile::Desk).to_toml() + "\nunknown_key = 3\n",
    )
    .unwrap();
    let o = deepfea(&["gen"], &tmp.path().join("o"), &bad);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(line["error"], "config");

    let o = deepfea(
        &["train"],
        &tmp.path().join("o"),
        &tmp.path().join("missing.toml"),
    );
    assert!(!o.status.success());
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
    assert_eq!(line["error"], "io");
}
