use std::path::Path;
use std::process::{Command, Output};

fn navsfm(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navsfm"))
        .current_dir(cwd)
        .env_remove("NAVSFM_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "seed = 3\n[partition]\ntarget_cluster_size = 20\n[simulation.survey]\ntrack_count = 2\ntrack_length = 47.5\ncross_track = false\n";

#[test]
fn simulate_reconstruct_resume_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_navsfm"))
        .current_dir(d)
        .env("NAVSFM_CONFIG", "small.toml")
        .args(["simulate", "--out", "ds"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["navigation.csv", "matches.bin", "camera.json", "ground_truth/truth.csv"] {
        assert!(d.join("ds").join(f).is_file(), "{f}");
    }

    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["--config", "small.toml", "reconstruct", "--data", "ds", "--out", out, "--truth", "--checkpoint-dir", "ck"];
        args.extend_from_slice(extra);
        navsfm(d, &args)
    };
    let first = run("run", &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("registered 40/40"));
    for f in ["metrics.json", "trajectory.svg", "connectivity.svg", "constraints.svg", "reconstruction/poses.txt"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    // Resuming with a different thread count reproduces the reconstruction.
    let again = run("resumed", &["--resume", "pgo", "--threads", "2"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    let poses = |r: &str| std::fs::read(d.join(r).join("reconstruction/poses.txt")).unwrap();
    assert_eq!(poses("run"), poses("resumed"));

    let plot = navsfm(d, &["plot", "--data", "ds", "--checkpoint-dir", "ck", "--out", "plots"]);
    assert!(plot.status.success(), "{}", String::from_utf8_lossy(&plot.stderr));
    assert!(d.join("plots/trajectory.svg").is_file());
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| navsfm(d, args).status.code();
    assert_eq!(code(&["reconstruct", "--data", "missing", "--out", "o"]), Some(3));
    assert_eq!(code(&["--set", "weak.muu=3", "reconstruct", "--data", "missing", "--out", "o"]), Some(2));
    assert_eq!(code(&["--set", "partition.target_cluster_size=3", "simulate", "--out", "o"]), Some(2));
    assert_eq!(code(&["plot", "--data", "missing", "--checkpoint-dir", "none", "--out", "o"]), Some(4));
}
