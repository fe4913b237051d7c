//! End-to-end tests of the command-line binary: the simulate -> slam ->
//! export pipeline, ingest error reporting and heatmap output.

use std::process::Command;

use magslam::io;

fn magslam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_magslam"))
}

#[test]
fn simulate_slam_heatmap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");

    let out = magslam()
        .args(["simulate", "--seed", "1", "--loops", "1", "--width", "5", "--depth", "4"])
        .arg("--out-dir")
        .arg(&sim_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate failed: {out:?}");

    // sim-written logs re-ingest to bit-equal serializations
    let inc_text = std::fs::read_to_string(sim_dir.join("increments.csv")).unwrap();
    let incs = io::increments_from_csv(&inc_text).unwrap();
    assert!(!incs.is_empty());
    assert_eq!(io::increments_to_csv(&incs), inc_text);
    let truth_text = std::fs::read_to_string(sim_dir.join("truth.csv")).unwrap();
    let truth = io::truth_from_csv(&truth_text).unwrap();
    assert_eq!(truth.len(), incs.len() + 1);

    let traj_path = dir.path().join("traj.csv");
    let mag_path = dir.path().join("mag.json");
    let out = magslam()
        .args(["slam", "--seed", "1", "--num-particles", "20"])
        .arg("--input")
        .arg(sim_dir.join("increments.csv"))
        .arg("--output")
        .arg(&traj_path)
        .arg("--mag-map")
        .arg(&mag_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "slam failed: {out:?}");

    let records =
        io::trajectory_from_csv(&std::fs::read_to_string(&traj_path).unwrap()).unwrap();
    assert_eq!(records.len(), incs.len());

    // heatmap from the exported map parses and covers a regular grid
    let heat_path = dir.path().join("heat.csv");
    let out = magslam()
        .args(["export-heatmap", "--spacing", "1", "--extent", "4", "--z", "0"])
        .arg("--map")
        .arg(&mag_path)
        .arg("--output")
        .arg(&heat_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "export-heatmap failed: {out:?}");
    let heat = std::fs::read_to_string(&heat_path).unwrap();
    assert!(heat.starts_with("x,y,norm\n"));
    assert_eq!(heat.lines().count(), 1 + 9 * 9);
}

#[test]
fn pdr_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "t,fx,fy,fz,wx,wy,wz,mx,my,mz\n\
         0,0,0,9.81,0,0,0,0.3,0,-0.5\n\
         0.01,0,0,9.81,0,0,0,0.3,0\n",
    )
    .unwrap();
    let out = magslam()
        .arg("pdr")
        .arg("--input")
        .arg(&bad)
        .arg("--output")
        .arg(dir.path().join("out.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn bench_runs_reduced_config() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = magslam()
        .args([
            "bench",
            "--runs",
            "1",
            "--seed",
            "2",
            "--num-particles",
            "15",
            "--loops",
            "1",
            "--width",
            "4",
            "--depth",
            "3",
        ])
        .arg("--output")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "bench failed: {out:?}");
    let text = std::fs::read_to_string(&report_path).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["variants"].as_array().unwrap().len(), 4);
    assert_eq!(report["seeds"].as_array().unwrap().len(), 1);
}
