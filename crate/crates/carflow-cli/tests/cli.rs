//! End-to-end checks of the command-line surface: exit codes, file layout,
//! determinism, and the documented scenario grammar.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::Digest;

fn carflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carflow"))
        .args(args)
        .env("CARFLOW_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn micro_default_run_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = carflow(&[
        "micro",
        "--out",
        dir.path().to_str().unwrap(),
        "--model",
        "gipps",
        "--window",
        "60",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let count: usize = read(dir.path(), "throughput.txt").trim().parse().unwrap();
    assert_eq!(count, 26);

    let detector = read(dir.path(), "detector.csv");
    assert!(detector.starts_with("detector_position,vehicle,time,speed,accel,gap,flow_vph\n"));
    // Every crossing is a row; at least the counted ones are present.
    assert!(detector.lines().count() > count);

    let trajectories = read(dir.path(), "trajectories.csv");
    assert!(trajectories.starts_with("time,vehicle,x,v,a\n"));

    // Manifest lists every file with its actual digest.
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "micro");
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 3);
    for entry in files {
        let name = entry["name"].as_str().unwrap();
        let content = read(dir.path(), name);
        let digest = hex::encode(sha2::Sha256::digest(content.as_bytes()));
        assert_eq!(entry["sha256"].as_str().unwrap(), digest, "{name}");
    }
}

#[test]
fn missing_scenario_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = carflow(&[
        "micro",
        "--scenario",
        "/no/such/scenario.toml",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/scenario.toml"));
}

#[test]
fn invalid_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    fs::write(&scenario, "[queue]\npenetration = 1.3\n").unwrap();
    let out = carflow(&[
        "micro",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("penetration"));
}

#[test]
fn collision_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("crash.toml");
    fs::write(
        &scenario,
        "model = \"helly\"\n[queue]\npenetration = 1.0\ntech = \"acc\"\n\n[[signals]]\nposition = 0.0\nswitches = [[0.0, \"green\"]]\n\n[[signals]]\nposition = 300.0\n",
    )
    .unwrap();
    let out = carflow(&[
        "micro",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collision"));
}

#[test]
fn macro_cfl_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("unstable.toml");
    fs::write(&scenario, "dt = 0.5\n").unwrap();
    let out = carflow(&[
        "macro",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("exceeds"), "{stderr}");
}

#[test]
fn macro_grid_dimensions_and_conservation_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = carflow(&[
        "macro",
        "--out",
        dir.path().to_str().unwrap(),
        "--stride",
        "20",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("relative error"), "{stdout}");

    for name in ["flow_contour.csv", "speed_contour.csv"] {
        let text = read(dir.path(), name);
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 241); // time + 240 links
        assert_eq!(lines.count(), 60); // 60 s at 1 s sampling
    }
}

#[test]
fn sweep_outputs_are_deterministic_and_report_failures() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = carflow(&[
            "sweep",
            "--out",
            dir.path().to_str().unwrap(),
            "--runs",
            "3",
            "--penetrations",
            "0,0.5,1",
            "--seed",
            "42",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in [
        "sweep_runs.csv",
        "sweep_medians.csv",
        "equilibrium_curves.csv",
    ] {
        assert_eq!(
            read(dir_a.path(), name),
            read(dir_b.path(), name),
            "{name} differs"
        );
    }

    // Pure-fleet medians equal their single run, and every row carries its
    // equilibrium-curve point for overlay plotting.
    let medians = read(dir_a.path(), "sweep_medians.csv");
    assert!(medians.starts_with(
        "experiment,model,tech,penetration,runs,failures,median,equilibrium_veh_per_min\n"
    ));
    for line in medians.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let (penetration, runs) = (fields[3], fields[4]);
        if penetration == "0" || penetration == "1" {
            assert_eq!(runs, "1", "{line}");
        }
        let equilibrium: f64 = fields[7].parse().unwrap();
        assert!((24.0 - 1e-9..=50.0 + 1e-9).contains(&equilibrium), "{line}");
    }
    // A pure-ordinary row pins the uncapped endpoint exactly.
    assert!(medians
        .lines()
        .any(|l| l.starts_with("free_road,gipps,acc,0,") && l.ends_with(",24")));

    // The equilibrium table pins the link-capped pure-CACC flow.
    let curves = read(dir_a.path(), "equilibrium_curves.csv");
    let cacc_row = curves
        .lines()
        .find(|l| l.starts_with("cacc,1,"))
        .expect("pure-CACC row present");
    assert!(cacc_row.ends_with(",37.5"), "{cacc_row}");
}

#[test]
fn platoon_command_writes_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = carflow(&[
        "platoon",
        "--out",
        dir.path().to_str().unwrap(),
        "--penetration",
        "1",
        "--tech",
        "cacc",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let events = read(dir.path(), "platoon_events.csv");
    assert!(events.starts_with("time,event,vehicle,leader\n"));
    assert!(events.contains("join"), "no joins logged:\n{events}");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "platoon");
}

#[test]
fn micro_runs_are_byte_identical_for_same_seed() {
    let run_once = |dir: &Path| {
        let out = carflow(&[
            "micro",
            "--out",
            dir.to_str().unwrap(),
            "--penetration",
            "0.5",
            "--tech",
            "cacc",
            "--seed",
            "77",
            "--stride",
            "10",
        ]);
        assert!(out.status.success());
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_once(dir_a.path());
    run_once(dir_b.path());
    for name in ["trajectories.csv", "detector.csv", "throughput.txt"] {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // Manifests differ only in the output path; the checksums must agree.
    let manifest = |dir: &Path| -> serde_json::Value {
        serde_json::from_str(&read(dir, "manifest.json")).unwrap()
    };
    assert_eq!(
        manifest(dir_a.path())["files"],
        manifest(dir_b.path())["files"]
    );
}
