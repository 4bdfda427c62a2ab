//! End-to-end checks of the command-line surface and its file formats.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fpcw() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpcw"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fpcw_cli_{}_{}", name, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn fpcw");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
            "version": 1,
            "scene": { "extent": [64.0, 64.0, 16.0], "grid": [16, 16, 8], "expansion": 8 },
            "frames": 3,
            "n_objects": 2,
            "c_a": 8,
            "jscc_width": 40,
            "snr_db": 10.0,
            "seed": 11
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn gen_scene_then_mask_oracle() {
    let dir = tmp_dir("scene");
    let cfg = small_config(&dir);
    run_ok(fpcw()
        .args(["gen-scene", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    let scene = read(&dir.join("scene.txt"));
    let header: Vec<&str> = scene.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[1], "64"); // attribute channels
    assert_eq!(&header[2..], &["16", "16", "8"]);

    run_ok(fpcw()
        .args(["mask-oracle", "--config"])
        .arg(&cfg)
        .arg("--boxes")
        .arg(dir.join("boxes.txt"))
        .arg("--out")
        .arg(&dir));
    let mask = read(&dir.join("mask.txt"));
    let mask_header: Vec<&str> = mask.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(mask_header[1], "1"); // single mask channel
    assert!(mask_header[0].parse::<usize>().unwrap() > 0);
}

#[test]
fn e2e_outputs_are_deterministic() {
    let dir_a = tmp_dir("e2e_a");
    let dir_b = tmp_dir("e2e_b");
    let cfg = small_config(&dir_a);
    run_ok(fpcw()
        .args(["e2e", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir_a));
    run_ok(fpcw()
        .args(["e2e", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir_b));
    assert_eq!(read(&dir_a.join("frames.csv")), read(&dir_b.join("frames.csv")));
    assert_eq!(
        read(&dir_a.join("aggregate.json")),
        read(&dir_b.join("aggregate.json"))
    );
    // three frames plus header
    assert_eq!(read(&dir_a.join("frames.csv")).lines().count(), 4);
}

#[test]
fn encode_decode_round_trip_files() {
    let dir = tmp_dir("codec");
    let cfg = small_config(&dir);
    run_ok(fpcw()
        .args(["gen-scene", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    let out = run_ok(fpcw()
        .args(["encode", "--config"])
        .arg(&cfg)
        .arg("--input")
        .arg(dir.join("scene.txt"))
        .arg("--out")
        .arg(&dir));
    assert!(out.contains("CR"));
    assert!(dir.join("compact.txt").exists());
    assert!(dir.join("geometry.bin").exists());
    assert!(dir.join("frame.bin").exists());

    let compact = read(&dir.join("compact.txt"));
    let header: Vec<&str> = compact.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[1], "8"); // compacted channel count

    run_ok(fpcw()
        .args(["decode", "--config"])
        .arg(&cfg)
        .arg("--input")
        .arg(dir.join("compact.txt"))
        .arg("--out")
        .arg(&dir));
    let restored = read(&dir.join("f4hat.txt"));
    let rest_header: Vec<&str> = restored.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(rest_header[0], header[0]); // voxel count preserved
    assert_eq!(rest_header[1], "64"); // expanded back to full width
}

#[test]
fn ber_sweep_emits_stable_csv() {
    let dir = tmp_dir("ber");
    run_ok(fpcw()
        .args(["ber-sweep", "--snr-list", "2,6", "--trials", "30", "--seed", "3"])
        .arg("--out")
        .arg(&dir));
    let csv = read(&dir.join("ber.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "snr_db,uncoded_ber,coded_ber,frame_error_rate,mean_iterations");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,"));
    assert!(lines[2].starts_with("6,"));
}

#[test]
fn no_ldpc_flag_reaches_the_report() {
    let dir = tmp_dir("noldpc");
    let cfg = small_config(&dir);
    run_ok(fpcw()
        .args(["e2e", "--no-ldpc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    let aggregate = read(&dir.join("aggregate.json"));
    assert!(aggregate.contains("\"ldpc_enabled\": false"));
}
