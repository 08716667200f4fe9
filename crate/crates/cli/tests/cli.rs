use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mstk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mstk"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mstk(dir, args);
    assert!(
        out.status.success(),
        "mstk {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn corpus(dir: &Path) {
    ok(dir, &["synth", "--count", "12", "--seed", "5", "--out", "c.sdf"]);
}

fn toy_train(dir: &Path, seed: &str, out: &str) {
    ok(
        dir,
        &[
            "train", "c.sdf", "--k", "2", "--epochs", "1", "--batch-size", "32", "--seed", seed,
            "--out", out, "--report", "/dev/null",
        ],
    );
}

#[test]
fn toy_training_then_token_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpus(dir);
    toy_train(dir, "1", "m.bin");
    ok(dir, &["encode", "c.sdf", "--codebook", "m.bin", "--cond", "-1.34", "--out", "t.txt"]);
    let tokens = fs::read_to_string(dir.join("t.txt")).unwrap();
    assert_eq!(tokens.lines().count(), 12);
    assert!(tokens.lines().all(|l| l.starts_with("cond=-1.34 ")));

    ok(dir, &["decode", "t.txt", "--codebook", "m.bin", "--out", "d.sdf"]);
    let sdf = fs::read_to_string(dir.join("d.sdf")).unwrap();
    assert_eq!(sdf.matches("$$$$").count(), 12);

    // a two-code model places atoms badly, but the graph survives
    let counts = |text: &str| -> Vec<String> {
        text.split("$$$$\n")
            .filter(|b| !b.trim().is_empty())
            .map(|b| b.lines().nth(3).unwrap()[..6].to_string())
            .collect()
    };
    let input = fs::read_to_string(dir.join("c.sdf")).unwrap();
    assert_eq!(counts(&input), counts(&sdf));
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpus(dir);
    toy_train(dir, "7", "a.bin");
    toy_train(dir, "7", "b.bin");
    assert_eq!(fs::read(dir.join("a.bin")).unwrap(), fs::read(dir.join("b.bin")).unwrap());

    ok(dir, &["synth", "--count", "12", "--seed", "5", "--out", "c2.sdf"]);
    assert_eq!(fs::read(dir.join("c.sdf")).unwrap(), fs::read(dir.join("c2.sdf")).unwrap());

    toy_train(dir, "8", "c.bin");
    assert_ne!(fs::read(dir.join("a.bin")).unwrap(), fs::read(dir.join("c.bin")).unwrap());
}

#[test]
fn split_files_must_come_from_one_run() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    corpus(dir);
    for (seed, p, c) in [("1", "p1.bin", "c1.bin"), ("2", "p2.bin", "c2.bin")] {
        ok(
            dir,
            &[
                "train", "c.sdf", "--k", "2", "--epochs", "1", "--seed", seed, "--out", "m.bin",
                "--params-out", p, "--codebook-out", c, "--report", "/dev/null",
            ],
        );
    }
    ok(dir, &["inspect", "--codebook", "c1.bin", "--params", "p1.bin", "--out", "x.json"]);
    let out = mstk(dir, &["inspect", "--codebook", "c2.bin", "--params", "p1.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tag"));
}

#[test]
fn strict_turns_bad_inputs_into_failure() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let inputs = dir.join("in");
    fs::create_dir(&inputs).unwrap();
    fs::write(
        inputs.join("a.xyz"),
        "3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n",
    )
    .unwrap();
    fs::write(inputs.join("b.xyz"), "2\nbroken\nO 0 0\n").unwrap();

    let out = ok(dir, &["roundtrip", "in", "--report", "r.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("b.xyz"));
    let report = fs::read_to_string(dir.join("r.json")).unwrap();
    assert!(report.contains("\"molecules\": 1"));

    let out = mstk(dir, &["roundtrip", "in", "--strict"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn empty_roundtrip_is_not_an_error() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["roundtrip"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["results"]["molecules"], 0);
    assert_eq!(report["command"], "roundtrip");
}
