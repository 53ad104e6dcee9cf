mod common;

use std::path::Path;
use std::process::{Command, Output};

fn ragcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragcn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, seed: &str, eval: bool) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "gen-data",
        "--per-class",
        "4",
        "--frames",
        "16",
        "--seed",
        seed,
        "--out",
        p(&out),
    ];
    if eval {
        args.push("--eval");
    }
    let r = ragcn(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

const SMALL: [&str; 6] = [
    "--epochs",
    "1",
    "--width-divisor",
    "16",
    "--batch-size",
    "4",
];

#[test]
fn end_to_end_on_a_tiny_synthetic_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = gen(d, "train.bin", "1", false);
    let again = gen(d, "again.bin", "1", false);
    assert_eq!(
        std::fs::read(&train).unwrap(),
        std::fs::read(&again).unwrap()
    );
    let test = gen(d, "test.bin", "2", true);

    let base = d.join("base.ckpt");
    let mut args = vec![
        "pretrain",
        "--seed",
        "0",
        "--data",
        p(&train),
        "--out",
        p(&base),
    ];
    args.extend(SMALL);
    let r = ragcn(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(d.join("base.csv").exists() && d.join("base.manifest.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("base.manifest.json")).unwrap())
            .unwrap();
    let hash = ragcn::harness::dataset_sha256(&std::fs::read(&train).unwrap());
    assert_eq!(manifest["datasets"][0][1], serde_json::Value::String(hash));

    let three = d.join("three.ckpt");
    let mut args = vec![
        "finetune",
        "--seed",
        "0",
        "--data",
        p(&train),
        "--pretrained",
        p(&base),
        "--streams",
        "3",
        "--out",
        p(&three),
    ];
    args.extend(SMALL);
    assert_eq!(code(&ragcn(&args)), 0);

    let r = ragcn(&[
        "eval",
        "--ckpt",
        p(&three),
        "--data",
        p(&test),
        "--degrade",
        r#"{"kind":"random","p":0.4,"seed":3}"#,
    ]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("top-1"));

    let dump = d.join("act.json");
    assert_eq!(
        code(&ragcn(&[
            "dump-activations",
            "--ckpt",
            p(&three),
            "--data",
            p(&test),
            "--out",
            p(&dump)
        ])),
        0
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(json.as_array().map(Vec::len), Some(16));

    let degraded = d.join("occluded.bin");
    let r = ragcn(&[
        "degrade",
        "--spec",
        r#"{"kind":"part","part":2}"#,
        "--in",
        p(&test),
        "--out",
        p(&degraded),
    ]);
    assert_eq!(code(&r), 0);

    let prefix = d.join("random");
    let r = ragcn(&[
        "sweep",
        "--ckpt",
        &format!("1s={}", p(&base)),
        "--ckpt",
        p(&three),
        "--data",
        p(&test),
        "--protocol",
        "random",
        "--out",
        p(&prefix),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(d.join("random.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        rows,
        ["Random Occlusion", "1s", "3s", "difference"],
        "{csv}"
    );
}

#[test]
fn parse_ntu_reads_the_fixture_directory() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "S001C001P001R001A001.skeleton",
        "S002C003P008R002A050.skeleton",
    ] {
        std::fs::copy(common::fixture(name), dir.path().join(name)).unwrap();
    }
    let out = dir.path().join("ntu.bin");
    let r = ragcn(&[
        "parse-ntu",
        "--in",
        p(dir.path()),
        "--split",
        "cs",
        "--out",
        p(&out),
        "--max-frames",
        "8",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.exists());
}

#[test]
fn dataset_hash_matches_git_object_ids() {
    // `git hash-object` in a SHA-256 repository.
    assert_eq!(
        ragcn::harness::dataset_sha256(b""),
        "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
    );
    assert_eq!(
        ragcn::harness::dataset_sha256(b"hello world\n"),
        "0bd69098bd9b9cc5934a610ab65da429b525361147faa7b5b922919e9a23143d"
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = gen(d, "train.bin", "1", false);
    let out = d.join("x.ckpt");
    // --seed is mandatory for training verbs.
    assert_eq!(
        code(&ragcn(&["pretrain", "--data", p(&train), "--out", p(&out)])),
        2
    );
    assert_eq!(
        code(&ragcn(&[
            "pretrain",
            "--seed",
            "0",
            "--data",
            p(&train),
            "--out",
            p(&out),
            "--delta",
            "1.5"
        ])),
        2
    );
    assert_eq!(
        code(&ragcn(&[
            "degrade",
            "--spec",
            r#"{"kind":"part","part":9}"#,
            "--in",
            p(&train),
            "--out",
            p(&out)
        ])),
        2
    );
    assert_eq!(
        code(&ragcn(&[
            "sweep",
            "--ckpt",
            p(&out),
            "--data",
            p(&train),
            "--protocol",
            "bogus",
            "--out",
            p(&out)
        ])),
        2
    );

    // Degraded training data is refused before anything is loaded.
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"degradation": {"kind": "random", "p": 0.2, "seed": 0}}"#,
    )
    .unwrap();
    let r = ragcn(&[
        "pretrain",
        "--seed",
        "0",
        "--config",
        p(&cfg),
        "--data",
        p(&train),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nothing.bin");
    let out = d.join("x.ckpt");
    assert_eq!(
        code(&ragcn(&[
            "pretrain",
            "--seed",
            "0",
            "--data",
            p(&missing),
            "--out",
            p(&out)
        ])),
        3
    );
    let junk = d.join("junk.bin");
    std::fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(
        code(&ragcn(&[
            "degrade",
            "--spec",
            r#"{"kind":"random","p":0.5}"#,
            "--in",
            p(&junk),
            "--out",
            p(&out)
        ])),
        3
    );
}

#[test]
fn diverging_training_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.bin", "1", false);
    let out = dir.path().join("x.ckpt");
    let mut args = vec![
        "pretrain",
        "--seed",
        "0",
        "--data",
        p(&train),
        "--out",
        p(&out),
        "--lr",
        "1e30",
    ];
    args.extend([
        "--epochs",
        "3",
        "--width-divisor",
        "16",
        "--batch-size",
        "4",
    ]);
    let r = ragcn(&args);
    assert_eq!(code(&r), 4, "{}", String::from_utf8_lossy(&r.stderr));
}
