use std::path::Path;
use std::process::{Command, Output};

use cc_transfer::dataio::*;

fn cct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cct"))
        .args(args)
        .current_dir(dir)
        .env_remove("CT_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cct(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

const SUBCOMMANDS: &[&[&str]] = &[
    &["data", "pool"],
    &["data", "convert"],
    &["cluster", "fit"],
    &["cluster", "assign"],
    &["cluster", "nearest"],
    &["permset", "generate"],
    &["permset", "verify"],
    &["jigsaw", "gen"],
    &["hog", "vocab"],
    &["hog", "encode"],
    &["net", "train"],
    &["net", "eval"],
    &["net", "gradcheck"],
    &["transfer", "run"],
    &["transfer", "sweep-k"],
    &["transfer", "sweep-domain"],
    &["transfer", "synth-blobs"],
];

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for group in [
        "data", "cluster", "permset", "jigsaw", "hog", "net", "transfer",
    ] {
        ok(dir.path(), &[group, "--help"]);
    }
    for cmd in SUBCOMMANDS {
        let out = ok(dir.path(), &[cmd[0], cmd[1], "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("Usage:"), "{cmd:?}");
        assert!(text.contains("--threads"), "{cmd:?}");
    }
    let text =
        String::from_utf8(ok(dir.path(), &["permset", "generate", "--help"]).stdout).unwrap();
    assert!(text.contains("[default: 701]"));
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["permset", "generate", "--out", "p.txt"][..],
        &[
            "cluster",
            "fit",
            "--features",
            "f.fve",
            "--k",
            "2",
            "--out",
            "c.cbk",
        ],
        &["transfer", "synth-blobs", "--out-prefix", "b"],
        &["net", "gradcheck", "--spec", "s.json"],
    ] {
        let out = cct(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    }
}

#[test]
fn unknown_commands_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = cct(dir.path(), &["foo"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = cct(dir.path(), &["permset", "verify", "missing.txt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io: "), "{err}");

    std::fs::write(dir.path().join("bad.fve"), b"nope").unwrap();
    let out = cct(
        dir.path(),
        &[
            "cluster",
            "fit",
            "--features",
            "bad.fve",
            "--k",
            "2",
            "--seed",
            "1",
            "--out",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert!(!dir.path().join("c").exists());
}

#[test]
fn permutation_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "permset",
            "generate",
            "--tiles",
            "9",
            "--size",
            "701",
            "--min-hamming",
            "3",
            "--seed",
            "7",
            "--out",
            "p.txt",
        ],
    );
    let text = String::from_utf8(read(d, "p.txt")).unwrap();
    assert_eq!(text.lines().count(), 702);
    let out = ok(d, &["permset", "verify", "p.txt", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["min_hamming_observed"].as_u64().unwrap() >= 3);

    ok(
        d,
        &[
            "permset", "generate", "--size", "701", "--seed", "7", "--out", "q.txt",
        ],
    );
    assert_eq!(read(d, "p.txt"), read(d, "q.txt"));

    // declared minimum larger than the real one
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    let forged = format!(
        "{} {} 9 {}\n{}\n",
        header[0],
        header[1],
        header[3],
        lines[1..].join("\n")
    );
    std::fs::write(d.join("forged.txt"), forged).unwrap();
    let out = cct(d, &["permset", "verify", "forged.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: invalid_permutation: "));
}

#[test]
fn clustering_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "transfer",
            "synth-blobs",
            "--classes",
            "10",
            "--per-class",
            "20",
            "--seed",
            "3",
            "--out-prefix",
            "b",
        ],
    );
    ok(
        d,
        &[
            "cluster",
            "fit",
            "--features",
            "b.features.fve",
            "--k",
            "10",
            "--seed",
            "1",
            "--out",
            "cb.cbk",
        ],
    );
    ok(
        d,
        &[
            "cluster",
            "assign",
            "--features",
            "b.features.fve",
            "--codebook",
            "cb.cbk",
            "--out",
            "pl.lbl",
        ],
    );
    let labels = read_labels(d.join("pl.lbl")).unwrap();
    assert_eq!(labels.n_classes(), 10);
    assert_eq!(labels.len(), 200);

    let out = ok(
        d,
        &[
            "cluster",
            "nearest",
            "--features",
            "b.features.fve",
            "--codebook",
            "cb.cbk",
            "--cluster",
            "0",
        ],
    );
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 11);
    ok(
        d,
        &[
            "cluster",
            "nearest",
            "--features",
            "b.features.fve",
            "--codebook",
            "cb.cbk",
            "--cluster",
            "2",
            "--m",
            "3",
            "--out",
            "n.json",
        ],
    );
    let near: serde_json::Value = serde_json::from_slice(&read(d, "n.json")).unwrap();
    assert_eq!(near.as_array().unwrap().len(), 3);

    // same seed, different thread counts: identical codebooks
    let out = Command::new(env!("CARGO_BIN_EXE_cct"))
        .args([
            "cluster",
            "fit",
            "--features",
            "b.features.fve",
            "--k",
            "10",
            "--seed",
            "1",
            "--out",
            "cb2.cbk",
        ])
        .current_dir(d)
        .env("CT_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    ok(
        d,
        &[
            "--threads",
            "2",
            "cluster",
            "fit",
            "--features",
            "b.features.fve",
            "--k",
            "10",
            "--seed",
            "1",
            "--out",
            "cb3.cbk",
        ],
    );
    assert_eq!(read(d, "cb.cbk"), read(d, "cb2.cbk"));
    assert_eq!(read(d, "cb.cbk"), read(d, "cb3.cbk"));
}

#[test]
fn data_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data: Vec<f64> = (0..2 * 3 * 7 * 6)
        .map(|i| ((i * 37) % 101) as f64)
        .collect();
    let fm = FeatureMap::new(2, 3, 7, 6, data).unwrap();
    write_feature_map(&fm, d.join("maps.fmp")).unwrap();
    ok(
        d,
        &[
            "data",
            "pool",
            "--maps",
            "maps.fmp",
            "--out-h",
            "2",
            "--out-w",
            "3",
            "--out",
            "pooled.fve",
        ],
    );
    assert_eq!(
        read_features(d.join("pooled.fve")).unwrap(),
        adaptive_max_pool(&fm, 2, 3).unwrap()
    );

    ok(
        d,
        &[
            "data",
            "convert",
            "--input",
            "pooled.fve",
            "--output",
            "pooled.csv",
        ],
    );
    ok(
        d,
        &[
            "data",
            "convert",
            "--input",
            "pooled.csv",
            "--output",
            "back.fve",
        ],
    );
    assert_eq!(read(d, "pooled.fve"), read(d, "back.fve"));

    write_labels(
        &LabelVector::new(vec![0, 2, 1, 2], 5).unwrap(),
        d.join("l.lbl"),
    )
    .unwrap();
    ok(
        d,
        &["data", "convert", "--input", "l.lbl", "--output", "l.csv"],
    );
    ok(
        d,
        &[
            "data",
            "convert",
            "--input",
            "l.csv",
            "--output",
            "l2.lbl",
            "--n-classes",
            "5",
        ],
    );
    assert_eq!(read(d, "l.lbl"), read(d, "l2.lbl"));
}

fn write_images(dir: &Path) {
    std::fs::create_dir(dir.join("img")).unwrap();
    for i in 0..3usize {
        let (h, w) = (60 + 5 * i, 70);
        let px: Vec<u8> = (0..h * w * 3)
            .map(|j| ((j * (7 + i)) % 251) as u8)
            .collect();
        write_image_pnm(
            &RawImage::new(h, w, 3, px).unwrap(),
            dir.join(format!("img/{i}.ppm")),
        )
        .unwrap();
    }
    std::fs::write(dir.join("images.json"), r#"{"images_dir": "img"}"#).unwrap();
}

#[test]
fn jigsaw_and_hog_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_images(d);
    ok(
        d,
        &[
            "permset", "generate", "--size", "20", "--seed", "1", "--out", "p.txt",
        ],
    );
    let gen = |out: &str, threads: &str| {
        ok(
            d,
            &[
                "--threads",
                threads,
                "jigsaw",
                "gen",
                "--manifest",
                "images.json",
                "--permset",
                "p.txt",
                "--count",
                "12",
                "--seed",
                "5",
                "--out",
                out,
                "--crop",
                "36",
                "--tile",
                "9",
            ],
        );
    };
    gen("a.shard", "1");
    gen("b.shard", "4");
    assert_eq!(read(d, "a.shard"), read(d, "b.shard"));
    let shard = cc_transfer::jigsaw::read_shard(d.join("a.shard")).unwrap();
    assert_eq!(shard.samples.len(), 12);

    for (t, vocab, enc) in [("1", "v1.cbk", "e1.fve"), ("3", "v2.cbk", "e2.fve")] {
        ok(
            d,
            &[
                "--threads",
                t,
                "hog",
                "vocab",
                "--manifest",
                "images.json",
                "--k",
                "5",
                "--seed",
                "2",
                "--out",
                vocab,
            ],
        );
        ok(
            d,
            &[
                "--threads",
                t,
                "hog",
                "encode",
                "--manifest",
                "images.json",
                "--vocab",
                vocab,
                "--out",
                enc,
            ],
        );
    }
    assert_eq!(read(d, "v1.cbk"), read(d, "v2.cbk"));
    assert_eq!(read(d, "e1.fve"), read(d, "e2.fve"));
    let bow = read_features(d.join("e1.fve")).unwrap();
    assert_eq!((bow.n_samples(), bow.n_dims()), (3, 5));
}

#[test]
fn network_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "transfer",
            "synth-blobs",
            "--classes",
            "3",
            "--per-class",
            "20",
            "--dim",
            "4",
            "--seed",
            "1",
            "--out-prefix",
            "b",
        ],
    );
    std::fs::write(
        d.join("spec.json"),
        r#"{"input_dim": 4, "layers": [{"type": "dense", "out_dim": 8}, {"type": "relu"}, {"type": "dense", "out_dim": 3}],
            "head": {"type": "softmax_cross_entropy", "n_classes": 3}}"#,
    )
    .unwrap();
    std::fs::write(d.join("train.json"), r#"{"epochs": 20}"#).unwrap();
    for out in ["n1.npk", "n2.npk"] {
        ok(
            d,
            &[
                "net",
                "train",
                "--spec",
                "spec.json",
                "--config",
                "train.json",
                "--features",
                "b.features.fve",
                "--labels",
                "b.labels.lbl",
                "--seed",
                "4",
                "--out",
                out,
                "--history",
                "h.json",
            ],
        );
    }
    assert_eq!(read(d, "n1.npk"), read(d, "n2.npk"));
    let history: serde_json::Value = serde_json::from_slice(&read(d, "h.json")).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 20);
    let out = ok(
        d,
        &[
            "net",
            "eval",
            "--spec",
            "spec.json",
            "--params",
            "n1.npk",
            "--features",
            "b.features.fve",
            "--labels",
            "b.labels.lbl",
        ],
    );
    assert!(!out.stdout.is_empty());
    ok(
        d,
        &["net", "gradcheck", "--spec", "spec.json", "--seed", "3"],
    );
    let out = cct(
        d,
        &[
            "net",
            "gradcheck",
            "--spec",
            "spec.json",
            "--seed",
            "3",
            "--tol",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: check_failed: "));
}

#[test]
fn transfer_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "transfer",
            "synth-blobs",
            "--classes",
            "4",
            "--per-class",
            "25",
            "--dim",
            "6",
            "--seed",
            "1",
            "--out-prefix",
            "a",
        ],
    );
    ok(
        d,
        &[
            "transfer",
            "synth-blobs",
            "--classes",
            "4",
            "--per-class",
            "25",
            "--dim",
            "6",
            "--seed",
            "1",
            "--sample-seed",
            "9",
            "--out-prefix",
            "b",
        ],
    );
    std::fs::write(
        d.join("cfg.json"),
        r#"{"pretrain_features": "a.json", "k": 4, "mode": "cluster_transfer",
            "student": {"train": {"epochs": 5}}, "probe": {"train": {"epochs": 5}}}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "transfer", "run", "--config", "cfg.json", "--seed", "2", "--out", "r1.json",
        ],
    );
    ok(
        d,
        &[
            "--threads",
            "3",
            "transfer",
            "run",
            "--config",
            "cfg.json",
            "--seed",
            "2",
            "--out",
            "r2.json",
        ],
    );
    assert_eq!(read(d, "r1.json"), read(d, "r2.json"));
    let report: serde_json::Value = serde_json::from_slice(&read(d, "r1.json")).unwrap();
    assert_eq!(report["k"], 4);
    assert!(report.get("wall_times").is_none());

    let out = ok(
        d,
        &[
            "transfer", "sweep-k", "--config", "cfg.json", "--k-list", "2,4", "--seed", "2",
            "--out", "k.json", "--table", "k.txt",
        ],
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("#clusters"));
    assert_eq!(String::from_utf8(read(d, "k.txt")).unwrap(), table);
    let reports: serde_json::Value = serde_json::from_slice(&read(d, "k.json")).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);

    ok(
        d,
        &[
            "transfer",
            "sweep-domain",
            "--config",
            "cfg.json",
            "--pair",
            "a.json:b.json",
            "--pair",
            "b.json:b.json",
            "--seed",
            "2",
            "--out",
            "dom.json",
        ],
    );
    let dom: serde_json::Value = serde_json::from_slice(&read(d, "dom.json")).unwrap();
    assert_eq!(dom.as_array().unwrap().len(), 2);
    assert_eq!(dom[1]["probe_delta"], 0.0);

    let out = cct(
        d,
        &[
            "transfer",
            "sweep-domain",
            "--config",
            "cfg.json",
            "--pair",
            "nocolon",
            "--seed",
            "2",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}
