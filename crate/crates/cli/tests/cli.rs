use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vlparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlparse"))
        .args(args)
        .env_remove("VLPARSE_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small synthetic dataset in `dir/data`.
fn synth(dir: &Path, sentences: usize) -> PathBuf {
    let data = dir.join("data");
    let n = sentences.to_string();
    let out = vlparse(&["synth", "--out", p(&data), "--sentences", &n, "--quiet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let paths = [
        data.join("train.corpus.jsonl"),
        data.join("train.features.jsonl"),
        data.join("embeddings.txt"),
    ];
    let mut args = vec![
        "train",
        "--corpus",
        p(&paths[0]),
        "--features",
        p(&paths[1]),
        "--embeddings",
        p(&paths[2]),
        "--out",
        p(out),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    vlparse(&args)
}

fn read_tsv(path: &Path) -> Vec<(String, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 60);
    let report = dir.path().join("report.tsv");
    let out = vlparse(&[
        "eval",
        "--pred-corpus",
        p(&data.join("test.corpus.jsonl")),
        "--gold-corpus",
        p(&data.join("test.corpus.jsonl")),
        "--pred-align",
        p(&data.join("test.align.jsonl")),
        "--gold-align",
        p(&data.join("test.align.jsonl")),
        "--graphs",
        p(&data.join("test.sg.jsonl")),
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = read_tsv(&report);
    for name in ["dda", "uda", "zero_aa", "first_aa", "second_aa"] {
        assert!(metrics.iter().any(|(k, _)| k == name), "missing {name}");
    }
    for (k, v) in metrics {
        assert_eq!(v, 1.0, "{k}");
    }
}

#[test]
fn training_twice_with_one_worker_gives_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 120);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--seed", "7", "--epochs", "2", "--workers", "1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["epoch-001.ckpt", "epoch-002.ckpt", "final.ckpt", "train_log.jsonl"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let log = std::fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in ["epoch", "mle", "contrastive", "dev_dda", "dev_uda"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    let other = dir.path().join("c");
    assert_eq!(code(&train(&data, &other, &["--seed", "8", "--epochs", "1"])), 0);
    assert_ne!(
        std::fs::read(a.join("epoch-001.ckpt")).unwrap(),
        std::fs::read(other.join("epoch-001.ckpt")).unwrap()
    );
}

#[test]
fn parse_does_not_depend_on_the_rest_of_the_corpus() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 80);
    let run = dir.path().join("run");
    assert_eq!(code(&train(&data, &run, &["--epochs", "1"])), 0);
    let corpus = std::fs::read_to_string(data.join("test.corpus.jsonl")).unwrap();
    let lines: Vec<&str> = corpus.lines().collect();
    // every other sentence, in reverse order
    let subset: Vec<&str> = lines.iter().rev().step_by(2).copied().collect();
    let sub_path = dir.path().join("subset.jsonl");
    std::fs::write(&sub_path, subset.join("\n") + "\n").unwrap();
    let parse = |corpus: &Path, out: &Path, workers: &str| {
        let o = vlparse(&[
            "parse",
            "--model",
            p(&run.join("final.ckpt")),
            "--corpus",
            p(corpus),
            "--features",
            p(&data.join("test.features.jsonl")),
            "--out",
            p(out),
            "--workers",
            workers,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let full = parse(&data.join("test.corpus.jsonl"), &dir.path().join("full.out"), "1");
    let part = parse(&sub_path, &dir.path().join("part.out"), "3");
    let full: Vec<&str> = full.lines().collect();
    let expected: Vec<&str> = full.iter().rev().step_by(2).copied().collect();
    assert_eq!(part.lines().collect::<Vec<_>>(), expected);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&vlparse(&["synth", "--out", "x", "--no-such-flag"])), 1);
    assert_eq!(code(&vlparse(&["frobnicate"])), 1);
    assert_eq!(code(&vlparse(&["--help"])), 0);
    assert_eq!(code(&vlparse(&["synth", "--out", "x", "--lambda", "2"])), 1);
    let missing = dir.path().join("missing.jsonl");
    let out = vlparse(&[
        "eval",
        "--pred-corpus",
        p(&missing),
        "--gold-corpus",
        p(&missing),
        "--out",
        p(&dir.path().join("r.tsv")),
    ]);
    assert_eq!(code(&out), 2);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = 1\n").unwrap();
    assert_eq!(code(&vlparse(&["synth", "--out", "x", "--config", p(&cfg)])), 1);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let out = vlparse(&[
        "eval",
        "--pred-corpus",
        p(&bad),
        "--gold-corpus",
        p(&bad),
        "--out",
        p(&dir.path().join("r.tsv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_and_digest_check() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 60);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "epochs = 1\nbatch_size = 8\nseed = 3\n").unwrap();
    let run = dir.path().join("run");
    let o = train(&data, &run, &["--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("epoch-001.ckpt").exists());
    assert!(!run.join("epoch-002.ckpt").exists());
    let log = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(log.is_empty(), "quiet run logged: {log}");
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["settings"]["batch_size"], 8);
    assert_eq!(record["settings"]["seed"], 3);

    let (model, corpus, features) = (
        run.join("final.ckpt"),
        data.join("test.corpus.jsonl"),
        data.join("test.features.jsonl"),
    );
    let ground = |extra: &[&str]| {
        let mut args = vec![
            "ground",
            "--model",
            p(&model),
            "--corpus",
            p(&corpus),
            "--features",
            p(&features),
        ];
        let out = dir.path().join("g.jsonl");
        let out = out.display().to_string();
        args.extend_from_slice(&["--out", &out]);
        args.extend_from_slice(extra);
        code(&vlparse(&args))
    };
    // same config: digests agree
    assert_eq!(ground(&["--config", p(&cfg)]), 0);
    // changed setting: digest mismatch is a data error unless forced
    assert_eq!(ground(&["--config", p(&cfg), "--lambda", "0.2"]), 2);
    assert_eq!(ground(&["--config", p(&cfg), "--lambda", "0.2", "--force"]), 0);
}

#[test]
fn align_writes_metadata_and_candidates() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 60);
    let out = dir.path().join("al.jsonl");
    let typed = dir.path().join("typed.jsonl");
    let o = vlparse(&[
        "align",
        "--corpus",
        p(&data.join("train.corpus.jsonl")),
        "--graphs",
        p(&data.join("train.sg.jsonl")),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out",
        p(&out),
        "--topk-align",
        "2",
        "--typed-corpus",
        p(&typed),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("al.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["reconstructed_rules"], true);
    assert_eq!(meta["k"], 2);
    let cands = std::fs::read_to_string(dir.path().join("al.jsonl.candidates.jsonl")).unwrap();
    assert!(cands.lines().count() > 0);
    // rule alignment of synthetic data reproduces the gold alignment file
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        std::fs::read_to_string(data.join("train.align.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(&typed).unwrap(),
        std::fs::read_to_string(data.join("train.corpus.jsonl")).unwrap()
    );
}
