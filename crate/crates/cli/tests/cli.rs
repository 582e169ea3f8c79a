use std::path::Path;
use std::process::{Command, Output};

use mcrd_core::trainer::load_checkpoint;
use mcrd_core::QueryResponse;

fn mcrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcrd"))
        .args(args)
        .env("MCRD_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn toy(dir: &Path) -> String {
    let synth = dir.join("small.json");
    std::fs::write(&synth, r#"{"dim": 8, "train_targets": 30, "seen_pairs": 20, "unseen_targets": 5}"#).unwrap();
    let out = mcrd(&["toy", "--out", dir.to_str().unwrap(), "--synth", synth.to_str().unwrap()]);
    ok(&out).trim().to_string()
}

#[test]
fn train_eval_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path());
    let ckpt = dir.path().join("c.mcrd");
    let ckpt_s = ckpt.to_str().unwrap();
    ok(&mcrd(&["train", "--config", &config, "--checkpoint", ckpt_s, "--epochs", "3", "--seed", "7"]));

    let saved = load_checkpoint(&ckpt).unwrap();
    assert_eq!(saved.epoch, 3);
    assert_eq!(saved.config.seed, 7);
    let log = std::fs::read_to_string(dir.path().join("c.log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        for key in ["loss", "acc1", "acc10", "seconds"] {
            assert!(l[key].is_number(), "{key}");
        }
    }

    let seen = dir.path().join("seen.tsv");
    let table = ok(&mcrd(&["eval", "--checkpoint", ckpt_s, "--testset", seen.to_str().unwrap(), "--prior", "initial-letter"]));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("median rank") && rows[0].contains("acc@1/10/100"));
    assert!(rows[1].starts_with("seen+initial-letter"));
    assert!(rows[1].trim_end().ends_with("20"));

    let text = ok(&mcrd(&["query", "--checkpoint", ckpt_s, "--top-k", "4", "a road where cars go very quickly"]));
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.contains("word=")));

    let json = ok(&mcrd(&["query", "--checkpoint", ckpt_s, "--json", "--initial-letter", "m", "one which"]));
    let resp: QueryResponse = serde_json::from_str(&json).unwrap();
    assert!(resp.results.iter().all(|r| r.word.starts_with('m')));

    ok(&mcrd(&["train", "--config", &config, "--checkpoint", ckpt_s, "--resume", ckpt_s, "--epochs", "4"]));
    assert_eq!(load_checkpoint(&ckpt).unwrap().epoch, 4);
    let log = std::fs::read_to_string(dir.path().join("c.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = mcrd(&["eval", "--checkpoint", "x", "--testset", "y", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn failures_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.mcrd");
    let out = mcrd(&["query", "--checkpoint", missing.to_str().unwrap(), "words"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let junk = dir.path().join("junk.mcrd");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = mcrd(&["serve", "--checkpoint", junk.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_refuses_changed_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path());
    let ckpt = dir.path().join("c.mcrd");
    ok(&mcrd(&["train", "--config", &config, "--checkpoint", ckpt.to_str().unwrap(), "--epochs", "1"]));
    let emb = dir.path().join("embeddings.txt");
    let text = std::fs::read_to_string(&emb).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = lines[1].replacen(' ', " 0.125 ", 1);
    let last = lines[1].rfind(' ').unwrap();
    lines[1].truncate(last);
    std::fs::write(&emb, lines.join("\n") + "\n").unwrap();

    let out = mcrd(&["serve", "--checkpoint", ckpt.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("vocabulary/embeddings"), "{err}");
}
