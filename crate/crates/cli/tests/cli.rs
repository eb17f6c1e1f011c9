use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mpdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpdg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).expect("one JSON document on stdout")
}

const TWO_DIALOGUES: &str = r#"{"id":"d1","turns":[{"speaker":"ann","text":"hi there"},{"speaker":"bob","text":"hello ann"},{"speaker":"cy","text":"hey all"}]}
{"id":"d2","turns":[{"speaker":"bob","text":"anyone here"},{"speaker":"ann","text":"yes"}]}
"#;

const SINGLE_SPEAKER: &str = r#"{"id":"solo","turns":[{"speaker":"ann","text":"one"},{"speaker":"ann","text":"two"}]}
"#;

fn write(dir: &Path, name: &str, body: &[u8]) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.jsonl", TWO_DIALOGUES.as_bytes());
    let o = mpdg(&["validate", &path]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("dialogues 2"), "{out}");
    assert!(out.contains("utterances 5"));
    assert!(out.contains("speakers 3"));

    let j = json(&mpdg(&["validate", &path, "--json"]));
    assert_eq!(j["ok"], true);
    assert_eq!(j["dialogues"], 2);
    assert_eq!(j["utterances"], 5);
}

#[test]
fn validate_single_speaker_strict_and_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.jsonl", SINGLE_SPEAKER.as_bytes());
    let strict = mpdg(&["validate", &path]);
    assert_eq!(code(&strict), 1);
    assert!(!strict.stderr.is_empty());
    let lenient = mpdg(&["validate", &path, "--lenient"]);
    assert_eq!(code(&lenient), 0);
    assert!(stdout(&lenient).contains("warning: line 1"));

    let j = json(&mpdg(&["validate", &path, "--json"]));
    assert_eq!(j["ok"], false);
    assert_eq!(j["exit_code"], 1);
    assert_eq!(j["errors"][0]["line"], 1);
}

#[test]
fn validate_garbage_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = TWO_DIALOGUES.as_bytes().to_vec();
    body.extend_from_slice(b"\xff\xfe not json \x00\n");
    let path = write(dir.path(), "c.jsonl", &body);
    let o = mpdg(&["validate", &path]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("line 3"), "{}", stdout(&o));
}

#[test]
fn validate_unreadable_path_is_runtime_error() {
    let o = mpdg(&["validate", "/definitely/not/here.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn synth_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = mpdg(&["synth", "--dialogues", "10", "--speakers", "3", "--seed", "4", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(code(&mpdg(&["validate", a.to_str().unwrap()])), 0);

    let o = mpdg(&["synth", "--dialogues", "10", "--speakers", "1", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

const TINY_CONFIG: &str = r#"
epochs = 2
batch_size = 4
learning_rate = 1e-3

[model]
d_model = 8
n_heads = 2
n_layers = 1
d_ff = 16
max_seq_len = 32
"#;

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.jsonl");
    let corpus_s = corpus.to_str().unwrap();
    let cfg = write(d, "train.toml", TINY_CONFIG.as_bytes());
    let run = d.join("run");
    let run_s = run.to_str().unwrap();

    assert_eq!(code(&mpdg(&["synth", "--dialogues", "6", "--speakers", "3", "--out", corpus_s])), 0);

    let o = mpdg(&["train", "--config", &cfg, "--corpus", corpus_s, "--out", run_s, "--json", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = json(&o);
    assert_eq!(j["epochs"], 2);
    assert_eq!(j["seed"], 3);
    for f in ["model.ckpt", "history.csv", "config.toml", "vocab.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,lm,contrastive,total,rank_acc_ctx,rank_acc_spk"));
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 3"));

    let ckpt = run.join("model.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let preds = d.join("preds.jsonl");
    let preds_s = preds.to_str().unwrap();
    let o = mpdg(&["generate", "--checkpoint", ckpt_s, "--corpus", corpus_s, "--out", preds_s, "--max-len", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read_to_string(&preds).unwrap();
    let again = d.join("again.jsonl");
    mpdg(&["generate", "--checkpoint", ckpt_s, "--corpus", corpus_s, "--out", again.to_str().unwrap(), "--max-len", "6"]);
    assert_eq!(first, fs::read_to_string(&again).unwrap());
    let n_preds = first.lines().count();
    assert!(n_preds > 0);

    let report = d.join("report.csv");
    let o = mpdg(&[
        "evaluate", "--predictions", preds_s, "--corpus", corpus_s, "--strata", "context", "--out",
        report.to_str().unwrap(), "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = json(&o);
    let rows = j["report"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["count"], n_preds);
    let strata_total: u64 = rows[1..].iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(strata_total, n_preds as u64);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("stratum,count,B-1,B-2,B-3,R-L,D-1,D-2"));

    let o = mpdg(&["evaluate", "--predictions", preds_s, "--corpus", corpus_s, "--out", report.to_str().unwrap()]);
    assert!(stdout(&o).contains("R-L"));

    let o = mpdg(&["rank", "--checkpoint", ckpt_s, "--corpus", corpus_s, "--triples", "20", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = json(&o);
    for k in ["context_accuracy", "speaker_accuracy"] {
        let v = j[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    // Resuming to a later epoch continues the same run.
    let o = mpdg(&[
        "train", "--config", &cfg, "--corpus", corpus_s, "--out", d.join("more").to_str().unwrap(), "--seed", "3",
        "--epochs", "3", "--resume", ckpt_s, "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["epochs"], 3);
}

#[test]
fn missing_and_corrupt_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = write(d, "c.jsonl", TWO_DIALOGUES.as_bytes());
    let out = d.join("o").to_string_lossy().into_owned();

    let o = mpdg(&["train", "--corpus", "/no/such/file.jsonl", "--out", &out]);
    assert_eq!(code(&o), 1);

    let bad_cfg = write(d, "bad.toml", b"learning_rate = -1.0\n");
    let o = mpdg(&["train", "--config", &bad_cfg, "--corpus", &corpus, "--out", &out]);
    assert_eq!(code(&o), 1);

    let ckpt = write(d, "model.ckpt", b"MPDGCKPT garbage");
    let o = mpdg(&["generate", "--checkpoint", &ckpt, "--corpus", &corpus, "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt"));

    let o = mpdg(&["rank", "--checkpoint", "/no/such.ckpt", "--corpus", &corpus]);
    assert_eq!(code(&o), 1);

    let preds = write(d, "p.jsonl", b"{\"dialogue_id\":\"nope\",\"target_index\":1,\"candidate\":\"x\"}\n");
    let o = mpdg(&["evaluate", "--predictions", &preds, "--corpus", &corpus, "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
