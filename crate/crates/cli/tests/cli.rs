//! Exit codes, file contracts and idempotency of the subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use codealign::dataset::{load_records, write_wav_i16};

const SMALL: &str = "[synthetic]\nn = 400\nlatent_dim = 4\ncode_dim = 8\naudio_dim = 6\n\
[train]\nepochs = 3\nbatch_size = 64\nd_hidden = 16\nd_out = 8\n\
[sweep]\nd_hidden = [8]\nd_out = [4, 8]\nlayers = [1]\nlr = [1e-3]\nseeds = 1\n";

fn codealign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codealign"))
        .args(args)
        .env_remove("CODEALIGN_ENDPOINT")
        .output()
        .expect("run codealign")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_corpus_counts_and_is_idempotent() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("c");
    let first = codealign(&["gen-corpus", "--per-template", "2", "--out", s(&out)]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("rendered 16 programs (templates: 8, failed: 0)"));
    let a = dir_bytes(&out);
    assert_eq!(a.len(), 17);
    codealign(&["gen-corpus", "--per-template", "2", "--out", s(&out)]);
    assert_eq!(dir_bytes(&out), a);
}

#[test]
fn gen_corpus_usage_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("c");
    let zero = codealign(&["gen-corpus", "--per-template", "0", "--out", s(&out)]);
    assert_eq!(zero.status.code(), Some(2));

    let empty = t.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = codealign(&["gen-corpus", "--templates", s(&empty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let bad = t.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("broken.pi.tpl"), "play {{note").unwrap();
    let o = codealign(&["gen-corpus", "--templates", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken"), "{}", stderr(&o));

    fs::write(bad.join("broken.pi.tpl"), "play {{no_such_param}}").unwrap();
    let o = codealign(&["gen-corpus", "--templates", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_param"), "{}", stderr(&o));
}

fn three_program_corpus(root: &Path) -> std::path::PathBuf {
    let tpl = root.join("tpl");
    fs::create_dir_all(&tpl).unwrap();
    fs::write(
        tpl.join("solo.pi.tpl"),
        "use_synth :{{synth}}\nplay {{note}}\n",
    )
    .unwrap();
    let corpus = root.join("corpus");
    let o = codealign(&[
        "gen-corpus",
        "--templates",
        s(&tpl),
        "--per-template",
        "3",
        "--out",
        s(&corpus),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    corpus
}

#[test]
fn render_audio_dry_run_writes_one_packet_per_program() {
    let t = tempfile::tempdir().unwrap();
    let corpus = three_program_corpus(t.path());
    let out = t.path().join("r");
    let o = codealign(&[
        "render-audio",
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
        "--dry-run",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let osc = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "osc")
        })
        .count();
    assert_eq!(osc, 3);
    let report = fs::read_to_string(out.join("render_report.jsonl")).unwrap();
    assert_eq!(
        report
            .lines()
            .filter(|l| l.contains("\"captured\""))
            .count(),
        3
    );
}

#[test]
fn render_audio_empty_manifest_and_total_failure_exit_1() {
    let t = tempfile::tempdir().unwrap();
    let empty = t.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("manifest.jsonl"), "").unwrap();
    let o = codealign(&[
        "render-audio",
        "--corpus",
        s(&empty),
        "--out",
        s(&t.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nothing to render"));

    let corpus = three_program_corpus(t.path());
    let port = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let closed = port.local_addr().unwrap().to_string();
    drop(port);
    let o = codealign(&[
        "render-audio",
        "--corpus",
        s(&corpus),
        "--out",
        s(&t.path().join("live")),
        "--endpoint",
        &closed,
        "--record-seconds",
        "0.05",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn embed_pairs_by_stem_and_prefers_sidecars() {
    let t = tempfile::tempdir().unwrap();
    let corpus = three_program_corpus(t.path());
    let wavs = t.path().join("wavs");
    fs::create_dir_all(&wavs).unwrap();
    let tone: Vec<f64> = (0..8000).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
    write_wav_i16(wavs.join("solo__0000.wav"), &tone, 8000).unwrap();
    write_wav_i16(wavs.join("solo__0001.wav"), &tone, 8000).unwrap();

    let out = t.path().join("d.jsonl");
    let o = codealign(&[
        "embed",
        "--corpus",
        s(&corpus),
        "--wavs",
        s(&wavs),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("solo__0002"), "{}", stderr(&o));
    let data = load_records(&out).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.code_dim(), Some(768));
    let first = fs::read(&out).unwrap();
    codealign(&[
        "embed",
        "--corpus",
        s(&corpus),
        "--wavs",
        s(&wavs),
        "--out",
        s(&out),
    ]);
    assert_eq!(fs::read(&out).unwrap(), first);

    fs::write(
        wavs.join("solo__0001.embedding.json"),
        r#"{"code_embedding": [1.0, 2.0], "audio_embedding": [3.0]}"#,
    )
    .unwrap();
    fs::write(
        corpus.join("solo__0002.embedding.json"),
        r#"{"code_embedding": [4.0, 5.0], "audio_embedding": [6.0]}"#,
    )
    .unwrap();
    fs::write(
        corpus.join("solo__0000.embedding.json"),
        r#"{"code_embedding": [7.0, 8.0], "audio_embedding": [9.0]}"#,
    )
    .unwrap();
    let o = codealign(&[
        "embed",
        "--corpus",
        s(&corpus),
        "--wavs",
        s(&wavs),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("precomputed"));
    let data = load_records(&out).unwrap();
    let audio: Vec<f64> = data
        .records()
        .iter()
        .map(|r| r.audio_embedding[0])
        .collect();
    assert_eq!(audio, [9.0, 3.0, 6.0]);
}

#[test]
fn embed_without_pairs_exits_1() {
    let t = tempfile::tempdir().unwrap();
    let corpus = three_program_corpus(t.path());
    let wavs = t.path().join("none");
    fs::create_dir_all(&wavs).unwrap();
    let o = codealign(&[
        "embed",
        "--corpus",
        s(&corpus),
        "--wavs",
        s(&wavs),
        "--out",
        s(&t.path().join("d.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_needs_two_records() {
    let t = tempfile::tempdir().unwrap();
    let one = t.path().join("one.jsonl");
    fs::write(
        &one,
        "{\"id\":\"a\",\"code_embedding\":[1.0],\"audio_embedding\":[2.0]}\n",
    )
    .unwrap();
    let o = codealign(&[
        "analyze",
        "--dataset",
        s(&one),
        "--out",
        s(&t.path().join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_eval_reproduces_metrics() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let run = t.path().join("run");
    let o = codealign(&[
        "--config",
        s(&cfg),
        "train",
        "--synthetic",
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.toml",
        "loss_history.csv",
        "code_head.ealn",
        "audio_head.ealn",
        "metrics.json",
        "synthetic.toml",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let again = t.path().join("again");
    codealign(&[
        "--config",
        s(&cfg),
        "train",
        "--synthetic",
        "--out",
        s(&again),
    ]);
    assert_eq!(dir_bytes(&run), dir_bytes(&again));

    let eval_out = t.path().join("eval.json");
    let o = codealign(&[
        "eval",
        "--run",
        s(&run),
        "--synthetic",
        "--out",
        s(&eval_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(&eval_out).unwrap(),
        fs::read(run.join("metrics.json")).unwrap()
    );
}

#[test]
fn train_config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let out = s(&t.path().join("run")).to_string();
    let o = codealign(&[
        "--config",
        s(&cfg),
        "train",
        "--synthetic",
        "--batch-size",
        "5000",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"));

    let o = codealign(&[
        "--config",
        s(&cfg),
        "train",
        "--synthetic",
        "--lr=0",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lr"));

    let bad = t.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = codealign(&["--config", s(&bad), "train", "--synthetic", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));

    let o = codealign(&["train", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_seed_sweep_has_zero_std() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let out = t.path().join("sweep");
    let o = codealign(&[
        "--config",
        s(&cfg),
        "sweep",
        "--synthetic",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r[6] == "0.000000" && r[8] == "0.000000"));
    assert!(out.join("sweep.txt").exists());
}
