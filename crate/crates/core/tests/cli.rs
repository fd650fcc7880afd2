use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scanet::corpus::load_corpus;
use scanet::trainer::{load_checkpoint, ModelParams};

fn scanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scanet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn complexity_reports_the_worked_example() {
    let out = scanet(&["complexity", "--corpus", s(&fixture("fig2a.jsonl"))]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("video_id,alpha,raw_count,n_queries,degraded"));
    assert_eq!(lines.next(), Some("v1,2,2,4,false"));
    assert_eq!(lines.next(), None);
}

#[test]
fn training_without_steps_keeps_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"seed":3,"n_videos":4,"frames_per_video":16,"d":8}"#).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    assert!(scanet(&["generate", "--spec", s(&spec), "--out", s(&corpus)]).status.success());
    assert!(corpus.with_extension("oracle.json").exists());

    let run = dir.path().join("run");
    let sets = [
        "d_model=8",
        "n_heads=2",
        "ffn_hidden=8",
        "stage1_steps=0",
        "stage2_steps=0",
    ];
    let mut args = vec!["train", "--corpus", s(&corpus), "--out", s(&run)];
    for kv in &sets {
        args.extend(["--set", kv]);
    }
    let out = scanet(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = scanet::cli::load_config(None, &sets.map(String::from)).unwrap();
    let init = ModelParams::init(&cfg, &load_corpus(&corpus).unwrap()).unwrap();
    assert_eq!(load_checkpoint(run.join("model.json")).unwrap(), init);

    let eval_dir = dir.path().join("eval");
    let out = scanet(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&run.join("model.json")),
        "--out",
        s(&eval_dir),
        "--set",
        "strategy=fixed:6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in scanet::cli::EVAL_FILES {
        assert!(eval_dir.join(f).exists(), "missing {f}");
    }
}

#[test]
fn errors_are_one_line_and_fail_the_process() {
    let out = scanet(&["complexity", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = scanet(&[
        "train",
        "--corpus",
        s(&fixture("fig2a.jsonl")),
        "--out",
        "/tmp/never",
        "--set",
        "no_such_key=1",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("no_such_key"));
}

#[test]
fn help_lists_every_config_key() {
    let out = scanet(&["train", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for (key, _) in scanet::config::KEY_DOCS {
        assert!(text.contains(key), "help omits {key}");
    }
}
