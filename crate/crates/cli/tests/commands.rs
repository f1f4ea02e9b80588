use std::path::PathBuf;
use std::process::{Command, Output};

fn memegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memegen")).args(args).output().unwrap()
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn single_error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("memegen-error: ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn tokenize_prints_normalized_tokens() {
    let o = memegen(&["tokenize", "--text", "I need to lose weight, should I do heroin?"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "i need to lose weight , should i do heroin ?\n");
}

#[test]
fn errors_are_single_prefixed_lines() {
    let line = single_error_line(&memegen(&["caption", "--model", "/definitely/missing.mwt", "--text", "hi"]));
    assert!(line.contains("/definitely/missing.mwt"), "{line}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\tb\nonly one column\n").unwrap();
    let out = dir.path().join("m.mwt");
    let line = single_error_line(&memegen(&[
        "train-caption",
        "--pairs",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(line.contains(":2:"), "{line}");
    assert!(!out.exists());

    let line = single_error_line(&memegen(&[
        "train-emotion",
        "--arch",
        "ffn",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(line.contains("--vectors"), "{line}");
}

#[test]
fn train_caption_eval_and_generate_failure_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("cap.mwt");
    let csv = dir.path().join("loss.csv");
    let o = memegen(&[
        "train-caption",
        "--pairs",
        &data("caption_pairs.tsv"),
        "--epochs",
        "2",
        "--hidden",
        "16",
        "--out",
        model.to_str().unwrap(),
        "--loss-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["steps"], 10);
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("step,loss\n1,"));

    let o = memegen(&["eval-caption", "--model", model.to_str().unwrap(), "--tests", &data("similar_different.tsv")]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["total"], 100);
    assert_eq!(report["buckets"]["similar"]["count"], 60);
    assert_eq!(report["buckets"]["different"]["count"], 40);

    let o = memegen(&["caption", "--model", model.to_str().unwrap(), "--text", "i need money", "--show-attention"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() >= 2);

    let png = dir.path().join("meme.png");
    let line = single_error_line(&memegen(&[
        "generate",
        "--text",
        "i need money",
        "--emotion-model",
        model.to_str().unwrap(),
        "--caption-model",
        model.to_str().unwrap(),
        "--templates",
        &data("templates/templates.json"),
        "--out",
        png.to_str().unwrap(),
    ]));
    assert!(line.contains("load emotion model"), "{line}");
    assert!(!png.exists());
}
