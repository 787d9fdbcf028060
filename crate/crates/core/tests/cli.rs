use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use ttsfront::metrics::EvalReport;
use ttsfront::rules::BUILTIN_MANIFEST;

const TINY: &str = r#"
seed = 5
output_dir = "run"

[train]
iterations = 9
batch_size = 4
validate_every = 3

[model.trunk]
char_emb_dim = 4
conv_channels = 4
lstm_hidden = 4
xformer_hidden = 8
xformer_ff_dim = 8
attn_heads = 2
lm_last_layer = 2

[model.heads]
ff_dim = 8

[model.encoder]
layers = 2
dim = 8
heads = 2
ff_dim = 8

[data.train]
tn = "corpus/tn.jsonl"
pos = "corpus/pos.jsonl"
hd = "split/train.tsv"

[data.valid]
tn = "corpus/tn.jsonl"
pos = "corpus/pos.jsonl"

[data.test]
hd = "split/test.tsv"
"#;

fn ttsfront(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ttsfront"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str], stdin: Option<&str>) -> String {
    let out = ttsfront(args, stdin);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ttsfront(args, None).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert!(ok(&["--help"], None).contains("normalize"));
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["normalize", "--checkpoint", "/nonexistent.ckpt", "x"]), 2);
    assert_eq!(code(&["train", "--manifest", "/nonexistent.toml"]), 2);
}

#[test]
fn data_train_infer_and_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    let split = d.join("split");
    ok(&["data", "synth", "--out", s(&corpus), "--seed", "5", "--tn", "8", "--pos", "8"], None);

    let balance = ok(&["data", "validate-balance", "--in", s(&corpus.join("hd.tsv"))], None);
    assert!(balance.contains("sentences\t80") || balance.contains("80"), "{balance}");
    ok(&["data", "split", "--in", s(&corpus.join("hd.tsv")), "--out", s(&split)], None);
    assert!(split.join("train.tsv").exists() && split.join("test.tsv").exists());

    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let printed = ok(&["train", "--manifest", s(&d.join("tiny.toml"))], None);
    let report = EvalReport::parse(&printed).unwrap();
    assert!(report.get("hd.micro").is_some(), "{printed}");
    let run = d.join("run");
    for f in ["manifest.toml", "history.jsonl", "best.ckpt", "last.ckpt", "eval.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 9);
    let tasks: Vec<String> = history
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["task"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(&tasks[..3], ["tn", "pos", "hd"]);

    let ckpt = run.join("best.ckpt");
    let normalized = ok(&["normalize", "--checkpoint", s(&ckpt)], Some("7/8 inches\n\nSt. Mary's St.\n"));
    let lines: Vec<&str> = normalized.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "");

    let tagged = ok(&["tag", "--checkpoint", s(&ckpt), "He read it ."], None);
    assert_eq!(tagged.trim().split(' ').count(), 4);
    assert!(tagged.trim().split(' ').all(|wt| wt.contains('/')));

    let hd = ok(&["homograph", "--checkpoint", s(&ckpt)], Some("I read it\t2\t6\n"));
    assert!(hd.trim().starts_with("read_"), "{hd}");
    let unknown = ttsfront(&["homograph", "--checkpoint", s(&ckpt)], Some("I qzxv it\t2\t6\n"));
    assert_eq!(unknown.status.code(), Some(3));

    let eval = ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&d.join("tiny.toml"))], None);
    let r = EvalReport::parse(&eval).unwrap();
    for key in ["tn.line_acc", "tn.wer", "pos.acc", "hd.micro", "hd.macro"] {
        assert!(r.get(key).is_some(), "{key} missing from {eval}");
    }

    // A different ruleset manifest makes the checkpoint unusable.
    let other = d.join("rules.toml");
    std::fs::write(&other, BUILTIN_MANIFEST.replace("version = 1", "version = 2")).unwrap();
    assert_eq!(code(&["normalize", "--checkpoint", s(&ckpt), "--manifest", s(&other), "x"]), 2);

    // Truncated checkpoints are rejected rather than half-loaded.
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = d.join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 8]).unwrap();
    assert_ne!(code(&["normalize", "--checkpoint", s(&cut), "x"]), 0);
}

#[test]
fn unbalanced_hd_file_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("hd.tsv");
    std::fs::write(
        &p,
        "homograph\twordid\tsentence\tstart\tend\nread\tread_past\tI read it.\t2\t6\nread\tread_past\tYou read it.\t4\t8\nread\tread_present\tWe read it.\t3\t7\n",
    )
    .unwrap();
    assert_eq!(code(&["data", "validate-balance", "--in", s(&p)]), 3);
}
