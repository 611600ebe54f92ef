use std::path::Path;
use std::process::{Command, Output};

fn kgtod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgtod")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = kgtod(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let o = kgtod(&["stats", "--dataset", "/nonexistent/data.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/data.json"));
}

#[test]
fn malformed_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "[{\"dialogue_id\": 3}]").unwrap();
    assert_eq!(kgtod(&["stats", "--dataset", s(&p)]).status.code(), Some(2));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(kgtod(&["stats", "--arch", "nope"]).status.code(), Some(2));
    assert_eq!(kgtod(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kgtod(&["synth", "--out", "/tmp/x"]).status.code(), Some(2));
}

#[test]
fn evaluate_without_models_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["synth", "--n", "10", "--seed", "1", "--out", s(&out)]);
    let o = kgtod(&["evaluate", "--dataset", s(&out.join("test.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("models.json"));
}

#[test]
fn stats_match_generator_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    ok(&["synth", "--n", "100", "--seed", "5", "--out", s(&out)]);
    let tallies: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tallies.json")).unwrap()).unwrap();
    // All 100 dialogues: merge the split back.
    let mut all: Vec<serde_json::Value> = Vec::new();
    for f in ["train.json", "test.json"] {
        let v: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(out.join(f)).unwrap()).unwrap();
        all.extend(v);
    }
    let merged = out.join("all.json");
    std::fs::write(&merged, serde_json::to_string(&all).unwrap()).unwrap();
    let text = ok(&["stats", "--dataset", s(&merged)]);
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    for k in ["dialogues", "turns", "enriched_turns"] {
        assert_eq!(json[k], tallies[k], "{k}");
    }
    assert!(text.contains("Turns enriched with chit-chat"));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--n", "20", "--seed", "9", "--out", s(&a)]);
    ok(&["synth", "--n", "20", "--seed", "9", "--out", s(&b)]);
    for f in ["train.json", "test.json", "corpus.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

const TINY: &str = r#"
[lm]
n_layers = 1
d_model = 16
n_heads = 2
context_len = 256
epochs = 1
batch_size = 16
learning_rate = 0.003

[pipeline]
context_budget = 40
max_belief_tokens = 12
max_action_tokens = 12
max_response_tokens = 12
"#;

#[test]
fn end_to_end_smoke_and_report_order() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    let run = dir.path().join("run");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    ok(&["synth", "--n", "12", "--seed", "3", "--out", s(&syn)]);
    let corpus = syn.join("corpus.jsonl");
    let idx = ok(&["index", "--corpus", s(&corpus), "--out", s(&run)]);
    assert!(idx.contains("articles"));
    let common = ["--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&run), "--seed", "1"];
    let train = syn.join("train.json");
    let test = syn.join("test.json");
    ok(&[&["make-data", "--arch", "plus", "--ranker", "trained", "--dataset", s(&train)][..], &common].concat());
    assert!(run.join("sequences.jsonl").exists() && run.join("ranker.json").exists());
    ok(&[&["train"][..], &common].concat());
    assert!(run.join("models/models.json").exists());

    let ev = |flags: &[&str]| ok(&[&["evaluate", "--dataset", s(&test)][..], &common, flags].concat());
    ev(&[]);
    ev(&["--gold-tod"]);
    ev(&["--gold-tod", "--gold-decision", "--gold-knowledge"]);
    let o = kgtod(&[&["evaluate", "--dataset", s(&test), "--gold-decision"][..], &common].concat());
    assert_eq!(o.status.code(), Some(2));

    let eval = run.join("eval");
    let n =
        std::fs::read_dir(&eval).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "json").count();
    assert_eq!(n, 3);
    let pred = std::fs::read_to_string(eval.join("plus__gold-tod.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(pred.lines().next().unwrap()).unwrap();
    assert_eq!(first["provenance"]["belief"], "gold");
    assert_eq!(first["provenance"]["acts"], "gold");

    let rep = ok(&["report", "--out", s(&run)]);
    let pos = |l: &str| rep.find(l).unwrap_or_else(|| panic!("{l} missing from\n{rep}"));
    assert!(pos("all-oracle") < pos("gold TOD") && pos("gold TOD") < pos("end-to-end"));
    assert!(run.join("report.txt").exists());
}
