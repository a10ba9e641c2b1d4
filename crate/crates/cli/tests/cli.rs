use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sln(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sln"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = sln(dir, args);
    assert!(
        out.status.success(),
        "sln {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_of(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {stderr}"))
}

fn csv_header(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).lines().next().unwrap_or_default().to_string()
}

/// Synthetic corpus through graph, topics and features into `dir`.
fn prepared(dir: &Path) -> PathBuf {
    ok(dir, &["synth", "--learners", "30", "--threads", "15", "--intervals", "8", "--seed", "4", "--out", "corpus.jsonl"]);
    ok(dir, &["ingest", "corpus.jsonl", "--out", "clean.jsonl"]);
    ok(dir, &["graph", "build", "--corpus", "clean.jsonl", "--intervals", "8", "--out", "timeline.json"]);
    ok(dir, &["topics", "fit", "--corpus", "clean.jsonl", "--k", "5", "--iters", "30", "--out", "topics.json"]);
    ok(dir, &["features", "--timeline", "timeline.json", "--topics", "topics.json", "--out", "features.csv"]);
    dir.join("features.csv")
}

#[test]
fn stage_commands_chain_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);

    let words = ok(dir, &["topics", "top-words", "--topics", "topics.json", "--n", "3"]);
    assert_eq!(String::from_utf8_lossy(&words.stdout).lines().count(), 6);

    let metrics = ok(dir, &["graph", "metrics", "--timeline", "timeline.json"]);
    assert!(csv_header(&metrics).starts_with("interval"));

    ok(dir, &["train", "--model", "re", "--features", "features.csv", "--out", "re.json"]);
    ok(dir, &["train", "--model", "crnn", "--features", "features.csv", "--epochs", "2", "--out", "crnn.json"]);
    assert!(dir.join("crnn.json").is_file());

    let eval = ok(dir, &["eval", "--model", "linda", "--features", "features.csv", "--k", "3"]);
    let text = String::from_utf8_lossy(&eval.stdout).to_string();
    assert!(text.starts_with("model,dataset,fold,acc,auc,tac_w0"), "{text}");
    let folds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(folds, ["0", "1", "2", "mean", "sd"]);

    let from_ckpt = ok(dir, &["eval", "--model", "crnn.json", "--features", "features.csv", "--k", "3"]);
    assert!(String::from_utf8_lossy(&from_ckpt.stdout).contains("crnn,"));

    let snr = ok(dir, &["analyze", "snr", "--features", "features.csv"]);
    assert_eq!(String::from_utf8_lossy(&snr.stdout).lines().count(), 8);
    ok(dir, &["analyze", "cdf", "--features", "features.csv", "--feature", "Re", "--out", "cdf.csv"]);
    assert!(dir.join("cdf.csv").is_file());
    ok(dir, &["analyze", "graph", "--timeline", "timeline.json"]);
    let gates = ok(dir, &["analyze", "gates", "--model", "crnn.json", "--features", "features.csv"]);
    assert!(String::from_utf8_lossy(&gates.stdout).lines().count() > 1);
    ok(dir, &["analyze", "ablation", "--features", "features.csv", "--groups", "nei+path", "--k", "3", "--epochs", "1"]);
}

#[test]
fn run_writes_a_manifest_and_honours_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = r#"
seed = 11
intervals = 8
models = ["re", "linda"]
out = "from-config"

[data.synth]
learners = 30
threads = 15

[topics]
k = 5
iterations = 30

[eval]
k = 3

[analyze]
gates = false
"#;
    std::fs::write(dir.join("run.toml"), config).unwrap();
    ok(dir, &["run", "--config", "run.toml", "--seed", "5", "--out", "flagged"]);
    assert!(!dir.join("from-config").exists());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("flagged/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["root"], 5);
}

#[test]
fn failures_exit_nonzero_with_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let missing = error_of(&sln(dir, &["graph", "build", "--corpus", "absent.jsonl", "--out", "t.json"]));
    assert_eq!(missing["error"], "io");
    assert!(missing["message"].as_str().unwrap().contains("absent.jsonl"));

    let usage = error_of(&sln(dir, &["frobnicate"]));
    assert_eq!(usage["error"], "usage");

    prepared(dir);
    let model = error_of(&sln(dir, &["train", "--model", "transformer", "--features", "features.csv", "--out", "m.json"]));
    assert_eq!(model["error"], "usage");
    assert!(model["message"].as_str().unwrap().contains("transformer"));

    let no_out = error_of(&sln(dir, &["train", "--model", "re", "--features", "features.csv"]));
    assert_eq!(no_out["error"], "invalid_argument");

    std::fs::write(dir.join("run.toml"), "[data]\ncorpus = \"gone.jsonl\"\n").unwrap();
    let stage = error_of(&sln(dir, &["run", "--config", "run.toml", "--out", "r"]));
    assert_eq!(stage["stage"], "ingest");
    assert!(stage["message"].as_str().unwrap().contains("data.corpus"));
}
