use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_factcheck"))
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("FACTCHECK_SEARCH_KEY").output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["evaluate", "--verdicts"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["ingest", "retrieve", "build-prompts", "export-train", "predict", "evaluate", "run", "lora-demo"] {
        assert!(text(&help.stdout).contains(sub), "help lists {sub}");
    }
}

#[test]
fn invalid_config_reports_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "dataset = \"snopes\"\n[paths]\nclaims = \"missing.jsonl\"\n").unwrap();
    let out = run(&["run", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("dataset"), "{err}");
    assert!(err.contains("paths.claims"), "{err}");
}

#[test]
fn offline_cache_miss_is_a_stage_failure_naming_the_claim() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--config",
        p(&golden("rawfc.toml")),
        "--output-dir",
        p(&dir.path().join("out")),
        "--cache-dir",
        p(&dir.path().join("empty-cache")),
        "--offline",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    let err = text(&out.stderr);
    assert!(err.contains("retrieve"), "{err}");
    assert!(err.contains("rawfc-00"), "{err}");
}

#[test]
fn stage_commands_reproduce_the_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run_dir = dir.path().join("run");
    let out = run(&["run", "--config", p(&golden("liar.toml")), "--output-dir", p(&run_dir), "--cache-dir", p(&cache)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let s = dir.path().join("stages");
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest", "--dataset", "liar", "--path", p(&golden("liar_claims.jsonl")), "--out", p(&s.join("normalized.jsonl"))],
        vec![
            "retrieve", "--claims", p(&s.join("normalized.jsonl")), "--out", p(&s.join("bundles.jsonl")),
            "--cache-dir", p(&cache), "--offline", "--provider", "fixture", "--fixture", p(&golden("liar_evidence.json")),
            "--dataset", "liar",
        ],
        vec![
            "build-prompts", "--claims", p(&s.join("normalized.jsonl")), "--bundles", p(&s.join("bundles.jsonl")),
            "--out", p(&s.join("prompts.jsonl")), "--dataset", "liar",
        ],
        vec![
            "predict", "--prompts", p(&s.join("prompts.jsonl")), "--backend", "mock", "--mock-file",
            p(&golden("liar_mock.json")), "--out", p(&s.join("verdicts.jsonl")),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{:?}: {}", step[0], text(&o.stderr));
    }
    for file in ["normalized.jsonl", "bundles.jsonl", "prompts.jsonl", "verdicts.jsonl"] {
        let a = std::fs::read(run_dir.join(file)).unwrap();
        let b = std::fs::read(s.join(file)).unwrap();
        assert!(a == b, "{file} differs between run and stage commands");
    }

    let eval = run(&[
        "evaluate", "--verdicts", p(&s.join("verdicts.jsonl")), "--golds", p(&s.join("normalized.jsonl")),
        "--taxonomy", "liar", "--out", p(&s.join("report.json")),
    ]);
    assert_eq!(eval.status.code(), Some(0), "{}", text(&eval.stderr));
    let shown = text(&eval.stdout);
    assert!(!shown.contains("Published results"));
    assert!(shown.contains(&std::fs::read_to_string(run_dir.join("confusion.txt")).unwrap()));
    let a: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(s.join("report.json")).unwrap()).unwrap();
    assert_eq!(a["metrics"], b["metrics"]);
    assert_eq!(a["confusion"], b["confusion"]);
}

#[test]
fn export_train_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = run(&["run", "--config", p(&golden("rawfc.toml")), "--output-dir", p(&run_dir), "--cache-dir", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(0));
    let train = dir.path().join("train.jsonl");
    let o = run(&[
        "export-train", "--claims", p(&run_dir.join("normalized.jsonl")), "--bundles", p(&run_dir.join("bundles.jsonl")),
        "--partition", "test", "--out", p(&train), "--template", p(&golden("../template.toml")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let lines = std::fs::read_to_string(&train).unwrap();
    assert_eq!(lines.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["instruction"].as_str().unwrap().starts_with("Decide whether"));
    assert_eq!(first["output"], "true");
    let meta = std::fs::read_dir(dir.path()).unwrap().filter_map(Result::ok).any(|e| e.file_name().to_string_lossy().contains("meta"));
    assert!(meta);
}

#[test]
fn lora_demo_json_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["lora-demo", "--epochs", "2", "--json", "--checkpoint", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["log"]["epochs"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("base.json").exists());
    assert!(dir.path().join("adapters.json").exists());
    assert_eq!(run(&["lora-demo", "--rank", "0"]).status.code(), Some(1));
}
