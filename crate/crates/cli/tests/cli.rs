use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fewshot_prp::config::ExperimentConfig;
use fewshot_prp::synthetic::{WorldParams, SyntheticWorld};

fn fsprp(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsprp"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn fixture(dir: &Path) -> (SyntheticWorld, ExperimentConfig, PathBuf) {
    let world = SyntheticWorld::generate(&WorldParams { n_test_queries: 3, seed: 5, ..WorldParams::default() }).unwrap();
    let mut cfg = world.write_fixture(dir, 10).unwrap();
    cfg.depth = 6;
    let path = write_config(dir, &cfg);
    (world, cfg, path)
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (world, cfg, config) = fixture(dir.path());

    let out = fsprp(&config, &["index"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["corpus_documents"], 200);

    let probe = world.queries.iter().next().unwrap().query_id.clone();
    let out = fsprp(&config, &["neighbors", &probe]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with(&format!("probe\t{probe}")));
    assert!(text.contains("mean_jaccard"));

    let out = fsprp(&config, &["rerank"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let few = cfg.paths.output_run.clone().unwrap();
    assert!(std::fs::read_to_string(&few).unwrap().contains("pairwise-lex-1s"));

    let zero = dir.path().join("zero.run");
    let out = fsprp(&config, &["rerank", "--shots", "0", "--output", zero.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["tag"], "pairwise-0s");

    let out = fsprp(
        &config,
        &["evaluate", zero.to_str().unwrap(), few.to_str().unwrap(), "--locality", zero.to_str().unwrap(), few.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("zero\t3\t")));
    assert!(text.lines().any(|l| l.starts_with("zero vs reranked\tndcg@10")));
    assert!(text.contains("query_id\tjaccard"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = fsprp(&dir.path().join("absent.json"), &["index"]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dpeth": 3}"#).unwrap();
    assert_eq!(fsprp(&bad, &["index"]).status.code(), Some(1));

    let mut cfg = ExperimentConfig::default();
    cfg.paths.corpus = Some(dir.path().join("nope.jsonl"));
    cfg.paths.training_queries = Some(dir.path().join("nope.tsv"));
    cfg.paths.index_dir = Some(dir.path().join("idx"));
    let path = write_config(dir.path(), &cfg);
    let out = fsprp(&path, &["index"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));

    let no_config = Command::new(env!("CARGO_BIN_EXE_fsprp")).arg("index").output().unwrap();
    assert_eq!(no_config.status.code(), Some(1));
}

#[test]
fn partial_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (world, cfg, config) = fixture(dir.path());
    assert_eq!(fsprp(&config, &["index"]).status.code(), Some(0));
    let victim = world.queries.iter().last().unwrap().query_id.clone();
    let gold = cfg.backend.oracle.gold.clone().unwrap();
    let kept: String = std::fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(&format!("{victim} ")))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&gold, kept).unwrap();
    let out = fsprp(&config, &["rerank"]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["failed"], serde_json::json!([victim]));
    assert_eq!(summary["reranked"], 2);
}

#[test]
fn io_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, config) = fixture(dir.path());
    assert_eq!(fsprp(&config, &["index"]).status.code(), Some(0));
    let blocker = dir.path().join("not_a_dir");
    std::fs::write(&blocker, "file").unwrap();
    let target = blocker.join("out.run");
    let out = fsprp(&config, &["rerank", "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
