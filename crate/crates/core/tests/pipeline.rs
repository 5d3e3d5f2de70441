use std::path::{Path, PathBuf};

use fewshot_prp::analyzer::term_set;
use fewshot_prp::config::{ExperimentConfig, Stage};
use fewshot_prp::data::read_trec_run;
use fewshot_prp::eval::jaccard;
use fewshot_prp::pipeline::{cmd_evaluate, cmd_index, cmd_neighbors, cmd_rerank, QueryProvenance, QueryStatus};
use fewshot_prp::synthetic::{WorldParams, SyntheticWorld};
use fewshot_prp::{Error, PromptMode, RunList, Selector};

fn fixture(dir: &Path, queries: usize, depth: usize) -> (SyntheticWorld, ExperimentConfig) {
    let params = WorldParams { n_test_queries: queries, seed: 21, ..WorldParams::default() };
    let world = SyntheticWorld::generate(&params).unwrap();
    let cfg = world.write_fixture(dir, depth).unwrap();
    cmd_index(&cfg).unwrap();
    (world, cfg)
}

fn provenance(cfg: &ExperimentConfig) -> Vec<QueryProvenance> {
    std::fs::read_to_string(cfg.paths.provenance.as_ref().unwrap())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Gold order of the first `depth` first-stage documents, then the rest in
/// first-stage order.
fn expected_order(world: &SyntheticWorld, first_stage: &RunList, qid: &str, depth: usize) -> Vec<String> {
    let entries = first_stage.get(qid).unwrap();
    let mut top: Vec<&str> = entries.iter().take(depth).map(|e| e.doc_id.as_str()).collect();
    top.sort_by_key(|d| std::cmp::Reverse(world.utilities[qid][*d]));
    top.into_iter()
        .map(str::to_string)
        .chain(entries.iter().skip(depth).map(|e| e.doc_id.clone()))
        .collect()
}

#[test]
fn index_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path(), 3, 10);
    let a = cmd_index(&cfg).unwrap();
    let b = cmd_index(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.corpus_documents, 200);
    assert_eq!(a.training_queries, 100);
    assert_eq!(a.corpus_digest.len(), 64);
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.paths.corpus = Some(dir.path().join("nope.jsonl"));
    cfg.paths.training_queries = Some(dir.path().join("nope.tsv"));
    cfg.paths.index_dir = Some(dir.path().join("idx"));
    match cmd_index(&cfg) {
        Err(Error::Config(m)) => assert!(m.contains("corpus"), "{m}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn noiseless_oracle_rerank_recovers_gold_order() {
    let dir = tempfile::tempdir().unwrap();
    let depth = 8;
    let (world, mut cfg) = fixture(dir.path(), 4, 15);
    cfg.depth = depth;
    cfg.sampler.shots = 2;
    let summary = cmd_rerank(&cfg).unwrap();
    assert_eq!(summary.tag, "pairwise-lex-2s");
    assert_eq!((summary.queries, summary.reranked), (4, 4));
    assert!(summary.failed.is_empty());
    assert_eq!(summary.cache_misses as usize, 4 * depth * (depth - 1));

    let first_stage = read_trec_run(cfg.paths.first_stage_run.as_ref().unwrap()).unwrap();
    let run = read_trec_run(&summary.run_path).unwrap();
    for (qid, entries) in run.iter() {
        let got: Vec<String> = entries.iter().map(|e| e.doc_id.clone()).collect();
        assert_eq!(got, expected_order(&world, &first_stage, qid, depth), "query {qid}");
    }
    let text = std::fs::read_to_string(&summary.run_path).unwrap();
    assert!(text.lines().all(|l| l.ends_with("pairwise-lex-2s")));

    for p in provenance(&cfg) {
        assert_eq!(p.status, QueryStatus::Ok);
        assert_eq!(p.pairs, depth * (depth - 1) / 2);
        assert_eq!(p.examples.len(), 2);
        assert!(p.examples.iter().all(|e| p.neighborhood.contains(&e.query_id)));
        assert!(p.examples.iter().all(|e| e.negative_rank > 5 && e.negative_rank <= 50));
    }
}

#[test]
fn warm_cache_serves_every_call() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), 3, 6);
    cfg.backend.oracle.noise_rate = 0.4;
    let cold = cmd_rerank(&cfg).unwrap();
    let cold_run = std::fs::read(&cold.run_path).unwrap();
    let warm = cmd_rerank(&cfg).unwrap();
    assert_eq!(warm.cache_misses, 0);
    assert_eq!(warm.cache_hits, cold.cache_misses);
    assert_eq!(std::fs::read(&warm.run_path).unwrap(), cold_run);
    assert!(provenance(&cfg).iter().all(|p| p.cache_hit_rate == 1.0));
}

#[test]
fn failing_query_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (world, mut cfg) = fixture(dir.path(), 3, 6);
    // drop one query's gold so its oracle calls fail
    let victim = world.queries.iter().next().unwrap().query_id.clone();
    let gold = cfg.backend.oracle.gold.clone().unwrap();
    let kept: String = std::fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(&format!("{victim} ")))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&gold, kept).unwrap();
    cfg.backend.cache = None;
    let s = cmd_rerank(&cfg).unwrap();
    assert_eq!(s.failed, vec![victim.clone()]);
    assert_eq!(s.reranked, 2);
    let failed: Vec<QueryProvenance> = provenance(&cfg).into_iter().filter(|p| p.status == QueryStatus::Failed).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].error.as_deref().unwrap().contains(&victim));
}

#[test]
fn zero_shot_pointwise_and_setwise() {
    let dir = tempfile::tempdir().unwrap();
    let depth = 12;
    let (world, mut cfg) = fixture(dir.path(), 2, depth);
    cfg.depth = depth;
    cfg.sampler.shots = 0;
    let first_stage = read_trec_run(cfg.paths.first_stage_run.as_ref().unwrap()).unwrap();

    // pointwise against graded judgments: sorted by grade, first-stage order within a grade
    cfg.mode = PromptMode::Pointwise;
    cfg.backend.oracle.gold = cfg.paths.qrels.clone();
    cfg.paths.output_run = Some(dir.path().join("pointwise.run"));
    let s = cmd_rerank(&cfg).unwrap();
    assert_eq!(s.tag, "pointwise-0s");
    for (qid, entries) in read_trec_run(&s.run_path).unwrap().iter() {
        let mut want: Vec<&str> = first_stage.get(qid).unwrap().iter().take(depth).map(|e| e.doc_id.as_str()).collect();
        want.sort_by_key(|d| std::cmp::Reverse(world.qrels.grade(qid, d)));
        let got: Vec<&str> = entries.iter().take(depth).map(|e| e.doc_id.as_str()).collect();
        assert_eq!(got, want, "pointwise {qid}");
    }

    // setwise fixes the top ten positions
    cfg.mode = PromptMode::Setwise;
    cfg.backend.oracle.gold = Some(dir.path().join("gold.qrels"));
    cfg.paths.output_run = Some(dir.path().join("setwise.run"));
    let s = cmd_rerank(&cfg).unwrap();
    assert_eq!(s.tag, "setwise-0s");
    for (qid, entries) in read_trec_run(&s.run_path).unwrap().iter() {
        let got: Vec<String> = entries.iter().take(10).map(|e| e.doc_id.clone()).collect();
        assert_eq!(got, expected_order(&world, &first_stage, qid, depth)[..10], "setwise {qid}");
    }
}

#[test]
fn neighbors_lexical_static_and_semantic() {
    let dir = tempfile::tempdir().unwrap();
    let (world, mut cfg) = fixture(dir.path(), 2, 10);
    let probe = world.queries.iter().next().unwrap().clone();

    let lex = cmd_neighbors(&cfg, &probe.query_id).unwrap();
    assert!((1..=cfg.sampler.pool_size).contains(&lex.neighbors.len()));
    let probe_terms = term_set(&probe.text);
    for n in &lex.neighbors {
        assert!(term_set(&n.text).iter().any(|t| probe_terms.contains(t)));
        assert!((n.jaccard - jaccard(&probe.text, &n.text)).abs() < 1e-12);
    }
    assert!(lex.neighbors.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    let mean = lex.neighbors.iter().map(|n| n.jaccard).sum::<f64>() / lex.neighbors.len() as f64;
    assert!((lex.jaccard_mean.unwrap() - mean).abs() < 1e-12);

    // a training query never lists itself
    let t0 = world.training_queries.iter().next().unwrap().query_id.clone();
    let own = cmd_neighbors(&cfg, &t0).unwrap();
    assert!(own.neighbors.iter().all(|n| n.query_id != t0));

    cfg.selector = Selector::Static;
    cfg.static_ids = vec![t0.clone(), "t005".into(), "t009".into()];
    let st = cmd_neighbors(&cfg, &t0).unwrap();
    let ids: Vec<&str> = st.neighbors.iter().map(|n| n.query_id.as_str()).collect();
    assert_eq!(ids, ["t005", "t009"]);

    // embeddings that make t010 the closest training query to every probe
    let emb_path = dir.path().join("emb.jsonl");
    let qemb_path = dir.path().join("qemb.jsonl");
    let line = |id: &str, v: [f64; 2]| format!("{}\n", serde_json::json!({"id": id, "vector": v}));
    let mut emb = String::new();
    for q in &world.training_queries {
        let v = if q.query_id == "t010" { [1.0, 0.0] } else { [0.0, 1.0] };
        emb.push_str(&line(&q.query_id, v));
    }
    std::fs::write(&emb_path, emb).unwrap();
    std::fs::write(&qemb_path, line(&probe.query_id, [0.8, 0.6])).unwrap();
    cfg.selector = Selector::Sem;
    cfg.paths.embeddings = Some(emb_path);
    cfg.paths.query_embeddings = Some(qemb_path);
    let sem = cmd_neighbors(&cfg, &probe.query_id).unwrap();
    assert_eq!(sem.neighbors[0].query_id, "t010");
    assert!((sem.neighbors[0].similarity - 0.8).abs() < 1e-12);
}

#[test]
fn evaluate_ideal_run_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let (world, cfg) = fixture(dir.path(), 5, 10);
    let ideal_path = dir.path().join("ideal.run");
    let mut lines = String::new();
    for (qid, u) in &world.utilities {
        let mut docs: Vec<(&String, &u32)> = u.iter().collect();
        docs.sort_by(|a, b| b.1.cmp(a.1));
        for (i, (d, _)) in docs.iter().enumerate() {
            lines.push_str(&format!("{qid} Q0 {d} {} {} ideal\n", i + 1, 1000 - i));
        }
    }
    std::fs::write(&ideal_path, lines).unwrap();
    let bm25: PathBuf = cfg.paths.first_stage_run.clone().unwrap();

    let out = cmd_evaluate(&cfg, &[ideal_path.clone(), bm25.clone(), bm25.clone()], None).unwrap();
    let names: Vec<&str> = out.reports.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["ideal", "bm25", "bm25#2"]);
    let ideal = &out.reports[0].1;
    assert_eq!(ideal.n_queries, 5);
    assert!((ideal.means.ndcg_at_10 - 1.0).abs() < 1e-12);
    assert!((ideal.means.ap_at_100 - 1.0).abs() < 1e-12);
    assert!(out.reports[1].1.means.ndcg_at_10 < 1.0);

    let same: Vec<_> = out
        .summary
        .significance
        .iter()
        .filter(|s| s.system_a == "bm25" && s.system_b == "bm25#2")
        .collect();
    assert_eq!(same.len(), 2);
    assert!(same.iter().all(|s| !s.significant && s.p_value == 1.0));

    let reports = cfg.paths.report_dir.clone().unwrap();
    assert!(reports.join("ideal.tsv").exists());
    assert!(reports.join("summary.json").exists());
}

#[test]
fn evaluate_locality_table() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), 4, 8);
    cfg.depth = 8;
    cfg.backend.oracle.noise_rate = 0.3;
    cfg.sampler.shots = 0;
    cfg.paths.output_run = Some(dir.path().join("zero.run"));
    let zero = cmd_rerank(&cfg).unwrap().run_path;
    cfg.sampler.shots = 1;
    cfg.paths.output_run = Some(dir.path().join("few.run"));
    let few = cmd_rerank(&cfg).unwrap().run_path;

    let out = cmd_evaluate(&cfg, &[zero.clone(), few.clone()], Some((&zero, &few))).unwrap();
    let table = out.locality.unwrap();
    assert_eq!(table.rows.len(), 4);
    let few_report = &out.reports[1].1;
    let mean = table.rows.iter().map(|r| r.jaccard).sum::<f64>() / 4.0;
    assert!((few_report.jaccard_mean.unwrap() - mean).abs() < 1e-12);
    assert!(out.reports[0].1.jaccard_mean.is_none());
    for r in &table.rows {
        let gain = few_report.per_query[&r.query_id].ndcg_at_10 - out.reports[0].1.per_query[&r.query_id].ndcg_at_10;
        assert!((r.delta_ndcg - gain).abs() < 1e-12);
    }
    assert!(cfg.paths.report_dir.unwrap().join("locality.tsv").exists());
}

#[test]
fn rerank_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), 1, 5);
    cfg.depth = 1;
    assert!(matches!(cmd_rerank(&cfg), Err(Error::Config(_))));
    cfg.depth = 5;
    cfg.selector = Selector::Static;
    assert!(matches!(cfg.validate(Stage::Rerank), Err(Error::Config(m)) if m.contains("static")));
}
