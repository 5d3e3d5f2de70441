//! `fsprp`: build indexes, inspect example neighborhoods, rerank a
//! first-stage run with pairwise LLM preferences, and evaluate runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fewshot_prp::config::{ExperimentConfig, OOD_DEPTH};
use fewshot_prp::pipeline::{cmd_evaluate, cmd_index, cmd_neighbors, cmd_rerank};
use fewshot_prp::{Error, PromptMode, Selector};
use log::error;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "fsprp", version, about = "Few-shot pairwise reranking with LLM preferences")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Out-of-domain collections: rerank depth 20.
    Ood,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    shots: Option<usize>,
    #[arg(long, global = true)]
    pool_size: Option<usize>,
    #[arg(long, global = true)]
    neg_lo: Option<usize>,
    #[arg(long, global = true)]
    neg_hi: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_selector)]
    selector: Option<Selector>,
    /// Comma-separated training query ids for the static selector.
    #[arg(long, global = true, value_delimiter = ',')]
    static_ids: Option<Vec<String>>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<PromptMode>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Output run path for `rerank`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

fn parse_selector(s: &str) -> Result<Selector, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the corpus and training-query indexes.
    Index,
    /// Show the example neighborhood of a query.
    Neighbors {
        query_id: String,
        #[arg(long)]
        json: bool,
    },
    /// Rerank the first-stage run.
    Rerank,
    /// Score runs, test differences, and optionally relate gains to overlap.
    Evaluate {
        runs: Vec<PathBuf>,
        /// Zero-shot and few-shot runs for the locality table.
        #[arg(long, num_args = 2, value_names = ["ZERO_SHOT", "FEW_SHOT"])]
        locality: Option<Vec<PathBuf>>,
    },
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(Preset::Ood) = self.preset {
            cfg.depth = OOD_DEPTH;
        }
        let s = &mut cfg.sampler;
        if let Some(v) = self.shots {
            s.shots = v;
        }
        if let Some(v) = self.pool_size {
            s.pool_size = v;
        }
        if let Some(v) = self.neg_lo {
            s.neg_lo = v;
        }
        if let Some(v) = self.neg_hi {
            s.neg_hi = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.selector {
            cfg.selector = v;
        }
        if let Some(v) = &self.static_ids {
            cfg.static_ids = v.clone();
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = &self.output {
            cfg.paths.output_run = Some(v.clone());
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn run(cli: Cli) -> Result<u8, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cli.overrides.apply(&mut cfg);
    match cli.command {
        Command::Index => {
            println!("{}", json(&cmd_index(&cfg)?));
        }
        Command::Neighbors { query_id, json: as_json } => {
            let report = cmd_neighbors(&cfg, &query_id)?;
            if as_json {
                println!("{}", json(&report));
            } else {
                println!("probe\t{}\t{}", report.probe_query_id, report.probe_text);
                println!("rank\tquery_id\tsimilarity\tjaccard\ttext");
                for (i, n) in report.neighbors.iter().enumerate() {
                    println!("{}\t{}\t{:.4}\t{:.4}\t{}", i + 1, n.query_id, n.similarity, n.jaccard, n.text);
                }
                if let Some(j) = report.jaccard_mean {
                    println!("mean_jaccard\t{j:.4}");
                }
            }
        }
        Command::Rerank => {
            let summary = cmd_rerank(&cfg)?;
            println!("{}", json(&summary));
            if !summary.failed.is_empty() {
                error!("{} queries failed: {}", summary.failed.len(), summary.failed.join(", "));
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Evaluate { runs, locality } => {
            let pair = locality.as_ref().map(|l| (l[0].as_path(), l[1].as_path()));
            let out = cmd_evaluate(&cfg, &runs, pair)?;
            println!("system\tqueries\tndcg@10\tap@100");
            for (name, r) in &out.reports {
                println!("{name}\t{}\t{:.4}\t{:.4}", r.n_queries, r.means.ndcg_at_10, r.means.ap_at_100);
            }
            for s in &out.summary.significance {
                println!(
                    "{} vs {}\t{}\tt={:.4}\tp={:.4e}\t{}",
                    s.system_a,
                    s.system_b,
                    s.metric,
                    s.t_stat,
                    s.p_value,
                    if s.significant { "significant" } else { "not significant" }
                );
            }
            if let Some(t) = &out.locality {
                print!("{}", t.to_tsv());
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
