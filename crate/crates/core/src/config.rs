//! Declarative experiment configuration (JSON).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icl::{SamplerConfig, Selector};
use crate::prompt::{PromptMode, DEFAULT_TRUNCATION_BUDGET};

/// Depth used for out-of-domain collections.
pub const OOD_DEPTH: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub training_queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub training_qrels: Option<PathBuf>,
    pub first_stage_run: Option<PathBuf>,
    /// Training-query embeddings (JSONL `{id, vector}`).
    pub embeddings: Option<PathBuf>,
    /// Test-query embeddings, same format.
    pub query_embeddings: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub output_run: Option<PathBuf>,
    pub provenance: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Qrels-format file of gold utilities; defaults to `paths.qrels`.
    pub gold: Option<PathBuf>,
    pub noise_rate: f64,
    pub seed: u64,
    pub locality_discount: f64,
    /// Utility of documents the gold file does not mention; unset makes
    /// them an error.
    pub unjudged_utility: Option<f64>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            gold: None,
            noise_rate: 0.0,
            seed: 0,
            locality_discount: 1.0,
            unjudged_utility: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Falls back to `PRP_BACKEND_URL`.
    pub url: Option<String>,
    /// Environment variable holding the bearer key.
    pub key_env: String,
    pub model: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// In-flight request cap and query worker count.
    pub parallelism: usize,
    pub top_logprobs: u32,
    pub cache: Option<PathBuf>,
    /// Embedding endpoint used for probes missing from `query_embeddings`.
    pub embedding_url: Option<String>,
    pub oracle: OracleSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Http,
            url: None,
            key_env: crate::backend::ENV_BACKEND_KEY.to_string(),
            model: None,
            timeout_secs: 30.0,
            max_retries: 3,
            parallelism: 8,
            top_logprobs: 5,
            cache: None,
            embedding_url: None,
            oracle: OracleSettings::default(),
        }
    }
}

impl BackendSettings {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub mode: PromptMode,
    pub selector: Selector,
    pub static_ids: Vec<String>,
    pub depth: usize,
    pub set_size: usize,
    pub sampler: SamplerConfig,
    /// Grade at which evaluation counts a document relevant for AP.
    pub eval_threshold: u32,
    pub alpha: f64,
    pub truncation_budget: usize,
    pub context_budget: Option<usize>,
    pub backend: BackendSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            mode: PromptMode::Pairwise,
            selector: Selector::Lex,
            static_ids: Vec::new(),
            depth: 100,
            set_size: 4,
            sampler: SamplerConfig::default(),
            eval_threshold: 2,
            alpha: 0.05,
            truncation_budget: DEFAULT_TRUNCATION_BUDGET,
            context_budget: None,
            backend: BackendSettings::default(),
        }
    }
}

/// Which inputs a command needs before it starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Index,
    Neighbors,
    Rerank,
    Evaluate,
}

fn require<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{name} is not configured")))?;
    Ok(p)
}

fn require_existing<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    let p = require(p, name)?;
    if !p.exists() {
        return Err(Error::Config(format!("paths.{name} does not exist: {}", p.display())));
    }
    Ok(p)
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative_to(base);
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.corpus,
            &mut p.queries,
            &mut p.training_queries,
            &mut p.qrels,
            &mut p.training_qrels,
            &mut p.first_stage_run,
            &mut p.embeddings,
            &mut p.query_embeddings,
            &mut p.template,
            &mut p.index_dir,
            &mut p.output_run,
            &mut p.provenance,
            &mut p.report_dir,
            &mut self.backend.cache,
            &mut self.backend.oracle.gold,
        ] {
            if let Some(rel) = slot.as_ref().filter(|r| r.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
    }

    /// Run tag naming the system, e.g. `pairwise-lex-1s` or `pairwise-0s`.
    pub fn run_tag(&self) -> String {
        if self.sampler.shots == 0 {
            format!("{}-0s", self.mode)
        } else {
            format!("{}-{}-{}s", self.mode, self.selector, self.sampler.shots)
        }
    }

    pub fn index_dir(&self) -> Result<&Path> {
        require(&self.paths.index_dir, "index_dir")
    }

    pub fn validate(&self, stage: Stage) -> Result<()> {
        let p = &self.paths;
        match stage {
            Stage::Index => {
                require_existing(&p.corpus, "corpus")?;
                require_existing(&p.training_queries, "training_queries")?;
                self.index_dir()?;
                if self.selector == Selector::Sem {
                    require_existing(&p.embeddings, "embeddings")?;
                }
                if let Some(e) = &p.embeddings {
                    if !e.exists() {
                        return Err(Error::Config(format!("paths.embeddings does not exist: {}", e.display())));
                    }
                }
            }
            Stage::Neighbors => {
                self.index_dir()?;
                require_existing(&p.training_queries, "training_queries")?;
                self.validate_selector()?;
            }
            Stage::Rerank => {
                self.index_dir()?;
                for (v, name) in [
                    (&p.corpus, "corpus"),
                    (&p.queries, "queries"),
                    (&p.training_queries, "training_queries"),
                    (&p.training_qrels, "training_qrels"),
                    (&p.first_stage_run, "first_stage_run"),
                ] {
                    require_existing(v, name)?;
                }
                require(&p.output_run, "output_run")?;
                require(&p.provenance, "provenance")?;
                if let Some(t) = &p.template {
                    if !t.exists() {
                        return Err(Error::Config(format!("paths.template does not exist: {}", t.display())));
                    }
                }
                self.validate_selector()?;
                self.sampler.validate()?;
                if self.depth < 2 {
                    return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
                }
                if self.mode == PromptMode::Setwise && !(2..=crate::prompt::MAX_SET_SIZE).contains(&self.set_size) {
                    return Err(Error::Config(format!("set_size must be in 2..=10, got {}", self.set_size)));
                }
                if self.backend.parallelism == 0 {
                    return Err(Error::Config("backend.parallelism must be >= 1".into()));
                }
                if !(self.backend.timeout_secs > 0.0 && self.backend.timeout_secs.is_finite()) {
                    return Err(Error::Config("backend.timeout_secs must be positive".into()));
                }
                if self.backend.kind == BackendKind::Oracle && self.backend.oracle.gold.is_none() {
                    require_existing(&p.qrels, "qrels")?;
                }
            }
            Stage::Evaluate => {
                require_existing(&p.qrels, "qrels")?;
            }
        }
        Ok(())
    }

    fn validate_selector(&self) -> Result<()> {
        match self.selector {
            Selector::Sem => {
                require_existing(&self.paths.embeddings, "embeddings")?;
                if self.paths.query_embeddings.is_none() && self.backend.embedding_url.is_none() {
                    return Err(Error::Config(
                        "semantic selector needs paths.query_embeddings or backend.embedding_url".into(),
                    ));
                }
            }
            Selector::Static if self.static_ids.is_empty() && self.sampler.shots > 0 => {
                return Err(Error::Config("static selector needs static_ids".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_in_domain_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.depth, 100);
        assert_eq!(c.sampler.pool_size, 10);
        assert_eq!((c.sampler.neg_lo, c.sampler.neg_hi), (100, 200));
        assert_eq!(c.eval_threshold, 2);
        assert_eq!(c.run_tag(), "pairwise-lex-1s");
    }

    #[test]
    fn zero_shot_tag() {
        let mut c = ExperimentConfig::default();
        c.sampler.shots = 0;
        assert_eq!(c.run_tag(), "pairwise-0s");
    }

    #[test]
    fn relative_paths_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(
            &path,
            r#"{"paths":{"corpus":"c.jsonl","index_dir":"/abs/idx"},"mode":"setwise","sampler":{"shots":3}}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.paths.corpus.as_deref(), Some(dir.path().join("c.jsonl").as_path()));
        assert_eq!(c.paths.index_dir.as_deref(), Some(Path::new("/abs/idx")));
        assert_eq!(c.mode, PromptMode::Setwise);
        assert_eq!(c.sampler.shots, 3);
        assert_eq!(c.sampler.pool_size, 10);
    }

    #[test]
    fn unknown_keys_and_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, r#"{"depht": 10}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));

        let mut c = ExperimentConfig::default();
        c.paths.corpus = Some(dir.path().join("missing.jsonl"));
        c.paths.index_dir = Some(dir.path().join("idx"));
        assert!(matches!(c.validate(Stage::Index), Err(Error::Config(m)) if m.contains("corpus")));
    }
}
