//! Run configuration: JSON config file schema, pool-manifest loading, and
//! backend construction.
//!
//! Config schema (all sections optional unless noted):
//! ```json
//! {
//!   "corpus": "path/to/corpus.jsonl",          // required
//!   "pool": "path/to/pool.json",               // required
//!   "output_dir": "path/to/out",               // required
//!   "llm": {"backend": "mock", "seed": 0},
//!   "pipeline": { ... PipelineConfig fields ... },
//!   "qpp": { ... QppConfig fields ... },
//!   "queries": "real_queries.jsonl",
//!   "qrels": "real_qrels.txt",
//!   "msmarco_perf": "perf.json",
//!   "workers": 8
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::QppConfig;
use crate::data::{self, Corpus, DrId, DrPool, Qrels, Query};
use crate::larmor::{PipelineConfig, Pool};
use crate::llm::{HttpLlm, LlmBackend, MockLlm};
use crate::retrieval::{HttpSearchBackend, LexicalIndex, RetrieverBackend};

pub const DEFAULT_API_KEY_ENV: &str = "DRSELECT_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error("unknown pool backend {0:?} (expected run_file, http or lexical)")]
    UnknownBackend(String),
    #[error("duplicate retriever id {0} in pool manifest")]
    DuplicateDr(DrId),
    #[error(transparent)]
    Data(#[from] data::DataError),
}

/// Which LLM answers the generation prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LlmSpec {
    Mock {
        #[serde(default)]
        seed: u64,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

impl Default for LlmSpec {
    fn default() -> Self {
        LlmSpec::Mock { seed: 0 }
    }
}

impl LlmSpec {
    pub fn build(&self) -> LlmBackend {
        match self {
            LlmSpec::Mock { seed } => LlmBackend::Mock(MockLlm { seed: *seed }),
            LlmSpec::Http {
                base_url,
                model,
                api_key_env,
            } => LlmBackend::Http(HttpLlm::new(base_url.clone(), api_key_env.clone(), model.clone())),
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub pool: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub llm: LlmSpec,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub qpp: QppConfig,
    #[serde(default)]
    pub queries: Option<PathBuf>,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
    #[serde(default)]
    pub msmarco_perf: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(&read(path)?).map_err(|e| ConfigError::Json {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn load_corpus(&self) -> Result<Corpus, ConfigError> {
        let name = self
            .corpus
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("corpus")
            .to_string();
        Ok(data::load_corpus(&read(&self.corpus)?, name)?)
    }

    pub fn load_real_queries(&self) -> Result<Option<Vec<Query>>, ConfigError> {
        match &self.queries {
            Some(path) => Ok(Some(data::load_queries(&read(path)?)?)),
            None => Ok(None),
        }
    }

    pub fn load_real_qrels(&self) -> Result<Option<Qrels>, ConfigError> {
        match &self.qrels {
            Some(path) => {
                let (qrels, _) = data::parse_qrels(&read(path)?)?;
                Ok(Some(qrels))
            }
            None => Ok(None),
        }
    }

    pub fn load_msmarco_perf(&self) -> Result<Option<BTreeMap<DrId, f64>>, ConfigError> {
        match &self.msmarco_perf {
            Some(path) => {
                let map = serde_json::from_str(&read(path)?).map_err(|e| ConfigError::Json {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                Ok(Some(map))
            }
            None => Ok(None),
        }
    }

    pub fn load_pool_manifest(&self) -> Result<DrPool, ConfigError> {
        let retrievers = serde_json::from_str(&read(&self.pool)?).map_err(|e| ConfigError::Json {
            path: self.pool.clone(),
            detail: e.to_string(),
        })?;
        Ok(DrPool { retrievers })
    }
}

pub const DEFAULT_SEARCH_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_SEARCH_RETRIES: usize = 2;

/// Instantiates the search backends of a pool manifest. Lexical entries index
/// the given corpus; run_file entries load their TREC file relative to the
/// manifest's directory when the path is not absolute.
pub fn build_pool(
    manifest: &DrPool,
    manifest_path: &Path,
    corpus: &Corpus,
) -> Result<Pool, ConfigError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut pool = Pool::new();
    for entry in &manifest.retrievers {
        let backend = match entry.backend.as_str() {
            "run_file" => {
                let path = base.join(&entry.path_or_url);
                let mut run = data::parse_run(&read(&path)?)?;
                run.dr_id = entry.dr_id.clone();
                RetrieverBackend::RunFileBacked { run }
            }
            "http" => RetrieverBackend::Http(HttpSearchBackend::new(
                entry.path_or_url.clone(),
                DEFAULT_SEARCH_TIMEOUT_MS,
                DEFAULT_SEARCH_RETRIES,
            )),
            "lexical" => {
                let mut index = LexicalIndex::build(corpus);
                if let Some(sigma) = entry.noise_sigma {
                    index = index.with_noise(sigma, entry.noise_seed.unwrap_or(0));
                }
                RetrieverBackend::Lexical(index)
            }
            other => return Err(ConfigError::UnknownBackend(other.to_string())),
        };
        if pool.insert(entry.dr_id.clone(), backend).is_some() {
            return Err(ConfigError::DuplicateDr(entry.dr_id.clone()));
        }
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"corpus": "c.jsonl", "pool": "p.json", "output_dir": "out"}"#,
        )
        .unwrap();
        assert_eq!(cfg.llm, LlmSpec::Mock { seed: 0 });
        assert_eq!(cfg.pipeline, PipelineConfig::default());
        assert_eq!(cfg.qpp, QppConfig::default());
        assert!(cfg.queries.is_none());
    }

    #[test]
    fn partial_pipeline_section_overrides_single_fields() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"corpus": "c", "pool": "p", "output_dir": "o",
                "pipeline": {"k": 20, "stage": "qf"},
                "llm": {"backend": "mock", "seed": 9}}"#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.k, 20);
        assert_eq!(cfg.pipeline.l, PipelineConfig::default().l);
        assert_eq!(cfg.pipeline.stage, crate::larmor::Stage::Qf);
        assert_eq!(cfg.llm, LlmSpec::Mock { seed: 9 });
    }

    #[test]
    fn pool_manifest_builds_all_backend_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        let run_path = tmp.path().join("r1.trec");
        let mut f = fs::File::create(&run_path).unwrap();
        writeln!(f, "q1 Q0 dA 1 2.0 r1").unwrap();
        let manifest_path = tmp.path().join("pool.json");
        fs::write(
            &manifest_path,
            r#"[
              {"dr_id": "files", "backend": "run_file", "path_or_url": "r1.trec"},
              {"dr_id": "lex", "backend": "lexical", "path_or_url": ""},
              {"dr_id": "noisy", "backend": "lexical", "path_or_url": "", "noise_sigma": 0.5, "noise_seed": 7}
            ]"#,
        )
        .unwrap();
        let mut corpus = Corpus::new("c");
        corpus
            .push(crate::data::Document {
                doc_id: "dA".into(),
                title: String::new(),
                text: "alpha".into(),
            })
            .unwrap();
        let cfg = RunConfig {
            corpus: PathBuf::new(),
            pool: manifest_path.clone(),
            output_dir: PathBuf::new(),
            llm: LlmSpec::default(),
            pipeline: PipelineConfig::default(),
            qpp: QppConfig::default(),
            queries: None,
            qrels: None,
            msmarco_perf: None,
            workers: None,
        };
        let manifest = cfg.load_pool_manifest().unwrap();
        let pool = build_pool(&manifest, &manifest_path, &corpus).unwrap();
        assert_eq!(pool.len(), 3);
        assert!(!pool["files"].supports_live_search());
        assert!(pool["lex"].supports_live_search());

        let bad = DrPool {
            retrievers: vec![crate::data::PoolEntry {
                dr_id: "x".into(),
                backend: "faiss".into(),
                path_or_url: String::new(),
                noise_sigma: None,
                noise_seed: None,
            }],
        };
        assert!(matches!(
            build_pool(&bad, &manifest_path, &corpus),
            Err(ConfigError::UnknownBackend(_))
        ));
    }
}
