//! Run-directory layout and checkpointed stage execution.
//!
//! Layout: `queries.jsonl`, `runs/{dr_id}.trec`, `fused.trec`,
//! `pseudo_qrels.txt`, `reference_lists.jsonl`, `ranking_{stage}.json`.
//! A stage whose artifact file already exists is loaded instead of recomputed,
//! so a crashed pipeline resumes from the last completed stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Corpus, DocId, DrId, DrRanking, Qrels, Query, QueryId, Run};
use crate::fusion::FusedRanking;
use crate::larmor::{self, PipelineConfig, PipelineError, Pool, Stage};
use crate::llm::LlmBackend;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceLine {
    query_id: QueryId,
    doc_ids: Vec<DocId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingLine {
    dr_id: DrId,
    score: f64,
    rank: usize,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn queries_path(&self) -> PathBuf {
        self.root.join("queries.jsonl")
    }

    pub fn run_path(&self, dr_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{dr_id}.trec"))
    }

    pub fn fused_path(&self) -> PathBuf {
        self.root.join("fused.trec")
    }

    pub fn qrels_path(&self) -> PathBuf {
        self.root.join("pseudo_qrels.txt")
    }

    pub fn reference_lists_path(&self) -> PathBuf {
        self.root.join("reference_lists.jsonl")
    }

    pub fn ranking_path(&self, stage_name: &str) -> PathBuf {
        self.root.join(format!("ranking_{stage_name}.json"))
    }

    fn write(&self, path: &Path, content: &str) -> Result<(), PipelineError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(data::DataError::Io)?;
        }
        fs::write(path, content).map_err(data::DataError::Io)?;
        Ok(())
    }

    pub fn save_queries(&self, queries: &[Query]) -> Result<(), PipelineError> {
        self.write(&self.queries_path(), &data::write_queries(queries))
    }

    pub fn load_queries(&self) -> Result<Option<Vec<Query>>, PipelineError> {
        let path = self.queries_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
        Ok(Some(data::load_queries(&text)?))
    }

    pub fn save_runs(&self, runs: &BTreeMap<DrId, Run>) -> Result<(), PipelineError> {
        for (dr_id, run) in runs {
            self.write(&self.run_path(dr_id), &data::write_run(run))?;
        }
        Ok(())
    }

    /// Loads the per-retriever runs; None unless every pool member has a file.
    pub fn load_runs(&self, pool: &Pool) -> Result<Option<BTreeMap<DrId, Run>>, PipelineError> {
        let mut runs = BTreeMap::new();
        for dr_id in pool.keys() {
            let path = self.run_path(dr_id);
            if !path.exists() {
                return Ok(None);
            }
            let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
            let mut run = data::parse_run(&text)?;
            run.dr_id = dr_id.clone();
            runs.insert(dr_id.clone(), run);
        }
        Ok(Some(runs))
    }

    pub fn save_fused(
        &self,
        fused: &BTreeMap<QueryId, FusedRanking>,
    ) -> Result<(), PipelineError> {
        let mut run = Run::new("fused");
        for (qid, ranking) in fused {
            run.insert_query(qid.clone(), ranking.entries.clone());
        }
        self.write(&self.fused_path(), &data::write_run(&run))
    }

    pub fn load_fused(&self) -> Result<Option<BTreeMap<QueryId, FusedRanking>>, PipelineError> {
        let path = self.fused_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
        let run = data::parse_run(&text)?;
        let mut fused = BTreeMap::new();
        for (qid, entries) in run.entries {
            fused.insert(
                qid,
                FusedRanking {
                    entries: entries.into_iter().map(|e| (e.doc_id, e.score)).collect(),
                },
            );
        }
        Ok(Some(fused))
    }

    pub fn save_pseudo_qrels(&self, qrels: &Qrels) -> Result<(), PipelineError> {
        self.write(&self.qrels_path(), &data::write_qrels(qrels))
    }

    pub fn load_pseudo_qrels(&self) -> Result<Option<Qrels>, PipelineError> {
        let path = self.qrels_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
        let (qrels, _) = data::parse_qrels(&text)?;
        Ok(Some(qrels))
    }

    pub fn save_reference_lists(
        &self,
        lists: &BTreeMap<QueryId, Vec<DocId>>,
    ) -> Result<(), PipelineError> {
        let mut out = String::new();
        for (query_id, doc_ids) in lists {
            let line = ReferenceLine {
                query_id: query_id.clone(),
                doc_ids: doc_ids.clone(),
            };
            out.push_str(&serde_json::to_string(&line).map_err(data::DataError::Json)?);
            out.push('\n');
        }
        self.write(&self.reference_lists_path(), &out)
    }

    pub fn load_reference_lists(
        &self,
    ) -> Result<Option<BTreeMap<QueryId, Vec<DocId>>>, PipelineError> {
        let path = self.reference_lists_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
        let mut lists = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: ReferenceLine =
                serde_json::from_str(line).map_err(data::DataError::Json)?;
            lists.insert(parsed.query_id, parsed.doc_ids);
        }
        Ok(Some(lists))
    }

    pub fn save_ranking(&self, ranking: &DrRanking, stage_name: &str) -> Result<(), PipelineError> {
        let lines: Vec<RankingLine> = ranking
            .entries
            .iter()
            .enumerate()
            .map(|(i, (dr_id, score))| RankingLine {
                dr_id: dr_id.clone(),
                score: *score,
                rank: i + 1,
            })
            .collect();
        let json = serde_json::to_string_pretty(&lines).map_err(data::DataError::Json)?;
        self.write(&self.ranking_path(stage_name), &format!("{json}\n"))
    }

    pub fn load_ranking(&self, path: &Path) -> Result<DrRanking, PipelineError> {
        let text = fs::read_to_string(path).map_err(data::DataError::Io)?;
        let lines: Vec<RankingLine> = serde_json::from_str(&text).map_err(data::DataError::Json)?;
        let method_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("ranking_"))
            .unwrap_or("unknown")
            .to_string();
        Ok(DrRanking {
            method_id,
            entries: lines.into_iter().map(|l| (l.dr_id, l.score)).collect(),
        })
    }
}

/// Checkpoint-aware execution of the pipeline stages against one run
/// directory. With `force` set, existing artifacts are recomputed.
pub struct StagedPipeline<'a> {
    pub corpus: &'a Corpus,
    pub pool: &'a Pool,
    pub config: &'a PipelineConfig,
    pub backend: &'a LlmBackend,
    pub dir: RunDir,
    pub force: bool,
}

impl StagedPipeline<'_> {
    pub fn ensure_queries(&self) -> Result<Vec<Query>, PipelineError> {
        if !self.force {
            if let Some(queries) = self.dir.load_queries()? {
                return Ok(queries);
            }
        }
        let (queries, _) = larmor::generate_pseudo_queries(self.corpus, self.config, self.backend)?;
        self.dir.save_queries(&queries)?;
        Ok(queries)
    }

    pub fn ensure_runs(&self, queries: &[Query]) -> Result<BTreeMap<DrId, Run>, PipelineError> {
        if !self.force {
            if let Some(runs) = self.dir.load_runs(self.pool)? {
                return Ok(runs);
            }
        }
        let runs = larmor::retrieve_all(queries, self.pool, self.config)?;
        self.dir.save_runs(&runs)?;
        Ok(runs)
    }

    pub fn ensure_fused(
        &self,
        queries: &[Query],
        runs: &BTreeMap<DrId, Run>,
    ) -> Result<BTreeMap<QueryId, FusedRanking>, PipelineError> {
        if !self.force {
            if let Some(fused) = self.dir.load_fused()? {
                return Ok(fused);
            }
        }
        let fused = larmor::build_fused(queries, runs, self.config)?;
        self.dir.save_fused(&fused)?;
        Ok(fused)
    }

    pub fn ensure_pseudo_qrels(
        &self,
        queries: &[Query],
        fused: &BTreeMap<QueryId, FusedRanking>,
    ) -> Result<Qrels, PipelineError> {
        if !self.force {
            if let Some(qrels) = self.dir.load_pseudo_qrels()? {
                return Ok(qrels);
            }
        }
        let (qrels, _, _) =
            larmor::judge_fused(queries, fused, self.corpus, self.backend, self.config)?;
        self.dir.save_pseudo_qrels(&qrels)?;
        Ok(qrels)
    }

    pub fn ensure_reference_lists(
        &self,
        queries: &[Query],
        fused: &BTreeMap<QueryId, FusedRanking>,
    ) -> Result<BTreeMap<QueryId, Vec<DocId>>, PipelineError> {
        if !self.force {
            if let Some(lists) = self.dir.load_reference_lists()? {
                return Ok(lists);
            }
        }
        let lists =
            larmor::rerank_fused(queries, fused, self.corpus, self.backend, self.config)?;
        self.dir.save_reference_lists(&lists)?;
        Ok(lists)
    }

    /// Runs the pipeline up to the configured stage, reusing every existing
    /// artifact, and writes the stage ranking files.
    pub fn select(&self) -> Result<DrRanking, PipelineError> {
        if self.pool.len() < 2 {
            return Err(PipelineError::PoolTooSmall(self.pool.len()));
        }
        if self.config.m > self.config.retrieval_depth {
            return Err(PipelineError::DepthExceeded {
                m: self.config.m,
                retrieval_depth: self.config.retrieval_depth,
            });
        }
        let queries = self.ensure_queries()?;
        let runs = self.ensure_runs(&queries)?;
        if self.config.stage == Stage::Q {
            let ranking = larmor::stage_q(&queries, &runs, self.config)?;
            self.dir.save_ranking(&ranking, "q")?;
            return Ok(ranking);
        }
        let fused = self.ensure_fused(&queries, &runs)?;
        if self.config.stage == Stage::Qf {
            let ranking = larmor::stage_qf(&runs, &fused, self.config)?;
            self.dir.save_ranking(&ranking, "qf")?;
            return Ok(ranking);
        }
        let qfj = if matches!(self.config.stage, Stage::Qfj | Stage::Full) {
            let qrels = self.ensure_pseudo_qrels(&queries, &fused)?;
            let ranking = larmor::stage_qfj(&runs, &qrels, self.config)?;
            self.dir.save_ranking(&ranking, "qfj")?;
            Some(ranking)
        } else {
            None
        };
        let qfr = if matches!(self.config.stage, Stage::Qfr | Stage::Full) {
            let lists = self.ensure_reference_lists(&queries, &fused)?;
            let ranking = larmor::stage_qfr(&runs, &lists, self.config)?;
            self.dir.save_ranking(&ranking, "qfr")?;
            Some(ranking)
        } else {
            None
        };
        match self.config.stage {
            Stage::Qfj => Ok(qfj.unwrap()),
            Stage::Qfr => Ok(qfr.unwrap()),
            Stage::Full => {
                let fused_ranking =
                    crate::fusion::fuse_dr_rankings(&[qfj.unwrap(), qfr.unwrap()], self.config.k_rrf)?;
                let ranking = DrRanking {
                    method_id: "larmor".to_string(),
                    entries: fused_ranking.entries,
                };
                self.dir.save_ranking(&ranking, "larmor")?;
                Ok(ranking)
            }
            Stage::Q | Stage::Qf => unreachable!(),
        }
    }
}
