//! Canonical types and file I/O for corpora, queries, runs, qrels and
//! retriever-pool manifests.
//!
//! File formats:
//! - TREC run: `qid Q0 docid rank score runtag`, one entry per line.
//! - Qrels: `qid 0 docid grade`.
//! - Corpus: JSONL with `_id`, `title`, `text` (BEIR layout).
//! - Pool manifest: JSON array of `{"dr_id", "backend", "path_or_url", ...}`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type DocId = String;
pub type QueryId = String;
pub type DrId = String;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed {what}: {detail}")]
    Malformed {
        line: usize,
        what: &'static str,
        detail: String,
    },
    #[error("duplicate entry ({query_id}, {doc_id}) in run")]
    DuplicateRunEntry { query_id: QueryId, doc_id: DocId },
    #[error("duplicate document id {0} in corpus")]
    DuplicateDocId(DocId),
    #[error("sample size {k} exceeds corpus size {n}")]
    SampleTooLarge { k: usize, n: usize },
    #[error("non-finite score for ({query_id}, {doc_id})")]
    NonFiniteScore { query_id: QueryId, doc_id: DocId },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One document of the target corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub doc_id: DocId,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// An in-memory corpus with deterministic (insertion) iteration order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    docs: Vec<Document>,
    by_id: HashMap<DocId, usize>,
}

impl Corpus {
    pub fn new(name: impl Into<String>) -> Self {
        Corpus {
            name: name.into(),
            docs: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn push(&mut self, doc: Document) -> Result<(), DataError> {
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(DataError::DuplicateDocId(doc.doc_id));
        }
        self.by_id.insert(doc.doc_id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }
}

/// A query, optionally linked to the document it was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub query_id: QueryId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc_id: Option<DocId>,
}

/// One retrieved entry of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: DocId,
    pub score: f64,
    pub rank: usize,
}

/// Per-query ranked scored document lists produced by one retriever.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub dr_id: DrId,
    pub entries: BTreeMap<QueryId, Vec<RunEntry>>,
}

impl Run {
    pub fn new(dr_id: impl Into<DrId>) -> Self {
        Run {
            dr_id: dr_id.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Inserts a scored list for a query, re-sorting by score descending with
    /// ties broken by doc_id ascending, and rewriting ranks 1..n.
    pub fn insert_query(&mut self, query_id: impl Into<QueryId>, mut docs: Vec<(DocId, f64)>) {
        docs.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        let entries = docs
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        self.entries.insert(query_id.into(), entries);
    }

    pub fn doc_ids(&self, query_id: &str) -> Option<Vec<DocId>> {
        self.entries
            .get(query_id)
            .map(|es| es.iter().map(|e| e.doc_id.clone()).collect())
    }
}

/// Graded relevance judgments, keyed by (query_id, doc_id).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    pub judgments: BTreeMap<QueryId, BTreeMap<DocId, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous grade if the pair was already judged.
    pub fn set(
        &mut self,
        query_id: impl Into<QueryId>,
        doc_id: impl Into<DocId>,
        grade: u32,
    ) -> Option<u32> {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// All judgments for one query as doc_id -> grade.
    pub fn for_query(&self, query_id: &str) -> BTreeMap<&str, u32> {
        self.judgments
            .get(query_id)
            .map(|m| m.iter().map(|(d, &g)| (d.as_str(), g)).collect())
            .unwrap_or_default()
    }

    /// Distinct query ids, in sorted order.
    pub fn query_ids(&self) -> Vec<&str> {
        self.judgments.keys().map(|q| q.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Backend descriptor for one retriever of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub dr_id: DrId,
    pub backend: String,
    pub path_or_url: String,
    /// Additive Gaussian score noise, used by synthetic lexical pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

/// The candidate pool R = {R_1..R_n}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrPool {
    pub retrievers: Vec<PoolEntry>,
}

impl DrPool {
    pub fn dr_ids(&self) -> Vec<DrId> {
        self.retrievers.iter().map(|e| e.dr_id.clone()).collect()
    }
}

/// An ordering of retriever identifiers with method scores, the object every
/// selection method produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrRanking {
    pub method_id: String,
    pub entries: Vec<(DrId, f64)>,
}

impl DrRanking {
    /// Builds a ranking sorted by score descending, ties broken by dr_id
    /// ascending.
    pub fn from_scores(method_id: impl Into<String>, mut scores: Vec<(DrId, f64)>) -> Self {
        scores.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        DrRanking {
            method_id: method_id.into(),
            entries: scores,
        }
    }

    pub fn dr_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(d, _)| d.as_str()).collect()
    }

    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|(d, _)| d.as_str())
    }

    pub fn score(&self, dr_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(d, _)| d == dr_id)
            .map(|(_, s)| *s)
    }
}

/// Parses a TREC run file. Entries are re-sorted by score descending (ties by
/// doc_id ascending) and ranks rewritten 1..n; the stated rank column is
/// ignored.
pub fn parse_run(text: &str) -> Result<Run, DataError> {
    let mut per_query: BTreeMap<QueryId, Vec<(DocId, f64)>> = BTreeMap::new();
    let mut seen: HashMap<(QueryId, DocId), ()> = HashMap::new();
    let mut tag = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(DataError::Malformed {
                line: i + 1,
                what: "run line",
                detail: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let (qid, docid) = (fields[0].to_string(), fields[2].to_string());
        let score: f64 = fields[4].parse().map_err(|_| DataError::Malformed {
            line: i + 1,
            what: "run score",
            detail: fields[4].to_string(),
        })?;
        if !score.is_finite() {
            return Err(DataError::NonFiniteScore {
                query_id: qid,
                doc_id: docid,
            });
        }
        if seen.insert((qid.clone(), docid.clone()), ()).is_some() {
            return Err(DataError::DuplicateRunEntry {
                query_id: qid,
                doc_id: docid,
            });
        }
        if tag.is_empty() {
            tag = fields[5].to_string();
        }
        per_query.entry(qid).or_default().push((docid, score));
    }
    let mut run = Run::new(tag);
    for (qid, docs) in per_query {
        run.insert_query(qid, docs);
    }
    Ok(run)
}

/// Serializes a run in TREC format. Scores are printed with the shortest
/// round-trip decimal so `parse_run(write_run(r)) == r`.
pub fn write_run(run: &Run) -> String {
    let tag = if run.dr_id.is_empty() { "run" } else { &run.dr_id };
    let mut out = String::new();
    for (qid, entries) in &run.entries {
        for e in entries {
            writeln!(out, "{} Q0 {} {} {} {}", qid, e.doc_id, e.rank, e.score, tag).unwrap();
        }
    }
    out
}

/// Parses a qrels file. Duplicate (qid, docid) keys overwrite earlier values;
/// the returned counter reports how many overwrites happened.
pub fn parse_qrels(text: &str) -> Result<(Qrels, usize), DataError> {
    let mut qrels = Qrels::new();
    let mut overwrites = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(DataError::Malformed {
                line: i + 1,
                what: "qrels line",
                detail: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|_| DataError::Malformed {
            line: i + 1,
            what: "qrels grade",
            detail: fields[3].to_string(),
        })?;
        if qrels.set(fields[0], fields[2], grade).is_some() {
            overwrites += 1;
        }
    }
    Ok((qrels, overwrites))
}

/// Serializes qrels in `qid 0 docid grade` format.
pub fn write_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, docs) in &qrels.judgments {
        for (docid, grade) in docs {
            writeln!(out, "{} 0 {} {}", qid, docid, grade).unwrap();
        }
    }
    out
}

/// Loads a BEIR-style JSONL corpus (one `{"_id", "title", "text"}` object per
/// line), preserving file order.
pub fn load_corpus(text: &str, name: impl Into<String>) -> Result<Corpus, DataError> {
    let mut corpus = Corpus::new(name);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| DataError::Malformed {
            line: i + 1,
            what: "corpus line",
            detail: e.to_string(),
        })?;
        if doc.doc_id.is_empty() || doc.text.trim().is_empty() {
            return Err(DataError::Malformed {
                line: i + 1,
                what: "corpus line",
                detail: "empty _id or text".to_string(),
            });
        }
        corpus.push(doc)?;
    }
    Ok(corpus)
}

/// Loads a JSONL query file (`{"_id", "text"}` per line).
pub fn load_queries(text: &str) -> Result<Vec<Query>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(line).map_err(|e| DataError::Malformed {
            line: i + 1,
            what: "query line",
            detail: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        writeln!(out, "{}", serde_json::to_string(q).unwrap()).unwrap();
    }
    out
}

/// Uniform sample of k distinct documents, deterministic for a fixed seed.
pub fn sample_documents(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Document>, DataError> {
    if k == 0 || k > corpus.len() {
        return Err(DataError::SampleTooLarge { k, n: corpus.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = index_sample(&mut rng, corpus.len(), k);
    Ok(idx.iter().map(|i| corpus.docs()[i].clone()).collect())
}
