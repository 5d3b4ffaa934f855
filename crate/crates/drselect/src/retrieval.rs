//! Uniform search interface over retriever backends: precomputed run files, a
//! remote HTTP search service, and an in-process lexical retriever used for
//! deterministic tests. Also hosts the query-perturbation support for the
//! query-alteration baseline.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, DocId, Query, QueryId, Run};

pub const HTTP_TIMEOUT_ENV: &str = "DRSELECT_HTTP_TIMEOUT_MS";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("run has no entries for query {0}")]
    MissingQuery(QueryId),
    #[error("backend unavailable after {attempts} attempts: {detail}")]
    BackendUnavailable { attempts: usize, detail: String },
    #[error("empty query text")]
    EmptyQuery,
    #[error("top_k must be >= 1")]
    InvalidTopK,
    #[error("all {0} queries failed")]
    AllQueriesFailed(usize),
}

/// Ordered (doc_id, score) results for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub entries: Vec<(DocId, f64)>,
}

impl ScoredList {
    pub fn doc_ids(&self) -> Vec<DocId> {
        self.entries.iter().map(|(d, _)| d.clone()).collect()
    }
}

/// Lowercase, split on non-alphanumeric. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// TF-IDF index over a corpus with idf = ln(1 + N/df).
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    doc_ids: Vec<DocId>,
    doc_vectors: Vec<HashMap<String, f64>>,
    doc_norms: Vec<f64>,
    idf: HashMap<String, f64>,
    /// Additive Gaussian score noise; used to build synthetic retriever pools
    /// of controlled quality. None for the plain retriever.
    noise: Option<(f64, u64)>,
}

impl LexicalIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let n = corpus.len() as f64;
        let mut df: HashMap<String, usize> = HashMap::new();
        let token_lists: Vec<Vec<String>> = corpus
            .docs()
            .iter()
            .map(|d| tokenize(&format!("{} {}", d.title, d.text)))
            .collect();
        for tokens in &token_lists {
            let mut seen: Vec<&str> = tokens.iter().map(|t| t.as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        let idf: HashMap<String, f64> = df
            .into_iter()
            .map(|(t, d)| (t, (1.0 + n / d as f64).ln()))
            .collect();
        let mut doc_vectors = Vec::with_capacity(token_lists.len());
        let mut doc_norms = Vec::with_capacity(token_lists.len());
        for tokens in &token_lists {
            let mut tf: HashMap<String, f64> = HashMap::new();
            for t in tokens {
                *tf.entry(t.clone()).or_insert(0.0) += 1.0;
            }
            let vec: HashMap<String, f64> = tf
                .into_iter()
                .map(|(t, f)| {
                    let w = f * idf[&t];
                    (t, w)
                })
                .collect();
            let norm = vec.values().map(|w| w * w).sum::<f64>().sqrt();
            doc_vectors.push(vec);
            doc_norms.push(norm);
        }
        LexicalIndex {
            doc_ids: corpus.docs().iter().map(|d| d.doc_id.clone()).collect(),
            doc_vectors,
            doc_norms,
            idf,
            noise: None,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        if sigma > 0.0 {
            self.noise = Some((sigma, seed));
        }
        self
    }

    /// TF-IDF cosine of a query against every document.
    fn base_scores(&self, query_text: &str) -> Vec<f64> {
        let q_tokens = tokenize(query_text);
        let mut q_tf: HashMap<&str, f64> = HashMap::new();
        for t in &q_tokens {
            *q_tf.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        let q_vec: Vec<(&str, f64)> = q_tf
            .into_iter()
            .filter_map(|(t, f)| self.idf.get(t).map(|idf| (t, f * idf)))
            .collect();
        let q_norm = q_vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        self.doc_vectors
            .iter()
            .zip(&self.doc_norms)
            .map(|(dv, &dn)| {
                if q_norm == 0.0 || dn == 0.0 {
                    return 0.0;
                }
                let dot: f64 = q_vec
                    .iter()
                    .filter_map(|(t, w)| dv.get(*t).map(|dw| w * dw))
                    .sum();
                dot / (q_norm * dn)
            })
            .collect()
    }

    pub fn search(&self, query: &Query, top_k: usize) -> ScoredList {
        let mut scores = self.base_scores(&query.text);
        if let Some((sigma, seed)) = self.noise {
            for (i, s) in scores.iter_mut().enumerate() {
                let key = fnv1a(&[
                    query.text.as_bytes(),
                    b"\x00",
                    self.doc_ids[i].as_bytes(),
                ]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
                let normal = Normal::new(0.0, sigma).unwrap();
                *s += normal.sample(&mut rng);
            }
        }
        let keep_zero = self.noise.is_some();
        let mut entries: Vec<(DocId, f64)> = self
            .doc_ids
            .iter()
            .zip(scores)
            .filter(|(_, s)| keep_zero || *s > 0.0)
            .map(|(d, s)| (d.clone(), s))
            .collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        entries.truncate(top_k);
        ScoredList { entries }
    }
}

/// Stable 64-bit FNV-1a over byte chunks; keeps noise deterministic across
/// platforms and std versions.
fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[derive(Debug, Clone, Serialize)]
struct SearchRequest<'a> {
    query_id: &'a str,
    text: &'a str,
    top_k: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct SearchResponse {
    results: Vec<SearchResult>,
}

#[derive(Debug, Clone, Deserialize)]
struct SearchResult {
    doc_id: DocId,
    score: f64,
}

/// Remote search service speaking `POST {base_url}/search`.
#[derive(Debug)]
pub struct HttpSearchBackend {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: usize,
    /// Initial backoff; doubles per retry, no jitter.
    pub backoff_ms: u64,
    client: reqwest::blocking::Client,
    gate: ConcurrencyGate,
}

impl HttpSearchBackend {
    pub fn new(base_url: impl Into<String>, timeout_ms: u64, max_retries: usize) -> Self {
        let timeout_ms = std::env::var(HTTP_TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(timeout_ms);
        HttpSearchBackend {
            base_url: base_url.into(),
            timeout_ms,
            max_retries,
            backoff_ms: 250,
            client: reqwest::blocking::Client::new(),
            gate: ConcurrencyGate::new(8),
        }
    }

    pub fn with_backoff_ms(mut self, ms: u64) -> Self {
        self.backoff_ms = ms;
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.gate = ConcurrencyGate::new(cap);
        self
    }

    fn search(&self, query: &Query, top_k: usize) -> Result<ScoredList, RetrievalError> {
        let url = format!("{}/search", self.base_url.trim_end_matches('/'));
        let body = SearchRequest {
            query_id: &query.query_id,
            text: &query.text,
            top_k,
        };
        let attempts = self.max_retries + 1;
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.backoff_ms << (attempt - 1)));
            }
            let _slot = self.gate.acquire();
            let resp = self
                .client
                .post(&url)
                .timeout(Duration::from_millis(self.timeout_ms))
                .json(&body)
                .send();
            match resp {
                Ok(r) if r.status().is_success() => {
                    let parsed: SearchResponse = r.json().map_err(|e| {
                        RetrievalError::BackendUnavailable {
                            attempts: attempt + 1,
                            detail: format!("bad response body: {e}"),
                        }
                    })?;
                    return Ok(ScoredList {
                        entries: parsed
                            .results
                            .into_iter()
                            .take(top_k)
                            .map(|r| (r.doc_id, r.score))
                            .collect(),
                    });
                }
                Ok(r) => last_err = format!("status {}", r.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(RetrievalError::BackendUnavailable {
            attempts,
            detail: last_err,
        })
    }
}

/// Counting semaphore bounding in-flight HTTP requests.
#[derive(Debug)]
struct ConcurrencyGate {
    state: std::sync::Mutex<usize>,
    cond: std::sync::Condvar,
    cap: usize,
}

struct GateSlot<'a>(&'a ConcurrencyGate);

impl ConcurrencyGate {
    fn new(cap: usize) -> Self {
        ConcurrencyGate {
            state: std::sync::Mutex::new(0),
            cond: std::sync::Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> GateSlot<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.cap {
            in_flight = self.cond.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GateSlot(self)
    }
}

impl Drop for GateSlot<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.0.state.lock().unwrap();
        *in_flight -= 1;
        self.0.cond.notify_one();
    }
}

/// One retriever of the pool, behind a uniform search interface.
#[derive(Debug)]
pub enum RetrieverBackend {
    RunFileBacked { run: Run },
    Http(HttpSearchBackend),
    Lexical(LexicalIndex),
}

impl RetrieverBackend {
    /// True when the backend can answer queries it has never seen (needed by
    /// baselines that perturb queries).
    pub fn supports_live_search(&self) -> bool {
        !matches!(self, RetrieverBackend::RunFileBacked { .. })
    }

    pub fn search(&self, query: &Query, top_k: usize) -> Result<ScoredList, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        match self {
            RetrieverBackend::RunFileBacked { run } => {
                let entries = run
                    .entries
                    .get(&query.query_id)
                    .ok_or_else(|| RetrievalError::MissingQuery(query.query_id.clone()))?;
                Ok(ScoredList {
                    entries: entries
                        .iter()
                        .take(top_k)
                        .map(|e| (e.doc_id.clone(), e.score))
                        .collect(),
                })
            }
            RetrieverBackend::Http(http) => http.search(query, top_k),
            RetrieverBackend::Lexical(index) => Ok(index.search(query, top_k)),
        }
    }

    /// Searches every query. Per-query failures are collected; the call fails
    /// only if every query failed.
    pub fn batch_search(
        &self,
        queries: &[Query],
        top_k: usize,
    ) -> Result<BatchOutcome, RetrievalError> {
        let results: Vec<(QueryId, Result<ScoredList, RetrievalError>)> = queries
            .par_iter()
            .map(|q| (q.query_id.clone(), self.search(q, top_k)))
            .collect();
        let mut ok = BTreeMap::new();
        let mut failed = BTreeMap::new();
        for (qid, r) in results {
            match r {
                Ok(list) => {
                    ok.insert(qid, list);
                }
                Err(e) => {
                    failed.insert(qid, e.to_string());
                }
            }
        }
        if ok.is_empty() && !failed.is_empty() {
            return Err(RetrievalError::AllQueriesFailed(failed.len()));
        }
        Ok(BatchOutcome {
            results: ok,
            failures: failed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub results: BTreeMap<QueryId, ScoredList>,
    pub failures: BTreeMap<QueryId, String>,
}

/// Single-token-deletion query perturbation, round-robin over token positions
/// starting at `seed mod token_count`. Single-token queries are returned
/// unchanged.
pub fn alter_query(
    query: &Query,
    num_variants: usize,
    seed: u64,
) -> Result<Vec<Query>, RetrievalError> {
    let tokens: Vec<&str> = query.text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if tokens.len() == 1 {
        return Ok(vec![query.clone()]);
    }
    let n = tokens.len();
    let count = num_variants.min(n);
    let start = (seed % n as u64) as usize;
    let mut out = Vec::with_capacity(count);
    for v in 0..count {
        let drop_idx = (start + v) % n;
        let text: Vec<&str> = tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop_idx)
            .map(|(_, t)| *t)
            .collect();
        out.push(Query {
            query_id: format!("{}~alt{}", query.query_id, v + 1),
            text: text.join(" "),
            source_doc_id: query.source_doc_id.clone(),
        });
    }
    Ok(out)
}
