//! Prompt construction and LLM invocation for the three generation tasks:
//! pseudo-query generation, relevance judging, and setwise reranking.
//!
//! Two backends: an HTTP completion service (`POST {base_url}/generate`) and a
//! deterministic mock. The mock creates a closed world in which pipeline
//! correctness is checkable without a model: query generation emits the
//! document's top terms by frequency, judging thresholds token overlap at 0.5,
//! and setwise comparison picks the candidate with the highest token overlap.

use std::collections::HashSet;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DocId, Document, Query};
use crate::retrieval::tokenize;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("llm backend failure for {context}: {detail}")]
    Backend { context: String, detail: String },
    #[error("template for task {task:?} is missing placeholder {placeholder}")]
    MissingPlaceholder { task: PromptTask, placeholder: String },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("set_size must be >= 2, got {0}")]
    InvalidSetSize(usize),
    #[error("duplicate candidate {0}")]
    DuplicateCandidate(DocId),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTask {
    QueryGen,
    Judge,
    Setwise,
}

impl PromptTask {
    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptTask::QueryGen => &["{document}"],
            PromptTask::Judge => &["{query}", "{document}"],
            PromptTask::Setwise => &["{query}", "{candidates}"],
        }
    }
}

/// A prompt template with `{placeholder}` slots, one asset per (task, domain).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: PromptTask,
    pub template: String,
}

impl PromptTemplate {
    pub fn new(task: PromptTask, template: impl Into<String>) -> Result<Self, LlmError> {
        let template = template.into();
        for ph in task.required_placeholders() {
            if !template.contains(ph) {
                return Err(LlmError::MissingPlaceholder {
                    task,
                    placeholder: ph.to_string(),
                });
            }
        }
        Ok(PromptTemplate { task, template })
    }

    pub fn from_file(task: PromptTask, path: &std::path::Path) -> Result<Self, LlmError> {
        PromptTemplate::new(task, std::fs::read_to_string(path)?.trim().to_string())
    }

    /// Built-in per-domain assets. Domains: wikipedia_qa, scientific,
    /// argument, news (query generation); judging and setwise share one
    /// default each.
    pub fn builtin(task: PromptTask, domain: &str) -> Result<Self, LlmError> {
        let text = match (task, domain) {
            (PromptTask::QueryGen, "wikipedia_qa") => {
                include_str!("../prompts/query_gen_wikipedia_qa.txt")
            }
            (PromptTask::QueryGen, "scientific") => {
                include_str!("../prompts/query_gen_scientific.txt")
            }
            (PromptTask::QueryGen, "argument") => {
                include_str!("../prompts/query_gen_argument.txt")
            }
            (PromptTask::QueryGen, _) => include_str!("../prompts/query_gen_news.txt"),
            (PromptTask::Judge, _) => include_str!("../prompts/judge_default.txt"),
            (PromptTask::Setwise, _) => include_str!("../prompts/setwise_default.txt"),
        };
        PromptTemplate::new(task, text.trim())
    }

    fn render(&self, query: Option<&str>, document: Option<&str>, candidates: Option<&str>) -> String {
        let mut out = self.template.clone();
        if let Some(q) = query {
            out = out.replace("{query}", q);
        }
        if let Some(d) = document {
            out = out.replace("{document}", d);
        }
        if let Some(c) = candidates {
            out = out.replace("{candidates}", c);
        }
        out
    }
}

/// Sampling parameters; top_p defaults to 0.9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub top_p: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub n_samples: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            top_p: 0.9,
            temperature: 1.0,
            max_tokens: 64,
            n_samples: 1,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidParams(format!("top_p {}", self.top_p)));
        }
        if self.temperature < 0.0 {
            return Err(LlmError::InvalidParams(format!(
                "temperature {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 || self.n_samples == 0 {
            return Err(LlmError::InvalidParams("zero max_tokens or n_samples".into()));
        }
        Ok(())
    }
}

/// Graded relevance label emitted by the judge prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradedLabel {
    HighlyRelevant,
    SomewhatRelevant,
    NotRelevant,
}

/// Binarization: only `Highly Relevant` counts as relevant.
pub fn binarize(label: GradedLabel) -> u32 {
    match label {
        GradedLabel::HighlyRelevant => 1,
        _ => 0,
    }
}

/// Case-insensitive substring parse; when several labels match, the longest
/// label string wins. Returns None for unparseable responses.
pub fn parse_label(response: &str) -> Option<GradedLabel> {
    let lower = response.to_lowercase();
    let labels = [
        (GradedLabel::SomewhatRelevant, "somewhat relevant"),
        (GradedLabel::HighlyRelevant, "highly relevant"),
        (GradedLabel::NotRelevant, "not relevant"),
    ];
    labels
        .iter()
        .filter(|(_, text)| lower.contains(text))
        .max_by_key(|(_, text)| text.len())
        .map(|(label, _)| *label)
}

#[derive(Debug, Clone, Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    top_p: f64,
    temperature: f64,
    max_tokens: usize,
    n: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct GenerateResponse {
    outputs: Vec<String>,
}

/// HTTP completion backend.
#[derive(Debug)]
pub struct HttpLlm {
    pub base_url: String,
    pub api_key_env: String,
    pub model_name: String,
    pub max_retries: usize,
    pub timeout_ms: u64,
    /// Initial backoff; doubles per retry, no jitter.
    pub backoff_ms: u64,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(
        base_url: impl Into<String>,
        api_key_env: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        HttpLlm {
            base_url: base_url.into(),
            api_key_env: api_key_env.into(),
            model_name: model_name.into(),
            max_retries: 2,
            timeout_ms: 30_000,
            backoff_ms: 250,
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_backoff_ms(mut self, ms: u64) -> Self {
        self.backoff_ms = ms;
        self
    }

    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        context: &str,
    ) -> Result<Vec<String>, LlmError> {
        let url = format!("{}/generate", self.base_url.trim_end_matches('/'));
        let body = GenerateRequest {
            prompt,
            top_p: params.top_p,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            n: params.n_samples,
        };
        let api_key = std::env::var(&self.api_key_env).ok();
        let attempts = self.max_retries + 1;
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.backoff_ms << (attempt - 1)));
            }
            let mut req = self
                .client
                .post(&url)
                .timeout(Duration::from_millis(self.timeout_ms))
                .json(&body);
            if let Some(key) = &api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(r) if r.status().is_success() => {
                    let parsed: GenerateResponse = r.json().map_err(|e| LlmError::Backend {
                        context: context.to_string(),
                        detail: format!("bad response body: {e}"),
                    })?;
                    return Ok(parsed.outputs);
                }
                Ok(r) => last_err = format!("status {}", r.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(LlmError::Backend {
            context: context.to_string(),
            detail: last_err,
        })
    }
}

/// Deterministic mock LLM.
#[derive(Debug, Clone, Copy)]
pub struct MockLlm {
    pub seed: u64,
}

pub enum LlmBackend {
    Http(HttpLlm),
    Mock(MockLlm),
}

impl std::fmt::Debug for LlmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LlmBackend::Http(h) => write!(f, "Http({})", h.model_name),
            LlmBackend::Mock(m) => write!(f, "Mock(seed={})", m.seed),
        }
    }
}

fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for b in part.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Document terms ranked by frequency (ties by term ascending); the mock's
/// notion of what a document is about.
fn top_terms(doc: &Document, count: usize) -> Vec<String> {
    let tokens = tokenize(&format!("{} {}", doc.title, doc.text));
    let mut tf: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for t in &tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut terms: Vec<(&str, usize)> = tf.into_iter().collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    terms.into_iter().take(count).map(|(t, _)| t.to_string()).collect()
}

fn overlap_ratio(query_text: &str, doc_text: &str) -> f64 {
    let q: HashSet<String> = tokenize(query_text).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let d: HashSet<String> = tokenize(doc_text).into_iter().collect();
    q.intersection(&d).count() as f64 / q.len() as f64
}

/// Number of terms in a mock-generated query.
const MOCK_QUERY_TERMS: usize = 4;

/// Fallback length when a document has no title.
const FALLBACK_TOKENS: usize = 8;

/// Generates `l` pseudo-queries for one document; query ids are
/// `{doc_id}#q{j}` and carry source provenance. Empty generations are retried
/// once, then replaced by the document title (or its first 8 tokens).
pub fn generate_queries(
    backend: &LlmBackend,
    template: &PromptTemplate,
    document: &Document,
    l: usize,
    params: &GenerationParams,
) -> Result<Vec<Query>, LlmError> {
    assert_eq!(template.task, PromptTask::QueryGen);
    params.validate()?;
    if l == 0 {
        return Err(LlmError::InvalidParams("l must be >= 1".into()));
    }
    let texts: Vec<String> = match backend {
        LlmBackend::Mock(mock) => {
            let terms = top_terms(document, MOCK_QUERY_TERMS);
            (1..=l)
                .map(|j| {
                    let mut sampled = terms.clone();
                    let key = stable_hash(&[&document.doc_id, &j.to_string()]);
                    let mut rng = ChaCha8Rng::seed_from_u64(mock.seed ^ key);
                    sampled.shuffle(&mut rng);
                    sampled.join(" ")
                })
                .collect()
        }
        LlmBackend::Http(http) => {
            let doc_text = format!("{} {}", document.title, document.text);
            let prompt = template.render(None, Some(doc_text.trim()), None);
            let mut p = *params;
            p.n_samples = l;
            let mut outputs = http.complete(&prompt, &p, &document.doc_id)?;
            outputs.resize(l, String::new());
            for text in outputs.iter_mut() {
                if text.trim().is_empty() {
                    let mut retry = *params;
                    retry.n_samples = 1;
                    let again = http.complete(&prompt, &retry, &document.doc_id)?;
                    *text = again.into_iter().next().unwrap_or_default();
                }
            }
            outputs
        }
    };
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let text = if text.trim().is_empty() {
                if document.title.trim().is_empty() {
                    tokenize(&document.text)
                        .into_iter()
                        .take(FALLBACK_TOKENS)
                        .collect::<Vec<_>>()
                        .join(" ")
                } else {
                    document.title.trim().to_string()
                }
            } else {
                text.trim().to_string()
            };
            Query {
                query_id: format!("{}#q{}", document.doc_id, i + 1),
                text,
                source_doc_id: Some(document.doc_id.clone()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeOutcome {
    pub label: GradedLabel,
    /// True when the response could not be parsed and the conservative
    /// NotRelevant default was applied.
    pub fell_back: bool,
}

/// Judges one (query, document) pair. Unparseable responses trigger one
/// retry, then default to NotRelevant.
pub fn judge(
    backend: &LlmBackend,
    template: &PromptTemplate,
    query: &Query,
    document: &Document,
) -> Result<JudgeOutcome, LlmError> {
    assert_eq!(template.task, PromptTask::Judge);
    let response = |attempt: usize| -> Result<String, LlmError> {
        match backend {
            LlmBackend::Mock(_) => {
                let doc_text = format!("{} {}", document.title, document.text);
                let ratio = overlap_ratio(&query.text, &doc_text);
                let self_relevant = query.source_doc_id.as_deref() == Some(&document.doc_id);
                Ok(if ratio >= 0.5 || self_relevant {
                    "Highly Relevant".to_string()
                } else if ratio > 0.0 {
                    "Somewhat Relevant".to_string()
                } else {
                    "Not Relevant".to_string()
                })
            }
            LlmBackend::Http(http) => {
                let doc_text = format!("{} {}", document.title, document.text);
                let prompt = template.render(Some(&query.text), Some(doc_text.trim()), None);
                let params = GenerationParams {
                    temperature: 0.0,
                    max_tokens: 16,
                    ..Default::default()
                };
                let context = format!("judge({}, {}) attempt {attempt}", query.query_id, document.doc_id);
                Ok(http
                    .complete(&prompt, &params, &context)?
                    .into_iter()
                    .next()
                    .unwrap_or_default())
            }
        }
    };
    if let Some(label) = parse_label(&response(1)?) {
        return Ok(JudgeOutcome { label, fell_back: false });
    }
    if let Some(label) = parse_label(&response(2)?) {
        return Ok(JudgeOutcome { label, fell_back: false });
    }
    Ok(JudgeOutcome {
        label: GradedLabel::NotRelevant,
        fell_back: true,
    })
}

/// Whitespace-token truncation budget for candidates shown to the setwise
/// prompt.
pub const SETWISE_TOKEN_BUDGET: usize = 128;

fn truncate_tokens(text: &str, budget: usize) -> String {
    text.split_whitespace().take(budget).collect::<Vec<_>>().join(" ")
}

/// Result of asking "which of these candidates is most relevant": the index
/// within the presented set, or None when the answer was unusable after a
/// retry.
pub type PickFn<'a> = dyn FnMut(&[usize]) -> Result<Option<usize>, LlmError> + 'a;

/// Heap sort driven by a set comparator: each sift step presents a parent and
/// its children (at most `set_size` items) and asks for the most relevant.
/// Returns item indices, most relevant first. An unusable answer keeps the
/// current heap order for that step.
pub fn setwise_sort(
    n: usize,
    set_size: usize,
    pick: &mut PickFn<'_>,
) -> Result<Vec<usize>, LlmError> {
    if set_size < 2 {
        return Err(LlmError::InvalidSetSize(set_size));
    }
    if n <= 1 {
        return Ok((0..n).collect());
    }
    let arity = set_size - 1;
    let mut heap: Vec<usize> = (0..n).collect();
    let mut len = n;

    let mut sift_down = |heap: &mut Vec<usize>, len: usize, mut i: usize| -> Result<(), LlmError> {
        loop {
            let first_child = arity * i + 1;
            if first_child >= len {
                return Ok(());
            }
            let last_child = (first_child + arity - 1).min(len - 1);
            let mut set = Vec::with_capacity(last_child - first_child + 2);
            set.push(heap[i]);
            set.extend(heap[first_child..=last_child].iter().copied());
            match pick(&set)? {
                Some(0) | None => return Ok(()),
                Some(best) if best < set.len() => {
                    let child = first_child + best - 1;
                    heap.swap(i, child);
                    i = child;
                }
                Some(_) => return Ok(()), // out-of-range counts as unusable
            }
        }
    };

    let last_parent = (len - 2) / arity;
    for i in (0..=last_parent).rev() {
        sift_down(&mut heap, len, i)?;
    }
    let mut out = Vec::with_capacity(n);
    while len > 1 {
        out.push(heap[0]);
        heap.swap(0, len - 1);
        len -= 1;
        sift_down(&mut heap, len, 0)?;
    }
    out.push(heap[0]);
    Ok(out)
}

/// Reranks candidate documents with the setwise prompt embedded in heap sort.
/// Returns a permutation of the candidate doc_ids, most relevant first.
pub fn setwise_rerank(
    backend: &LlmBackend,
    template: &PromptTemplate,
    query: &Query,
    candidates: &[(DocId, String)],
    set_size: usize,
) -> Result<Vec<DocId>, LlmError> {
    assert_eq!(template.task, PromptTask::Setwise);
    {
        let mut seen = HashSet::new();
        for (id, _) in candidates {
            if !seen.insert(id.as_str()) {
                return Err(LlmError::DuplicateCandidate(id.clone()));
            }
        }
    }
    let mut pick = |set: &[usize]| -> Result<Option<usize>, LlmError> {
        match backend {
            LlmBackend::Mock(_) => {
                let mut best = 0usize;
                let mut best_ratio = f64::NEG_INFINITY;
                for (pos, &idx) in set.iter().enumerate() {
                    let ratio = overlap_ratio(&query.text, &candidates[idx].1);
                    if ratio > best_ratio {
                        best_ratio = ratio;
                        best = pos;
                    }
                }
                Ok(Some(best))
            }
            LlmBackend::Http(http) => {
                let listing: Vec<String> = set
                    .iter()
                    .enumerate()
                    .map(|(pos, &idx)| {
                        format!(
                            "[{}] {}",
                            pos + 1,
                            truncate_tokens(&candidates[idx].1, SETWISE_TOKEN_BUDGET)
                        )
                    })
                    .collect();
                let prompt =
                    template.render(Some(&query.text), None, Some(&listing.join("\n")));
                let params = GenerationParams {
                    temperature: 0.0,
                    max_tokens: 8,
                    ..Default::default()
                };
                for attempt in 0..2 {
                    let context =
                        format!("setwise({}) attempt {}", query.query_id, attempt + 1);
                    let answer = http
                        .complete(&prompt, &params, &context)?
                        .into_iter()
                        .next()
                        .unwrap_or_default();
                    let digits: String =
                        answer.chars().filter(|c| c.is_ascii_digit()).collect();
                    if let Ok(idx) = digits.parse::<usize>() {
                        if idx >= 1 && idx <= set.len() {
                            return Ok(Some(idx - 1));
                        }
                    }
                }
                Ok(None)
            }
        }
    };
    let order = setwise_sort(candidates.len(), set_size, &mut pick)?;
    Ok(order.into_iter().map(|i| candidates[i].0.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    fn mock() -> LlmBackend {
        LlmBackend::Mock(MockLlm { seed: 11 })
    }

    #[test]
    fn template_placeholder_validation() {
        assert!(PromptTemplate::new(PromptTask::QueryGen, "no placeholder").is_err());
        assert!(PromptTemplate::new(PromptTask::Judge, "q: {query}").is_err());
        assert!(PromptTemplate::builtin(PromptTask::QueryGen, "wikipedia_qa").is_ok());
        assert!(PromptTemplate::builtin(PromptTask::Judge, "any").is_ok());
        assert!(PromptTemplate::builtin(PromptTask::Setwise, "any").is_ok());
    }

    #[test]
    fn mock_query_generation_shape_and_determinism() {
        let t = PromptTemplate::builtin(PromptTask::QueryGen, "wikipedia_qa").unwrap();
        let d = doc("d1", "the quick brown fox jumps");
        let qs = generate_queries(&mock(), &t, &d, 2, &GenerationParams::default()).unwrap();
        assert_eq!(qs.len(), 2);
        for (i, q) in qs.iter().enumerate() {
            assert!(!q.text.is_empty());
            assert_eq!(q.source_doc_id.as_deref(), Some("d1"));
            assert_eq!(q.query_id, format!("d1#q{}", i + 1));
        }
        let again = generate_queries(&mock(), &t, &d, 1, &GenerationParams::default()).unwrap();
        assert_eq!(again[0].text, qs[0].text);
    }

    #[test]
    fn mock_queries_contain_dominant_term() {
        // oracle: recompute term frequencies; "zymurgy" dominates
        let t = PromptTemplate::builtin(PromptTask::QueryGen, "scientific").unwrap();
        let d = doc(
            "d1",
            "zymurgy covers zymurgy fermentation zymurgy brewing zymurgy of beer and mead",
        );
        let terms = super::top_terms(&d, MOCK_QUERY_TERMS);
        assert_eq!(terms[0], "zymurgy");
        let qs = generate_queries(&mock(), &t, &d, 10, &GenerationParams::default()).unwrap();
        for q in qs {
            assert!(q.text.split(' ').any(|t| t == "zymurgy"), "{}", q.text);
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_label("Highly Relevant"), Some(GradedLabel::HighlyRelevant));
        assert_eq!(
            parse_label("I think it is somewhat relevant."),
            Some(GradedLabel::SomewhatRelevant)
        );
        assert_eq!(parse_label("NOT RELEVANT!"), Some(GradedLabel::NotRelevant));
        assert_eq!(parse_label("no idea"), None);
    }

    #[test]
    fn binarize_rule() {
        assert_eq!(binarize(GradedLabel::HighlyRelevant), 1);
        assert_eq!(binarize(GradedLabel::SomewhatRelevant), 0);
        assert_eq!(binarize(GradedLabel::NotRelevant), 0);
    }

    #[test]
    fn mock_judge_self_relevance() {
        let gen_t = PromptTemplate::builtin(PromptTask::QueryGen, "wikipedia_qa").unwrap();
        let judge_t = PromptTemplate::builtin(PromptTask::Judge, "default").unwrap();
        let d = doc("d9", "solar panels convert sunlight into electricity efficiently");
        let qs = generate_queries(&mock(), &gen_t, &d, 3, &GenerationParams::default()).unwrap();
        for q in qs {
            let out = judge(&mock(), &judge_t, &q, &d).unwrap();
            assert_eq!(binarize(out.label), 1);
        }
        let unrelated = Query {
            query_id: "x".into(),
            text: "medieval castle fortification".into(),
            source_doc_id: None,
        };
        let out = judge(&mock(), &judge_t, &unrelated, &d).unwrap();
        assert_eq!(out.label, GradedLabel::NotRelevant);
    }

    #[test]
    fn setwise_identity_on_single_candidate() {
        let t = PromptTemplate::builtin(PromptTask::Setwise, "default").unwrap();
        let q = Query {
            query_id: "q".into(),
            text: "anything".into(),
            source_doc_id: None,
        };
        let out = setwise_rerank(&mock(), &t, &q, &[("d1".into(), "text".into())], 3).unwrap();
        assert_eq!(out, vec!["d1".to_string()]);
    }

    #[test]
    fn setwise_sort_recovers_hidden_order() {
        // oracle comparator over a hidden total order
        for n in [1usize, 2, 3, 5, 20] {
            let hidden: Vec<usize> = (0..n).rev().collect(); // item i has relevance hidden[i]
            let mut calls = 0usize;
            let mut pick = |set: &[usize]| -> Result<Option<usize>, LlmError> {
                calls += 1;
                let best = set
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &idx)| hidden[idx])
                    .map(|(pos, _)| pos);
                Ok(best)
            };
            let order = setwise_sort(n, 3, &mut pick).unwrap();
            let mut want: Vec<usize> = (0..n).collect();
            want.sort_by_key(|&i| std::cmp::Reverse(hidden[i]));
            assert_eq!(order, want, "n={n}");
        }
    }

    #[test]
    fn setwise_sort_call_count_bound() {
        let n = 100usize;
        let hidden: Vec<usize> = (0..n).map(|i| (i * 37) % n).collect();
        let mut calls = 0usize;
        let mut pick = |set: &[usize]| -> Result<Option<usize>, LlmError> {
            calls += 1;
            Ok(set
                .iter()
                .enumerate()
                .max_by_key(|(_, &idx)| hidden[idx])
                .map(|(pos, _)| pos))
        };
        let order = setwise_sort(n, 3, &mut pick).unwrap();
        let bound = (2.0 * n as f64 * (n as f64).log2()).ceil() as usize;
        assert!(calls <= bound, "calls {calls} > bound {bound}");
        let mut want: Vec<usize> = (0..n).collect();
        want.sort_by_key(|&i| std::cmp::Reverse(hidden[i]));
        assert_eq!(order, want);
    }

    #[test]
    fn setwise_sort_is_permutation_even_with_bad_picker() {
        let n = 17usize;
        let mut flip = false;
        let mut pick = |_set: &[usize]| -> Result<Option<usize>, LlmError> {
            flip = !flip;
            Ok(if flip { None } else { Some(1) })
        };
        let order = setwise_sort(n, 3, &mut pick).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn setwise_rerank_rejects_duplicates() {
        let t = PromptTemplate::builtin(PromptTask::Setwise, "default").unwrap();
        let q = Query {
            query_id: "q".into(),
            text: "x".into(),
            source_doc_id: None,
        };
        let cands = vec![("d1".to_string(), "a".to_string()), ("d1".to_string(), "b".to_string())];
        assert!(setwise_rerank(&mock(), &t, &q, &cands, 3).is_err());
    }
}
