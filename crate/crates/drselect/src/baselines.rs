//! Comparison methods that rank a retriever pool from real target queries or
//! external metadata: reported benchmark performance, post-retrieval QPP
//! predictors (entropy, WIG, NQC, SMV, sigma variants, Clarity), query
//! alteration robustness, and rank fusion against a pseudo-reference.
//!
//! Every predictor maps one retriever's run to a per-query value; the
//! retriever's method score is the mean over its usable queries. Methods where
//! lower is better (entropy, alteration) store the negated mean so every
//! DrRanking keeps its score-descending invariant.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::data::{Corpus, DrId, DrRanking, Query, Run};
use crate::fusion;
use crate::larmor::Pool;
use crate::metrics;
use crate::retrieval::{self, RetrievalError};

#[derive(Debug, Error)]
pub enum BaselinesError {
    #[error("performance file is missing pool retrievers: {0:?}")]
    MissingPerf(Vec<DrId>),
    #[error("baseline {baseline} requires live search; retriever {dr_id} is run-file backed")]
    UnsupportedBaseline { baseline: &'static str, dr_id: DrId },
    #[error("runs cover different query sets (difference: {0:?})")]
    QuerySetMismatch(Vec<String>),
    #[error("no queries to score")]
    NoQueries,
    #[error("invalid qpp config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// Jelinek-Mercer interpolation weight for the Clarity top-documents model.
pub const LAMBDA_JM: f64 = 0.6;

/// Retrieval depth used when rescoring altered queries.
pub const ALTERATION_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct QppConfig {
    /// Documents per query fed to the predictors.
    pub top_k: usize,
    pub normalize: bool,
    /// Documents averaged for the normalizing factor c(q).
    pub norm_depth: usize,
    pub sigma_max_fraction: f64,
    pub entropy_top_k: usize,
    pub alteration_variants: usize,
}

impl Default for QppConfig {
    fn default() -> Self {
        QppConfig {
            top_k: 100,
            normalize: false,
            norm_depth: 100,
            sigma_max_fraction: 0.5,
            entropy_top_k: 10,
            alteration_variants: 5,
        }
    }
}

impl QppConfig {
    pub fn validate(&self) -> Result<(), BaselinesError> {
        if self.norm_depth < 1 {
            return Err(BaselinesError::InvalidConfig("norm_depth must be >= 1".into()));
        }
        if !(self.sigma_max_fraction > 0.0 && self.sigma_max_fraction <= 1.0) {
            return Err(BaselinesError::InvalidConfig(format!(
                "sigma_max_fraction {} outside (0, 1]",
                self.sigma_max_fraction
            )));
        }
        if self.top_k == 0 || self.entropy_top_k == 0 || self.alteration_variants == 0 {
            return Err(BaselinesError::InvalidConfig("zero-valued depth".into()));
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Normalizing factor c(q): mean score of the top `norm_depth` documents.
pub fn norm_factor(scores: &[f64], norm_depth: usize) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let take = norm_depth.min(scores.len());
    Some(mean(&scores[..take]))
}

/// Shannon entropy of the softmax over the top `entropy_top_k` scores.
/// None when fewer than 2 documents were retrieved.
pub fn binary_entropy_value(scores: &[f64], entropy_top_k: usize) -> Option<f64> {
    if scores.len() < 2 {
        return None;
    }
    let top = &scores[..entropy_top_k.min(scores.len())];
    let max = top.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = top.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut h = 0.0;
    for e in exps {
        let p = e / z;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Some(h)
}

/// WIG: mean of the top_k scores minus c(q) (0 when unnormalized).
pub fn wig_value(scores: &[f64], top_k: usize, c: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    Some(mean(&scores[..top_k.min(scores.len())]) - c)
}

/// NQC: population standard deviation of the top_k scores. Normalization
/// divides the scores by c(q) up front, which keeps the normalized value
/// bit-stable when a backend rescales its scores. None when fewer than 2
/// documents.
pub fn nqc_value(scores: &[f64], top_k: usize, c: Option<f64>) -> Option<f64> {
    let take = top_k.min(scores.len());
    if take < 2 {
        return None;
    }
    match c {
        Some(c) if c != 0.0 => {
            let scaled: Vec<f64> = scores[..take].iter().map(|s| s / c).collect();
            Some(pop_std(&scaled))
        }
        Some(_) => None,
        None => Some(pop_std(&scores[..take])),
    }
}

/// SMV: (1/k) sum of s_i * |ln(s_i / mean)|, divided by c(q) when
/// normalizing. None when fewer than 2 documents or any score is non-positive
/// (the log term is undefined there).
pub fn smv_value(scores: &[f64], top_k: usize, c: Option<f64>) -> Option<f64> {
    let take = top_k.min(scores.len());
    if take < 2 {
        return None;
    }
    if scores[..take].iter().any(|&s| s <= 0.0) {
        return None;
    }
    // normalize up front for the same reason as nqc_value
    let top: Vec<f64> = match c {
        Some(c) if c > 0.0 => scores[..take].iter().map(|s| s / c).collect(),
        Some(_) => return None,
        None => scores[..take].to_vec(),
    };
    let mu = mean(&top);
    Some(top.iter().map(|&s| s * (s / mu).ln().abs()).sum::<f64>() / take as f64)
}

/// Sigma: the best prefix cutoff, max over j in [2, top_k] of
/// std(top j scores) / j. None when fewer than 2 documents.
pub fn sigma_value(scores: &[f64], top_k: usize) -> Option<f64> {
    let take = top_k.min(scores.len());
    if take < 2 {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    for j in 2..=take {
        best = best.max(pop_std(&scores[..j]) / j as f64);
    }
    Some(best)
}

/// Sigma_max: population std of the scores at or above `fraction` of the top
/// score, normalized by their mean. Singleton or zero-mean sets give 0.
pub fn sigma_max_value(scores: &[f64], fraction: f64) -> Option<f64> {
    let first = *scores.first()?;
    let mut kept: Vec<f64> = scores.iter().copied().filter(|&s| s >= fraction * first).collect();
    if kept.len() < 2 {
        return Some(0.0);
    }
    if first != 0.0 {
        // the ratio is scale-free, so divide out the top score first and the
        // result stays bit-stable when a backend rescales its scores
        for s in &mut kept {
            *s /= first;
        }
    }
    let m = mean(&kept);
    if m == 0.0 {
        return Some(0.0);
    }
    Some(pop_std(&kept) / m)
}

/// Maximum-likelihood unigram language model of a whole corpus.
#[derive(Debug, Clone)]
pub struct CorpusLanguageModel {
    probs: HashMap<String, f64>,
}

impl CorpusLanguageModel {
    pub fn build(corpus: &Corpus) -> Self {
        let mut counts: HashMap<String, f64> = HashMap::new();
        let mut total = 0.0;
        for doc in corpus.docs() {
            for t in retrieval::tokenize(&format!("{} {}", doc.title, doc.text)) {
                *counts.entry(t).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        let probs = counts.into_iter().map(|(t, c)| (t, c / total)).collect();
        CorpusLanguageModel { probs }
    }

    pub fn prob(&self, term: &str) -> f64 {
        self.probs.get(term).copied().unwrap_or(0.0)
    }
}

/// Clarity: KL divergence between the top-documents language model and the
/// corpus model, summed over the corpus vocabulary. The top model is the
/// uniform mixture over the top documents of their JM-smoothed unigram
/// models. Empty or unknown documents are excluded; None when no usable
/// document remains.
pub fn clarity_value(
    top_doc_ids: &[impl AsRef<str>],
    corpus: &Corpus,
    corpus_lm: &CorpusLanguageModel,
    top_k: usize,
) -> Option<f64> {
    let mut doc_models: Vec<HashMap<String, f64>> = Vec::new();
    for doc_id in top_doc_ids.iter().take(top_k) {
        let Some(doc) = corpus.get(doc_id.as_ref()) else { continue };
        let tokens = retrieval::tokenize(&format!("{} {}", doc.title, doc.text));
        if tokens.is_empty() {
            continue;
        }
        let mut tf: HashMap<String, f64> = HashMap::new();
        for t in tokens.iter() {
            *tf.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        let total = tokens.len() as f64;
        doc_models.push(tf.into_iter().map(|(t, c)| (t, c / total)).collect());
    }
    if doc_models.is_empty() {
        return None;
    }
    let n = doc_models.len() as f64;
    let mut kl = 0.0;
    for (term, &p_c) in &corpus_lm.probs {
        let p_ml_mean: f64 = doc_models
            .iter()
            .map(|m| m.get(term).copied().unwrap_or(0.0))
            .sum::<f64>()
            / n;
        let p_top = LAMBDA_JM * p_ml_mean + (1.0 - LAMBDA_JM) * p_c;
        if p_top > 0.0 && p_c > 0.0 {
            kl += p_top * (p_top / p_c).ln();
        }
    }
    Some(kl)
}

/// Per-run score lists in rank order, one per query.
fn score_lists(run: &Run) -> Vec<(&str, Vec<f64>)> {
    run.entries
        .iter()
        .map(|(qid, es)| (qid.as_str(), es.iter().map(|e| e.score).collect()))
        .collect()
}

fn rank_by<F>(
    method_id: &str,
    runs: &BTreeMap<DrId, Run>,
    ascending: bool,
    per_query: F,
) -> Result<DrRanking, BaselinesError>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut scores = Vec::with_capacity(runs.len());
    for (dr_id, run) in runs {
        let mut values = Vec::new();
        for (_, list) in score_lists(run) {
            if let Some(v) = per_query(&list) {
                values.push(v);
            }
        }
        let m = if values.is_empty() { 0.0 } else { mean(&values) };
        scores.push((dr_id.clone(), if ascending { -m } else { m }));
    }
    if scores.is_empty() {
        return Err(BaselinesError::NoQueries);
    }
    Ok(DrRanking::from_scores(method_id, scores))
}

/// Ranks retrievers by externally reported benchmark performance.
pub fn msmarco_perf(
    perf: &BTreeMap<DrId, f64>,
    pool_ids: &[DrId],
) -> Result<DrRanking, BaselinesError> {
    let missing: Vec<DrId> = pool_ids.iter().filter(|id| !perf.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(BaselinesError::MissingPerf(missing));
    }
    Ok(DrRanking::from_scores(
        "msmarco",
        pool_ids.iter().map(|id| (id.clone(), perf[id])).collect(),
    ))
}

/// Lower mean entropy ranks first.
pub fn binary_entropy(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("entropy", runs, true, |s| binary_entropy_value(s, cfg.entropy_top_k))
}

pub fn wig(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("wig", runs, false, |s| {
        let c = if cfg.normalize { norm_factor(s, cfg.norm_depth)? } else { 0.0 };
        wig_value(s, cfg.top_k, c)
    })
}

pub fn nqc(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("nqc", runs, false, |s| {
        let c = if cfg.normalize { Some(norm_factor(s, cfg.norm_depth)?) } else { None };
        nqc_value(s, cfg.top_k, c)
    })
}

pub fn smv(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("smv", runs, false, |s| {
        let c = if cfg.normalize { Some(norm_factor(s, cfg.norm_depth)?) } else { None };
        smv_value(s, cfg.top_k, c)
    })
}

pub fn sigma(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("sigma", runs, false, |s| sigma_value(s, cfg.top_k))
}

pub fn sigma_max(runs: &BTreeMap<DrId, Run>, cfg: &QppConfig) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    rank_by("sigma-max", runs, false, |s| sigma_max_value(s, cfg.sigma_max_fraction))
}

pub fn clarity(
    runs: &BTreeMap<DrId, Run>,
    corpus: &Corpus,
    cfg: &QppConfig,
) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    let lm = CorpusLanguageModel::build(corpus);
    let mut scores = Vec::with_capacity(runs.len());
    for (dr_id, run) in runs {
        let mut values = Vec::new();
        for qid in run.entries.keys() {
            let docs = run.doc_ids(qid).unwrap_or_default();
            if let Some(v) = clarity_value(&docs, corpus, &lm, cfg.top_k) {
                values.push(v);
            }
        }
        let m = if values.is_empty() { 0.0 } else { mean(&values) };
        scores.push((dr_id.clone(), m));
    }
    if scores.is_empty() {
        return Err(BaselinesError::NoQueries);
    }
    Ok(DrRanking::from_scores("clarity", scores))
}

/// Query alteration robustness: retrieve the top_k set with the original
/// query, rescore that same set with single-token-deletion variants (a doc
/// absent from a variant's list gets that list's minimum score), and take the
/// per-doc std across variants. Smaller mean std ranks first.
pub fn query_alteration(
    pool: &Pool,
    queries: &[Query],
    cfg: &QppConfig,
    seed: u64,
) -> Result<DrRanking, BaselinesError> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(BaselinesError::NoQueries);
    }
    for (dr_id, backend) in pool {
        if !backend.supports_live_search() {
            return Err(BaselinesError::UnsupportedBaseline {
                baseline: "alteration",
                dr_id: dr_id.clone(),
            });
        }
    }
    let mut scores = Vec::with_capacity(pool.len());
    for (dr_id, backend) in pool {
        let mut per_query = Vec::new();
        for query in queries {
            let original = backend.search(query, cfg.top_k)?;
            if original.entries.is_empty() {
                continue;
            }
            let variants = retrieval::alter_query(query, cfg.alteration_variants, seed)?;
            let mut variant_scores: Vec<(HashMap<String, f64>, f64)> = Vec::new();
            for v in &variants {
                let list = backend.search(v, ALTERATION_DEPTH)?;
                let map: HashMap<String, f64> = list.entries.into_iter().collect();
                let min = map.values().fold(f64::INFINITY, |a, &b| a.min(b));
                let min = if min.is_finite() { min } else { 0.0 };
                variant_scores.push((map, min));
            }
            let mut per_doc = Vec::with_capacity(original.entries.len());
            for (doc_id, _) in &original.entries {
                let across: Vec<f64> = variant_scores
                    .iter()
                    .map(|(m, min)| m.get(doc_id.as_str()).copied().unwrap_or(*min))
                    .collect();
                per_doc.push(pop_std(&across));
            }
            per_query.push(mean(&per_doc));
        }
        let m = if per_query.is_empty() { 0.0 } else { mean(&per_query) };
        scores.push((dr_id.clone(), -m));
    }
    Ok(DrRanking::from_scores("alteration", scores))
}

/// QPP fusion: per query, RRF-fuse every retriever's list into a
/// pseudo-reference; score each retriever by its mean RBO against the
/// references.
pub fn qpp_fusion(
    runs: &BTreeMap<DrId, Run>,
    k_rrf: f64,
    rbo_p: f64,
) -> Result<DrRanking, BaselinesError> {
    let mut iter = runs.values();
    let first: Vec<&str> = match iter.next() {
        Some(r) => r.entries.keys().map(|q| q.as_str()).collect(),
        None => return Err(BaselinesError::NoQueries),
    };
    for run in iter {
        let ids: Vec<&str> = run.entries.keys().map(|q| q.as_str()).collect();
        if ids != first {
            let a: std::collections::HashSet<&str> = first.iter().copied().collect();
            let b: std::collections::HashSet<&str> = ids.into_iter().collect();
            let mut diff: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
            diff.sort();
            return Err(BaselinesError::QuerySetMismatch(diff));
        }
    }
    if first.is_empty() {
        return Err(BaselinesError::NoQueries);
    }
    let mut references: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for qid in &first {
        let lists: Vec<Vec<String>> = runs
            .values()
            .map(|run| run.doc_ids(qid).unwrap_or_default())
            .collect();
        let fused = fusion::rrf_fuse(&lists, k_rrf, usize::MAX)?;
        references.insert(qid, fused.entries.into_iter().map(|(d, _)| d).collect());
    }
    let mut scores = Vec::with_capacity(runs.len());
    for (dr_id, run) in runs {
        let mut sum = 0.0;
        for (qid, reference) in &references {
            let docs = run.doc_ids(qid).unwrap_or_default();
            if docs.is_empty() || reference.is_empty() {
                continue;
            }
            sum += metrics::rbo(&docs, reference, rbo_p)?;
        }
        scores.push((dr_id.clone(), sum / references.len() as f64));
    }
    Ok(DrRanking::from_scores("qpp-fusion", scores))
}
