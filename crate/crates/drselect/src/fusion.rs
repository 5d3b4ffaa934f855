//! Reciprocal rank fusion over document rankings and over dense-retriever
//! rankings.
//!
//! Scores depend only on positions: item score = sum over input rankings
//! containing the item of 1/(k_rrf + rank), rank 1-based. Items absent from a
//! ranking contribute nothing there, so lists over different top-k sets fuse
//! cleanly.

use std::collections::BTreeMap;
use std::collections::HashSet;

use thiserror::Error;

use crate::data::{DrId, DrRanking};

/// Canonical RRF constant; the classic default used by most toolkits.
pub const DEFAULT_K_RRF: f64 = 60.0;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no input rankings")]
    NoInputs,
    #[error("k_rrf must be positive, got {0}")]
    InvalidK(f64),
    #[error("input rankings cover different id sets (difference: {0:?})")]
    IdSetMismatch(Vec<String>),
}

/// A fused ranking of item ids with RRF scores, non-increasing, ties broken by
/// item id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRanking {
    pub entries: Vec<(String, f64)>,
}

impl FusedRanking {
    pub fn item_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(i, _)| i.as_str()).collect()
    }
}

/// Fuses rank lists with reciprocal rank fusion, truncating to `depth`.
pub fn rrf_fuse(
    rankings: &[Vec<String>],
    k_rrf: f64,
    depth: usize,
) -> Result<FusedRanking, FusionError> {
    if rankings.is_empty() {
        return Err(FusionError::NoInputs);
    }
    if k_rrf <= 0.0 {
        return Err(FusionError::InvalidK(k_rrf));
    }
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for ranking in rankings {
        for (i, item) in ranking.iter().enumerate() {
            *scores.entry(item.as_str()).or_insert(0.0) += 1.0 / (k_rrf + (i + 1) as f64);
        }
    }
    let mut entries: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(i, s)| (i.to_string(), s))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    entries.truncate(depth);
    Ok(FusedRanking { entries })
}

/// Merges dense-retriever rankings with RRF. All inputs must cover the same
/// dr_id set; method_id records the fused sources.
pub fn fuse_dr_rankings(rankings: &[DrRanking], k_rrf: f64) -> Result<DrRanking, FusionError> {
    if rankings.is_empty() {
        return Err(FusionError::NoInputs);
    }
    let first: HashSet<&str> = rankings[0].dr_ids().into_iter().collect();
    for r in &rankings[1..] {
        let ids: HashSet<&str> = r.dr_ids().into_iter().collect();
        if ids != first {
            let mut diff: Vec<String> = first
                .symmetric_difference(&ids)
                .map(|s| s.to_string())
                .collect();
            diff.sort();
            return Err(FusionError::IdSetMismatch(diff));
        }
    }
    let lists: Vec<Vec<String>> = rankings
        .iter()
        .map(|r| r.dr_ids().into_iter().map(|s| s.to_string()).collect())
        .collect();
    let fused = rrf_fuse(&lists, k_rrf, usize::MAX)?;
    let mut sources: Vec<&str> = rankings.iter().map(|r| r.method_id.as_str()).collect();
    sources.sort();
    let entries: Vec<(DrId, f64)> = fused.entries;
    Ok(DrRanking {
        method_id: format!("rrf({})", sources.join("+")),
        entries,
    })
}
