//! Measurement layer shared by the pipeline, baselines and evaluator:
//! nDCG@k, rank-biased overlap, Kendall tau-b, and the selection drop Δe.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DrId, DrRanking, Qrels, Run};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input list")]
    EmptyList,
    #[error("rbo persistence parameter must be in (0,1), got {0}")]
    InvalidPersistence(f64),
    #[error("rankings cover different id sets (difference: {0:?})")]
    IdSetMismatch(Vec<DrId>),
    #[error("run and qrels share no query")]
    DisjointQueries,
}

/// The evaluation measure E. Linear gain by default; the exponential-gain
/// (2^grade - 1) variant is available behind `exponential_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMeasure {
    pub cutoff: usize,
    #[serde(default)]
    pub exponential_gain: bool,
}

impl Default for EvalMeasure {
    fn default() -> Self {
        EvalMeasure {
            cutoff: 10,
            exponential_gain: false,
        }
    }
}

impl EvalMeasure {
    fn gain(&self, grade: u32) -> f64 {
        if self.exponential_gain {
            (2f64).powi(grade as i32) - 1.0
        } else {
            grade as f64
        }
    }
}

/// nDCG@k with log2(i+1) discount. The ideal DCG is computed from all judged
/// documents of the query sorted by grade; returns 0 when the query has no
/// relevant document.
pub fn ndcg_at_k(
    ranked: &[impl AsRef<str>],
    query_judgments: &BTreeMap<&str, u32>,
    measure: &EvalMeasure,
) -> f64 {
    let k = measure.cutoff;
    let mut dcg = 0.0;
    for (i, doc) in ranked.iter().take(k).enumerate() {
        if let Some(&g) = query_judgments.get(doc.as_ref()) {
            dcg += measure.gain(g) / ((i + 2) as f64).log2();
        }
    }
    let mut grades: Vec<u32> = query_judgments.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (i, &g) in grades.iter().take(k).enumerate() {
        idcg += measure.gain(g) / ((i + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean measure over the queries present in the qrels. Queries judged but
/// absent from the run contribute 0.
pub fn mean_metric(run: &Run, qrels: &Qrels, measure: &EvalMeasure) -> Result<f64, MetricsError> {
    let qids = qrels.query_ids();
    if qids.is_empty() {
        return Err(MetricsError::DisjointQueries);
    }
    if !qids.iter().any(|q| run.entries.contains_key(*q)) {
        return Err(MetricsError::DisjointQueries);
    }
    let mut sum = 0.0;
    for qid in &qids {
        if let Some(entries) = run.entries.get(*qid) {
            let ranked: Vec<&str> = entries.iter().map(|e| e.doc_id.as_str()).collect();
            sum += ndcg_at_k(&ranked, &qrels.for_query(qid), measure);
        }
    }
    Ok(sum / qids.len() as f64)
}

/// Extrapolated rank-biased overlap evaluated at depth d = min(|A|, |B|):
///
/// RBO_ext = (X_d / d) p^d + ((1-p)/p) * sum_{i=1..d} (X_i / i) p^i
///
/// where X_i is the overlap of the two i-prefixes.
pub fn rbo(
    list_a: &[impl AsRef<str>],
    list_b: &[impl AsRef<str>],
    p: f64,
) -> Result<f64, MetricsError> {
    if list_a.is_empty() || list_b.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    if !(0.0 < p && p < 1.0) {
        return Err(MetricsError::InvalidPersistence(p));
    }
    let d = list_a.len().min(list_b.len());
    let mut seen_a: HashSet<&str> = HashSet::new();
    let mut seen_b: HashSet<&str> = HashSet::new();
    let mut overlap = 0usize;
    let mut sum = 0.0;
    let mut pow = 1.0;
    let mut x_d = 0usize;
    for i in 0..d {
        let a = list_a[i].as_ref();
        let b = list_b[i].as_ref();
        if a == b {
            overlap += 1;
        } else {
            if seen_b.contains(a) {
                overlap += 1;
            }
            if seen_a.contains(b) {
                overlap += 1;
            }
            seen_a.insert(a);
            seen_b.insert(b);
        }
        pow *= p;
        sum += overlap as f64 / (i + 1) as f64 * pow;
        x_d = overlap;
    }
    Ok(x_d as f64 / d as f64 * pow + (1.0 - p) / p * sum)
}

/// Kendall tau-b between two rankings of the same id set. Ties are defined by
/// equal method_score.
pub fn kendall_tau(rank_a: &DrRanking, rank_b: &DrRanking) -> Result<f64, MetricsError> {
    let ids_a: HashSet<&str> = rank_a.dr_ids().into_iter().collect();
    let ids_b: HashSet<&str> = rank_b.dr_ids().into_iter().collect();
    if ids_a != ids_b {
        let mut diff: Vec<DrId> = ids_a
            .symmetric_difference(&ids_b)
            .map(|s| s.to_string())
            .collect();
        diff.sort();
        return Err(MetricsError::IdSetMismatch(diff));
    }
    let score_a: BTreeMap<&str, f64> = rank_a.entries.iter().map(|(d, s)| (d.as_str(), *s)).collect();
    let score_b: BTreeMap<&str, f64> = rank_b.entries.iter().map(|(d, s)| (d.as_str(), *s)).collect();
    let ids: Vec<&str> = score_a.keys().copied().collect();
    let n = ids.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let da = score_a[ids[i]] - score_a[ids[j]];
            let db = score_b[ids[i]] - score_b[ids[j]];
            if da == 0.0 && db == 0.0 {
                // tied in both: counted in neither denominator term
            } else if da == 0.0 {
                ties_a += 1;
            } else if db == 0.0 {
                ties_b += 1;
            } else if da * db > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let denom = (((concordant + discordant + ties_a) as f64)
        * ((concordant + discordant + ties_b) as f64))
        .sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}

/// Non-negative performance drop between the ground-truth best retriever and
/// the retriever a method ranked first. 0 iff the selected retriever attains
/// the maximum ground-truth score.
pub fn delta_e(
    gt_scores: &BTreeMap<DrId, f64>,
    predicted: &DrRanking,
) -> Result<f64, MetricsError> {
    if gt_scores.is_empty() || predicted.entries.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let selected = predicted.top().unwrap();
    let selected_score = gt_scores.get(selected).ok_or_else(|| {
        MetricsError::IdSetMismatch(vec![selected.to_string()])
    })?;
    let best = gt_scores.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(best - selected_score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(ids_scores: &[(&str, f64)]) -> DrRanking {
        DrRanking::from_scores(
            "t",
            ids_scores.iter().map(|(d, s)| (d.to_string(), *s)).collect(),
        )
    }

    #[test]
    fn ndcg_ideal_is_one_and_miss_is_zero() {
        let m = EvalMeasure::default();
        let judg: BTreeMap<&str, u32> = [("dA", 2), ("dB", 1)].into_iter().collect();
        assert_eq!(ndcg_at_k(&["dA", "dB"], &judg, &m), 1.0);
        assert_eq!(ndcg_at_k(&["dX", "dY"], &judg, &m), 0.0);
    }

    #[test]
    fn ndcg_hand_computed_fixture() {
        let m = EvalMeasure::default();
        let judg: BTreeMap<&str, u32> = [("dA", 2), ("dB", 1)].into_iter().collect();
        let got = ndcg_at_k(&["dB", "dA"], &judg, &m);
        let want = (1.0 / 2f64.log2() + 2.0 / 3f64.log2()) / (2.0 / 2f64.log2() + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.8597).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ignores_unjudged_below_cutoff() {
        let m = EvalMeasure::default();
        let judg: BTreeMap<&str, u32> = [("dA", 2)].into_iter().collect();
        let base = ndcg_at_k(&["dA"], &judg, &m);
        let padded = ndcg_at_k(&["dA", "u1", "u2", "u3"], &judg, &m);
        assert_eq!(base, padded);
    }

    #[test]
    fn mean_metric_handles_missing_queries_as_zero() {
        let m = EvalMeasure::default();
        let mut run = Run::new("r");
        run.insert_query("q1", vec![("dA".into(), 1.0)]);
        let mut qrels = Qrels::new();
        qrels.set("q1", "dA", 1);
        qrels.set("q2", "dB", 1);
        let got = mean_metric(&run, &qrels, &m).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
        // disjoint
        let mut other = Run::new("r");
        other.insert_query("qX", vec![("dA".into(), 1.0)]);
        assert!(mean_metric(&other, &qrels, &m).is_err());
    }

    #[test]
    fn rbo_identity_and_disjoint() {
        let a = ["a", "b", "c"];
        for p in [0.5, 0.9, 0.99] {
            assert!((rbo(&a, &a, p).unwrap() - 1.0).abs() < 1e-12);
        }
        let b = ["x", "y", "z"];
        assert_eq!(rbo(&a, &b, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn rbo_hand_computed_fixture() {
        // X = (0, 2, 3) at p = 0.9
        let got = rbo(&["a", "b", "c"], &["b", "a", "c"], 0.9).unwrap();
        let want = 0.729 + (0.1 / 0.9) * (0.0 * 0.9 + 1.0 * 0.81 + 1.0 * 0.729);
        assert!((got - want).abs() < 1e-9);
        assert!((got - 0.9).abs() < 1e-9);
    }

    #[test]
    fn rbo_is_symmetric() {
        let a = ["a", "b", "c", "d"];
        let b = ["c", "a", "x", "y"];
        assert_eq!(rbo(&a, &b, 0.9).unwrap(), rbo(&b, &a, 0.9).unwrap());
        assert!(rbo(&a, &([] as [&str; 0]), 0.9).is_err());
    }

    #[test]
    fn kendall_tau_endpoints() {
        let a = ranking(&[("a", 5.0), ("b", 4.0), ("c", 3.0), ("d", 2.0), ("e", 1.0)]);
        let b = ranking(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0), ("e", 5.0)]);
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &b).unwrap(), -1.0);
        assert_eq!(kendall_tau(&a, &b).unwrap(), kendall_tau(&b, &a).unwrap());
        let c = ranking(&[("a", 1.0), ("x", 2.0)]);
        assert!(kendall_tau(&a, &c).is_err());
    }

    #[test]
    fn kendall_tau_matches_brute_force_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8);
            let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                DrRanking::from_scores(
                    "t",
                    ids.iter()
                        .map(|d| (d.clone(), rng.gen_range(0..4) as f64))
                        .collect(),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let got = kendall_tau(&a, &b).unwrap();
            let want = brute_force_tau_b(&a, &b);
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    // independent tau-b oracle: enumerate every unordered pair
    fn brute_force_tau_b(a: &DrRanking, b: &DrRanking) -> f64 {
        let sa: BTreeMap<&str, f64> = a.entries.iter().map(|(d, s)| (d.as_str(), *s)).collect();
        let sb: BTreeMap<&str, f64> = b.entries.iter().map(|(d, s)| (d.as_str(), *s)).collect();
        let ids: Vec<&str> = sa.keys().copied().collect();
        let (mut c, mut d, mut ta, mut tb) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let xa = sa[ids[i]].partial_cmp(&sa[ids[j]]).unwrap();
                let xb = sb[ids[i]].partial_cmp(&sb[ids[j]]).unwrap();
                use std::cmp::Ordering::*;
                match (xa, xb) {
                    (Equal, Equal) => {}
                    (Equal, _) => ta += 1.0,
                    (_, Equal) => tb += 1.0,
                    (x, y) if x == y => c += 1.0,
                    _ => d += 1.0,
                }
            }
        }
        let denom = ((c + d + ta) * (c + d + tb)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (c - d) / denom
        }
    }

    #[test]
    fn delta_e_paper_values() {
        // published benchmark scores where a wrong pick costs 3.07 points
        let gt: BTreeMap<DrId, f64> = [
            ("mpnet".to_string(), 49.96),
            ("uae".to_string(), 44.84),
            ("other".to_string(), 46.89),
        ]
        .into_iter()
        .collect();
        let predicted = ranking(&[("other", 1.0), ("mpnet", 0.5), ("uae", 0.1)]);
        assert!((delta_e(&gt, &predicted).unwrap() - 3.07).abs() < 1e-9);
        let best_first = ranking(&[("mpnet", 1.0), ("other", 0.5), ("uae", 0.1)]);
        assert_eq!(delta_e(&gt, &best_first).unwrap(), 0.0);
    }
}
