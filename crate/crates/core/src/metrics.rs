//! NDCG@k and MAP over held-out labels.

use crate::dataset::{Dataset, QueryGroup};
use crate::{Error, Result};

/// Anything that can order the documents of a query.
pub trait Ranker {
    /// Document indices of `group`, best first.
    fn rank(&self, group: &QueryGroup) -> Result<Vec<usize>>;
}

fn dcg_at_k(ranked_labels: &[u8], k: usize) -> f64 {
    ranked_labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| (2f64.powi(l as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with gain `2^label - 1`; 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranked_labels: &[u8], k: usize) -> f64 {
    let mut ideal = ranked_labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(ranked_labels, k) / idcg
    }
}

/// Mean of precision@i over the positions i of relevant documents; 0 if none.
pub fn average_precision(ranked_labels: &[u8]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked_labels.iter().enumerate() {
        match l {
            0 => {}
            1 => {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
            other => return Err(Error::Validation(format!("average precision needs binary labels, got {other}"))),
        }
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ndcg_at_1: f64,
    pub ndcg_at_3: f64,
    pub map: f64,
    /// Queries with at least one relevant document; others are skipped.
    pub n_queries: usize,
}

/// Macro-averaged NDCG@1, NDCG@3 and MAP.
///
/// NDCG uses the binary labels unless `graded` is set, in which case it uses
/// the raw grades. MAP always uses the binary labels. Queries without any
/// relevant document are excluded from every average.
pub fn evaluate(ranker: &dyn Ranker, test: &Dataset, graded: bool) -> Result<MetricsReport> {
    if test.groups.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let (mut n1, mut n3, mut map, mut n) = (0.0, 0.0, 0.0, 0usize);
    for g in &test.groups {
        let order = ranker.rank(g)?;
        let binary: Vec<u8> = order.iter().map(|&d| g.docs[d].label).collect();
        let gains: Vec<u8> = if graded { order.iter().map(|&d| g.docs[d].grade).collect() } else { binary.clone() };
        if gains.iter().all(|&l| l == 0) || binary.iter().all(|&l| l == 0) {
            continue;
        }
        n1 += ndcg_at_k(&gains, 1);
        n3 += ndcg_at_k(&gains, 3);
        map += average_precision(&binary)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Validation("no test query has a relevant document".into()));
    }
    let n_f = n as f64;
    Ok(MetricsReport { ndcg_at_1: n1 / n_f, ndcg_at_3: n3 / n_f, map: map / n_f, n_queries: n })
}

/// Order documents by descending score, ties by ascending doc id.
pub fn order_by_score(group: &QueryGroup, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..group.docs.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(group.docs[a].doc_id.cmp(&group.docs[b].doc_id)));
    order
}
