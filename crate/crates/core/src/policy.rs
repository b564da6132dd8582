//! The deterministic logging policy that produced the displayed rankings.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{dot, Dataset, QueryGroup};
use crate::{Error, Result};

const HINGE_EPOCHS: usize = 30;
const HINGE_LAMBDA: f64 = 1e-3;

/// A linear ranker `score(x) = w . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggingPolicy {
    pub weights: Vec<f64>,
}

impl LoggingPolicy {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }

    /// One weight per line.
    pub fn to_text(&self) -> String {
        self.weights.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut weights = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let w: f64 = t.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad weight {t:?}") })?;
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("policy weight on line {}", i + 1)));
            }
            weights.push(w);
        }
        if weights.is_empty() {
            return Err(Error::Validation("empty policy file".into()));
        }
        Ok(LoggingPolicy { weights })
    }
}

/// The ranking the policy shows for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub query_id: String,
    /// Document indices in display order; `order[0]` is at position 1.
    pub order: Vec<usize>,
    /// 1-based position of each document, indexed by document.
    pub positions: Vec<usize>,
    pub selected: Vec<bool>,
}

/// Fit a pairwise hinge-loss linear ranker on a random sample of queries.
///
/// Pairs are (relevant, irrelevant) documents of the same query under the
/// binary labels. Optimization is Pegasos-style stochastic subgradient
/// descent with step `1 / (lambda t)`, returning the averaged iterate.
pub fn train_logging_policy(dataset: &Dataset, sample_fraction: f64, seed: u64) -> Result<LoggingPolicy> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Validation(format!("sample fraction must be in (0, 1], got {sample_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_groups = dataset.groups.len();
    let n_sample = ((sample_fraction * n_groups as f64).round() as usize).clamp(1, n_groups);
    let mut sampled = index::sample(&mut rng, n_groups, n_sample).into_vec();
    sampled.sort_unstable();

    let mut diffs: Vec<Vec<f64>> = Vec::new();
    for &q in &sampled {
        let g = &dataset.groups[q];
        for a in &g.docs {
            for b in &g.docs {
                if a.label > b.label {
                    diffs.push(a.features.iter().zip(&b.features).map(|(x, y)| x - y).collect());
                }
            }
        }
    }
    if diffs.is_empty() {
        return Err(Error::Validation(format!(
            "the {n_sample} sampled queries contain no preference pair; use a larger sample fraction"
        )));
    }

    let dim = dataset.feature_dim;
    let mut w = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut t = 0usize;
    for _ in 0..HINGE_EPOCHS {
        order.shuffle(&mut rng);
        for &p in &order {
            t += 1;
            let eta = 1.0 / (HINGE_LAMBDA * t as f64);
            let margin = dot(&w, &diffs[p]);
            let shrink = 1.0 - eta * HINGE_LAMBDA;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (v, d) in w.iter_mut().zip(&diffs[p]) {
                    *v += eta * d;
                }
            }
            let k = t as f64;
            for (a, v) in avg.iter_mut().zip(&w) {
                *a += (v - *a) / k;
            }
        }
    }
    Ok(LoggingPolicy { weights: avg })
}

/// Rank documents by a score, descending, breaking ties by ascending doc id.
pub fn order_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn ranked_list_from_scores(query_id: &str, scores: &[f64], k_cutoff: usize) -> RankedList {
    let order = order_by_scores(scores);
    let mut positions = vec![0; scores.len()];
    for (pos, &d) in order.iter().enumerate() {
        positions[d] = pos + 1;
    }
    let selected = positions.iter().map(|&p| p <= k_cutoff).collect();
    RankedList { query_id: query_id.to_string(), order, positions, selected }
}

pub fn rank_query(policy: &LoggingPolicy, group: &QueryGroup, k_cutoff: usize) -> Result<RankedList> {
    if k_cutoff == 0 {
        return Err(Error::Validation("k_cutoff must be at least 1".into()));
    }
    let mut scores = Vec::with_capacity(group.docs.len());
    for d in &group.docs {
        if d.features.len() != policy.weights.len() {
            return Err(Error::DimensionMismatch { expected: policy.weights.len(), got: d.features.len() });
        }
        scores.push(policy.score(&d.features));
    }
    Ok(ranked_list_from_scores(&group.query_id, &scores, k_cutoff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_ltr, Document};
    use proptest::prelude::*;

    fn group_from_scores(scores: &[f64]) -> (LoggingPolicy, QueryGroup) {
        let docs = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Document { doc_id: i, features: vec![s], grade: 0, label: 0 })
            .collect();
        (LoggingPolicy { weights: vec![1.0] }, QueryGroup { query_id: "q".into(), docs })
    }

    #[test]
    fn ranks_by_score() {
        let (p, g) = group_from_scores(&[0.9, 0.1, 0.5]);
        let r = rank_query(&p, &g, 2).unwrap();
        assert_eq!(r.positions, vec![1, 3, 2]);
        assert_eq!(r.selected, vec![true, false, true]);
        assert_eq!(r.order, vec![0, 2, 1]);
    }

    #[test]
    fn ties_by_doc_id() {
        let (p, g) = group_from_scores(&[0.3, 0.3, 0.3, 0.3]);
        let r = rank_query(&p, &g, 10).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3]);
        assert!(r.selected.iter().all(|&s| s));
        assert!(rank_query(&p, &g, 0).is_err());
    }

    fn separable(n_queries: usize) -> Dataset {
        let beta = vec![1.0, 0.0, 0.0];
        let mut ds = generate_synthetic_ltr(n_queries, 10, 3, &beta, 0.0, 4).unwrap();
        for g in &mut ds.groups {
            for d in &mut g.docs {
                d.features[0] = d.label as f64;
            }
        }
        ds
    }

    #[test]
    fn separable_policy_ranks_relevant_first() {
        let ds = separable(5);
        let p = train_logging_policy(&ds, 1.0, 1).unwrap();
        for g in &ds.groups {
            let r = rank_query(&p, g, 3).unwrap();
            let labels: Vec<u8> = r.order.iter().map(|&d| g.docs[d].label).collect();
            assert!(labels.windows(2).all(|w| w[0] >= w[1]), "{labels:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let beta: Vec<f64> = vec![1.0, -0.5, 0.25, 0.0];
        let ds = generate_synthetic_ltr(50, 10, 4, &beta, 0.5, 8).unwrap();
        assert_eq!(train_logging_policy(&ds, 0.2, 3).unwrap(), train_logging_policy(&ds, 0.2, 3).unwrap());
    }

    #[test]
    fn no_pairs_is_an_error() {
        let mut ds = separable(3);
        for g in &mut ds.groups {
            for d in &mut g.docs {
                d.label = 0;
            }
        }
        assert!(train_logging_policy(&ds, 1.0, 1).is_err());
        assert!(train_logging_policy(&ds, 0.0, 1).is_err());
    }

    #[test]
    fn policy_file_round_trip() {
        let p = LoggingPolicy { weights: vec![0.1, -2.5, 1e-17] };
        assert_eq!(LoggingPolicy::read(p.to_text().as_bytes()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn ranking_invariants(scores in prop::collection::vec(-5.0f64..5.0, 1..15), k in 1usize..20, bump in 0.0f64..3.0, which in 0usize..15) {
            let (p, g) = group_from_scores(&scores);
            let r = rank_query(&p, &g, k).unwrap();
            prop_assert_eq!(&r, &rank_query(&p, &g, k).unwrap());
            let mut pos = r.positions.clone();
            pos.sort_unstable();
            prop_assert_eq!(pos, (1..=scores.len()).collect::<Vec<_>>());
            prop_assert_eq!(r.selected.iter().filter(|&&s| s).count(), k.min(scores.len()));

            let d = which % scores.len();
            let mut raised = scores.clone();
            raised[d] += bump;
            let (p2, g2) = group_from_scores(&raised);
            let r2 = rank_query(&p2, &g2, k).unwrap();
            prop_assert!(r2.positions[d] <= r.positions[d]);
        }
    }
}
