//! Pairwise selection-aware estimator.
//!
//! For a pair `(i, j)` with `i` preferred, `d = f_beta(x_i) - f_beta(x_j)`,
//! selection flags `s_i, s_j` and selection logits `w_i, w_j`, the pair's
//! loss is the negative of
//!
//! ```text
//! s_i s_j log sig(d)
//!   + s_i log sig(w_i + d) + (1 - s_i) C(w_i)
//!   + s_j log sig(w_j + d) + (1 - s_j) C(w_j)
//! ```
//!
//! where `C(w) = log sig(1 - w)` by default, or `log sig(-w)` with the
//! `bce` complement.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;

use super::{check_log, FeatureTable, Method, SelectionComplement, TrainConfig, TrainedRanker};
use crate::clicksim::{ClickLog, ClickRecord};
use crate::dataset::Dataset;
use crate::models::{AdamW, LinearModel, Scorer};
use crate::numerics::{log_sigmoid, sigmoid};
use crate::{Error, Result};

/// An oriented document pair within one query; `i` is preferred. `count` is
/// the number of session-level occurrences merged into this entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferencePair {
    pub query: usize,
    pub i: usize,
    pub j: usize,
    pub s_i: bool,
    pub s_j: bool,
    pub count: f64,
}

type PairKey = (usize, usize, usize, bool, bool);

fn push_pairs(map: BTreeMap<PairKey, f64>) -> Vec<PreferencePair> {
    map.into_iter().map(|((query, i, j, s_i, s_j), count)| PreferencePair { query, i, j, s_i, s_j, count }).collect()
}

/// Preference pairs of every session, merged across sessions.
///
/// The first list holds pairs of two selected documents where `i` has the
/// larger reweighted click. The second holds pairs involving an unselected
/// document: a clicked selected document paired with each unselected one,
/// and every two unselected documents in doc order.
pub fn build_pairs(log: &ClickLog) -> Result<(Vec<PreferencePair>, Vec<PreferencePair>)> {
    // Identical sessions yield identical pairs, so count them first.
    type Sig = (usize, Vec<(usize, bool, bool, u64)>);
    let mut sessions: BTreeMap<Sig, f64> = BTreeMap::new();
    let mut unselected_sets: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
    for s in log.sessions() {
        let Some(first) = s.first() else { continue };
        let sig = s.iter().map(|r| (r.doc, r.selected, r.clicked, r.propensity.to_bits())).collect();
        *sessions.entry((first.query, sig)).or_insert(0.0) += 1.0;
        let mut u: Vec<usize> = s.iter().filter(|r| !r.selected).map(|r| r.doc).collect();
        u.sort_unstable();
        if u.len() >= 2 {
            *unselected_sets.entry((first.query, u)).or_insert(0.0) += 1.0;
        }
    }

    let mut ps: BTreeMap<PairKey, f64> = BTreeMap::new();
    let mut pu: BTreeMap<PairKey, f64> = BTreeMap::new();
    for ((query, sig), m) in &sessions {
        let recs: Vec<ClickRecord> = sig
            .iter()
            .map(|&(doc, selected, clicked, rho)| ClickRecord {
                query: *query,
                doc,
                position: 0,
                selected,
                clicked,
                propensity: f64::from_bits(rho),
            })
            .collect();
        let sel: Vec<(usize, f64, bool)> = recs
            .iter()
            .filter(|r| r.selected)
            .map(|r| Ok((r.doc, r.reweighted_click()?, r.clicked)))
            .collect::<Result<_>>()?;
        for &(di, yi, _) in &sel {
            for &(dj, yj, _) in &sel {
                if yi > yj {
                    *ps.entry((*query, di, dj, true, true)).or_insert(0.0) += m;
                }
            }
        }
        for &(di, _, clicked) in &sel {
            if !clicked {
                continue;
            }
            for r in recs.iter().filter(|r| !r.selected) {
                *pu.entry((*query, di, r.doc, true, false)).or_insert(0.0) += m;
            }
        }
    }
    for ((query, docs), m) in &unselected_sets {
        for (a, &di) in docs.iter().enumerate() {
            for &dj in &docs[a + 1..] {
                *pu.entry((*query, di, dj, false, false)).or_insert(0.0) += m;
            }
        }
    }
    Ok((push_pairs(ps), push_pairs(pu)))
}

/// Loss of one pair and its derivatives in the four scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerms {
    pub loss: f64,
    pub d_beta_i: f64,
    pub d_beta_j: f64,
    pub d_omega_i: f64,
    pub d_omega_j: f64,
}

pub fn cld_pair_objective(
    s_i: bool,
    s_j: bool,
    beta_i: f64,
    beta_j: f64,
    omega_i: f64,
    omega_j: f64,
    complement: SelectionComplement,
) -> PairTerms {
    let d = beta_i - beta_j;
    let mut t = PairTerms { loss: 0.0, d_beta_i: 0.0, d_beta_j: 0.0, d_omega_i: 0.0, d_omega_j: 0.0 };
    // d/dz [-log sig(z)] = -sig(-z)
    let add_d = |t: &mut PairTerms, z: f64| -> f64 {
        t.loss -= log_sigmoid(z);
        -sigmoid(-z)
    };
    if s_i && s_j {
        let g = add_d(&mut t, d);
        t.d_beta_i += g;
        t.d_beta_j -= g;
    }
    for (selected, w, is_i) in [(s_i, omega_i, true), (s_j, omega_j, false)] {
        if selected {
            let g = add_d(&mut t, w + d);
            t.d_beta_i += g;
            t.d_beta_j -= g;
            if is_i {
                t.d_omega_i += g;
            } else {
                t.d_omega_j += g;
            }
        } else {
            let (z, sign) = match complement {
                SelectionComplement::Literal => (1.0 - w, -1.0),
                SelectionComplement::Bce => (-w, -1.0),
            };
            let g = sign * add_d(&mut t, z);
            if is_i {
                t.d_omega_i += g;
            } else {
                t.d_omega_j += g;
            }
        }
    }
    t
}

/// Train the pairwise estimator. The ranking model is a feed-forward
/// network when `neural` is set and linear otherwise; the selection model is
/// linear. Batches hold the pairs of whole queries so every document is
/// scored once per step.
pub fn train_cld_pair(log: &ClickLog, dataset: &Dataset, config: &TrainConfig, neural: bool) -> Result<TrainedRanker> {
    config.validate()?;
    check_log(log, dataset)?;
    let (ps, pu) = build_pairs(log)?;
    if ps.is_empty() {
        return Err(Error::Validation("no preference pair among selected documents".into()));
    }
    let mut by_query: BTreeMap<usize, Vec<PreferencePair>> = BTreeMap::new();
    for p in ps.into_iter().chain(pu) {
        by_query.entry(p.query).or_default().push(p);
    }
    let queries: Vec<usize> = by_query.keys().copied().collect();
    let total_w: f64 = by_query.values().flatten().map(|p| p.count).sum();

    let table = FeatureTable::new(dataset);
    let dim = dataset.feature_dim;
    let mut rng = config.rng();
    let mut drop_rng = config.dropout_rng();
    let mut beta = if neural { config.mlp(dim, &mut rng)? } else { Scorer::Linear(LinearModel::zeros(dim)) };
    let mut omega = LinearModel::zeros(dim);
    let mut opt_beta = AdamW::new(config.learning_rate, config.l2);
    let mut opt_omega = AdamW::new(config.learning_rate, config.l2);
    let mut order = queries;
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut n_pairs = 0;
            while end < order.len() && (n_pairs < config.batch_size || end == start) {
                n_pairs += by_query[&order[end]].len();
                end += 1;
            }
            let batch = &order[start..end];
            start = end;

            let mut rows = Vec::new();
            let mut offsets = Vec::with_capacity(batch.len());
            for &q in batch {
                offsets.push(rows.len());
                rows.extend((0..dataset.groups[q].docs.len()).map(|d| table.row(q, d)));
            }
            let x = table.gather(&rows);
            let (fb, cache) = beta.forward(&x, Some(&mut drop_rng));
            let fw = omega.forward(&x);
            let bw: f64 = batch.iter().flat_map(|q| &by_query[q]).map(|p| p.count).sum();
            let mut up_beta = Array1::zeros(rows.len());
            let mut up_omega = Array1::zeros(rows.len());
            let mut any_beta = false;
            for (&q, &off) in batch.iter().zip(&offsets) {
                for p in &by_query[&q] {
                    let (i, j) = (off + p.i, off + p.j);
                    let t = cld_pair_objective(p.s_i, p.s_j, fb[i], fb[j], fw[i], fw[j], config.selection_complement);
                    epoch_loss += p.count * t.loss;
                    let w = p.count / bw;
                    if p.s_i || p.s_j {
                        up_beta[i] += w * t.d_beta_i;
                        up_beta[j] += w * t.d_beta_j;
                        any_beta = true;
                    }
                    up_omega[i] += w * t.d_omega_i;
                    up_omega[j] += w * t.d_omega_j;
                }
            }
            if any_beta {
                let grads = beta.backward(&cache, &up_beta);
                opt_beta.step(&mut beta.blocks_mut(), &grads)?;
            }
            let grads = Scorer::Linear(omega.clone()).backward(&crate::models::ScorerCache::Linear(x), &up_omega);
            opt_omega.step(&mut omega.blocks_mut(), &grads)?;
        }
        trace.push(epoch_loss / total_w);
    }
    let method = if neural { Method::CldPair } else { Method::CldPairL };
    Ok(TrainedRanker { method, beta, omega: Some(omega), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use approx::assert_relative_eq;

    fn rec(doc: usize, position: usize, selected: bool, clicked: bool, propensity: f64) -> ClickRecord {
        ClickRecord { query: 0, doc, position, selected, clicked, propensity }
    }

    #[test]
    fn objective_examples() {
        let t = cld_pair_objective(true, true, 0.0, 0.0, 0.0, 0.0, SelectionComplement::Literal);
        assert_relative_eq!(t.loss, 2.079_441_541_679_835_7, max_relative = 1e-14);
        let t = cld_pair_objective(false, false, 0.3, -0.2, 1.0, 1.0, SelectionComplement::Literal);
        assert_relative_eq!(t.loss, 1.386_294_361_119_890_6, max_relative = 1e-14);
        assert_eq!((t.d_beta_i, t.d_beta_j), (0.0, 0.0));
        let t = cld_pair_objective(false, false, 0.0, 0.0, 0.0, 0.0, SelectionComplement::Bce);
        assert_relative_eq!(t.loss, 2.0 * std::f64::consts::LN_2, max_relative = 1e-14);
    }

    #[test]
    fn objective_gradients() {
        for (s_i, s_j) in [(true, false), (true, true), (false, true), (false, false)] {
            for c in [SelectionComplement::Literal, SelectionComplement::Bce] {
                let f = |p: &[f64]| {
                    let t = cld_pair_objective(s_i, s_j, p[0], p[1], p[2], p[3], c);
                    (t.loss, vec![t.d_beta_i, t.d_beta_j, t.d_omega_i, t.d_omega_j])
                };
                let r = grad_check(f, &[0.3, -0.7, 0.2, 1.4], 1e-6).unwrap();
                assert!(r.max_relative_error < 1e-6, "{s_i} {s_j} {r:?}");
            }
        }
    }

    #[test]
    fn pairs_from_sessions() {
        // Both selected docs clicked; position 2 has the larger c / rho.
        let log = ClickLog::from_sessions(vec![vec![
            rec(4, 1, true, true, 1.0),
            rec(2, 2, true, true, 0.5),
            rec(0, 3, false, false, 0.0),
            rec(1, 4, false, false, 0.0),
        ]]);
        let (ps, pu) = build_pairs(&log).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!((ps[0].i, ps[0].j), (2, 4));
        // Two clicked selected docs times two unselected, plus one unselected pair.
        assert_eq!(pu.len(), 5);
        assert!(pu.iter().any(|p| (p.i, p.j, p.s_i, p.s_j) == (0, 1, false, false)));
        assert!(pu.iter().filter(|p| p.s_i).all(|p| !p.s_j && (p.i == 2 || p.i == 4)));
    }

    #[test]
    fn no_clicks_and_full_cutoff() {
        let quiet = ClickLog::from_sessions(vec![vec![rec(0, 1, true, false, 1.0), rec(1, 2, true, false, 0.5)]]);
        let (ps, pu) = build_pairs(&quiet).unwrap();
        assert!(ps.is_empty() && pu.is_empty());
    }

    #[test]
    fn repeated_sessions_merge_into_counts() {
        let s = vec![rec(0, 1, true, true, 1.0), rec(1, 2, true, false, 0.5), rec(2, 3, false, false, 0.0)];
        let log = ClickLog::from_sessions(vec![s.clone(), s.clone(), s]);
        let (ps, pu) = build_pairs(&log).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].count, 3.0);
        assert!(pu.iter().all(|p| p.count == 3.0));
    }
}
