//! Feed-forward rankers fit by regression on clicks (Naive, IPS) and by a
//! pairwise logistic loss on annotated labels (Oracle).

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;

use super::{check_log, FeatureTable, Method, TrainConfig, TrainedRanker};
use crate::clicksim::ClickLog;
use crate::dataset::Dataset;
use crate::models::AdamW;
use crate::{Error, Result};

/// Squared loss to raw clicks over the selected records.
pub fn train_naive(log: &ClickLog, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedRanker> {
    fit_click_regression(log, dataset, config, Method::Naive, |r| Ok(f64::from(u8::from(r.clicked))))
}

/// Squared loss to propensity-reweighted clicks over the selected records.
pub fn train_ips(log: &ClickLog, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedRanker> {
    fit_click_regression(log, dataset, config, Method::Ips, |r| r.reweighted_click())
}

fn fit_click_regression<F>(log: &ClickLog, dataset: &Dataset, config: &TrainConfig, method: Method, target: F) -> Result<TrainedRanker>
where
    F: Fn(&crate::clicksim::ClickRecord) -> Result<f64>,
{
    config.validate()?;
    check_log(log, dataset)?;
    // Records of the same document share features, so the summed squared loss
    // equals a count-weighted loss to the mean target of each document.
    let mut by_doc: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for r in log.selected() {
        let y = target(r)?;
        let e = by_doc.entry((r.query, r.doc)).or_insert((0.0, 0.0));
        e.0 += y;
        e.1 += 1.0;
    }
    if by_doc.is_empty() {
        return Err(Error::Validation("click log has no selected records".into()));
    }
    let table = FeatureTable::new(dataset);
    let rows: Vec<usize> = by_doc.keys().map(|&(q, d)| table.row(q, d)).collect();
    let targets: Vec<f64> = by_doc.values().map(|&(s, n)| s / n).collect();
    let weights: Vec<f64> = by_doc.values().map(|&(_, n)| n).collect();

    let mut rng = config.rng();
    let mut drop_rng = config.dropout_rng();
    let mut beta = config.mlp(dataset.feature_dim, &mut rng)?;
    let mut opt = AdamW::new(config.learning_rate, config.l2);
    let total_w: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let idx: Vec<usize> = batch.iter().map(|&i| rows[i]).collect();
            let x = table.gather(&idx);
            let (f, cache) = beta.forward(&x, Some(&mut drop_rng));
            let bw: f64 = batch.iter().map(|&i| weights[i]).sum();
            let mut up = Array1::zeros(batch.len());
            for (b, &i) in batch.iter().enumerate() {
                let e = f[b] - targets[i];
                epoch_loss += weights[i] * e * e;
                up[b] = 2.0 * weights[i] * e / bw;
            }
            let grads = beta.backward(&cache, &up);
            opt.step(&mut beta.blocks_mut(), &grads)?;
        }
        trace.push(epoch_loss / total_w);
    }
    Ok(TrainedRanker { method, beta, omega: None, trace })
}

/// Pairwise logistic loss `log(1 + exp(-(f_i - f_j)))` over every
/// (relevant, irrelevant) pair of the dataset's binary labels. Batches hold
/// whole queries so each document is scored once per step.
pub fn train_oracle(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedRanker> {
    config.validate()?;
    let table = FeatureTable::new(dataset);
    let queries: Vec<usize> = (0..dataset.groups.len())
        .filter(|&q| {
            let ls = dataset.groups[q].labels();
            ls.contains(&0) && ls.iter().any(|&l| l > 0)
        })
        .collect();
    if queries.is_empty() {
        return Err(Error::Validation("no query has both relevant and irrelevant documents".into()));
    }
    let mut rng = config.rng();
    let mut drop_rng = config.dropout_rng();
    let mut beta = config.mlp(dataset.feature_dim, &mut rng)?;
    let mut opt = AdamW::new(config.learning_rate, config.l2);
    let mut order = queries.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    let n_pairs_total: usize = queries
        .iter()
        .map(|&q| {
            let ls = dataset.groups[q].labels();
            let pos = ls.iter().filter(|&&l| l > 0).count();
            pos * (ls.len() - pos)
        })
        .sum();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut start = 0;
        while start < order.len() {
            // Take whole queries until the batch holds batch_size documents.
            let mut end = start;
            let mut n_rows = 0;
            while end < order.len() && (n_rows < config.batch_size || end == start) {
                n_rows += dataset.groups[order[end]].docs.len();
                end += 1;
            }
            let batch = &order[start..end];
            start = end;
            let mut rows = Vec::with_capacity(n_rows);
            let mut offsets = Vec::with_capacity(batch.len());
            for &q in batch {
                offsets.push(rows.len());
                rows.extend((0..dataset.groups[q].docs.len()).map(|d| table.row(q, d)));
            }
            let (f, cache) = beta.forward(&table.gather(&rows), Some(&mut drop_rng));
            let mut up = Array1::zeros(rows.len());
            let mut n_pairs = 0usize;
            let mut batch_loss = 0.0;
            for (&q, &off) in batch.iter().zip(&offsets) {
                let docs = &dataset.groups[q].docs;
                for i in 0..docs.len() {
                    for j in 0..docs.len() {
                        if docs[i].label > 0 && docs[j].label == 0 {
                            let m = f[off + i] - f[off + j];
                            batch_loss -= crate::numerics::log_sigmoid(m);
                            let g = -crate::numerics::sigmoid(-m);
                            up[off + i] += g;
                            up[off + j] -= g;
                            n_pairs += 1;
                        }
                    }
                }
            }
            epoch_loss += batch_loss;
            up /= n_pairs as f64;
            let grads = beta.backward(&cache, &up);
            opt.step(&mut beta.blocks_mut(), &grads)?;
        }
        trace.push(epoch_loss / n_pairs_total as f64);
    }
    Ok(TrainedRanker { method: Method::Oracle, beta, omega: None, trace })
}
