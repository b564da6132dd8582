//! Pointwise selection-aware estimator.
//!
//! Each record contributes the negative log-likelihood of a two-equation
//! model: a Gaussian relevance equation `y = a + e1` observed only when a
//! probit selection equation `u + e2 > 0` fires, with `corr(e1, e2) = gamma`.
//! For a selected record with reweighted click `y = c / rho`,
//!
//! ```text
//! loss = (y - a)^2 - log Phi((u + gamma (y - a)) / sqrt(1 - gamma^2))
//! ```
//!
//! and for an unselected record `loss = -log(1 - Phi(u))`, where `a` is the
//! ranking score and `u` the selection score of the record's features.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use super::{check_log, FeatureTable, Method, TrainConfig, TrainedRanker};
use crate::clicksim::ClickLog;
use crate::dataset::{dot, Dataset};
use crate::models::{AdamW, LinearModel, ParamBlock, Scorer};
use crate::numerics::{log_phi_cdf, log_phi_cdf_and_mills};
use crate::{Error, Result};

/// The normal CDF argument is clamped to this range; outside it the term's
/// gradient is zero.
const Z_MIN: f64 = -30.0;
const Z_MAX: f64 = 8.0;

/// Loss of one record and its derivatives with respect to the ranking score
/// `a` and the selection score `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CldTerms {
    pub loss: f64,
    pub d_a: f64,
    pub d_u: f64,
}

/// `-log Phi(z)` with the clamp, and its derivative in `z`.
fn neg_log_phi_clamped(z: f64) -> (f64, f64) {
    if z < Z_MIN {
        (-log_phi_cdf(Z_MIN), 0.0)
    } else if z > Z_MAX {
        (-log_phi_cdf(Z_MAX), 0.0)
    } else {
        let (l, m) = log_phi_cdf_and_mills(z);
        (-l, -m)
    }
}

pub fn cld_scalar_loss(selected: bool, target: f64, a: f64, u: f64, gamma: f64) -> Result<CldTerms> {
    if !(gamma.abs() < 1.0) {
        return Err(Error::Validation(format!("gamma must lie in (-1, 1), got {gamma}")));
    }
    if !selected {
        if !u.is_finite() {
            return Err(Error::NonFinite("selection score".into()));
        }
        let (loss, dz) = neg_log_phi_clamped(-u);
        return Ok(CldTerms { loss, d_a: 0.0, d_u: -dz });
    }
    let s = (1.0 - gamma * gamma).sqrt();
    let e = target - a;
    let z = (u + gamma * e) / s;
    if !z.is_finite() || !e.is_finite() {
        return Err(Error::NonFinite("normal CDF argument of a selected record".into()));
    }
    let (nl, dz) = neg_log_phi_clamped(z);
    Ok(CldTerms { loss: e * e + nl, d_a: -2.0 * e - dz * gamma / s, d_u: dz / s })
}

/// Loss and gradients of one record for linear ranking and selection models.
/// `target` is the reweighted click `c / rho` and is ignored when the record
/// is unselected; the ranking gradient is then zero.
pub fn cld_pointwise_loss(
    x: &[f64],
    selected: bool,
    target: f64,
    beta: &LinearModel,
    omega: &LinearModel,
    gamma: f64,
) -> Result<(f64, LinearModel, LinearModel)> {
    for m in [beta, omega] {
        if m.weights.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: m.weights.len(), got: x.len() });
        }
    }
    let a = dot(&beta.weights, x) + beta.bias;
    let u = dot(&omega.weights, x) + omega.bias;
    let t = cld_scalar_loss(selected, target, a, u, gamma)?;
    let grad = |g: f64| LinearModel { weights: x.iter().map(|v| g * v).collect(), bias: g };
    Ok((t.loss, grad(t.d_a), grad(t.d_u)))
}

/// One training example: a row of the feature matrix, its selection flag,
/// its target (used only when selected) and a multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CldSample {
    pub row: usize,
    pub selected: bool,
    pub target: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CldFit {
    pub beta: Scorer,
    pub omega: LinearModel,
    pub trace: Vec<f64>,
}

/// Minimize the weighted mean loss over `samples` by minibatch AdamW.
/// Selected samples update both models; unselected samples only `omega`.
pub fn fit_cld(x: &Array2<f64>, samples: &[CldSample], beta: Scorer, config: &TrainConfig) -> Result<CldFit> {
    config.validate()?;
    if beta.input_dim() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: beta.input_dim(), got: x.ncols() });
    }
    if !samples.iter().any(|s| s.selected) || samples.iter().all(|s| s.selected) {
        return Err(Error::Validation("training needs both selected and unselected records".into()));
    }
    let mut beta = beta;
    let mut omega = LinearModel::zeros(x.ncols());
    let mut rng = config.rng();
    let mut drop_rng = config.dropout_rng();
    let mut opt_beta = AdamW::new(config.learning_rate, config.l2);
    let mut opt_omega = AdamW::new(config.learning_rate, config.l2);
    let total_w: f64 = samples.iter().map(|s| s.weight).sum();
    let dim = x.ncols();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut sel_rows = Vec::with_capacity(config.batch_size);
    let mut sel_idx = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bw: f64 = batch.iter().map(|&i| samples[i].weight).sum();
            sel_rows.clear();
            sel_idx.clear();
            for &i in batch {
                if samples[i].selected {
                    sel_rows.push(samples[i].row);
                    sel_idx.push(i);
                }
            }
            // A linear ranker is scored row by row; gathering the rows into a
            // matrix only pays off for the network.
            let fwd = match &beta {
                Scorer::Linear(_) => None,
                Scorer::Mlp(_) => (!sel_rows.is_empty()).then(|| beta.forward(&x.select(ndarray::Axis(0), &sel_rows), Some(&mut drop_rng))),
            };
            let mut g_beta = vec![0.0; dim];
            let mut g_beta_b = 0.0;
            let mut up_beta = Array1::zeros(sel_rows.len());
            let mut g_omega = vec![0.0; dim];
            let mut g_omega_b = 0.0;
            let w_omega = Array1::from(omega.weights.clone());
            let mut k = 0;
            for &i in batch {
                let s = &samples[i];
                let row = x.row(s.row);
                let u = row.dot(&w_omega) + omega.bias;
                let a = match (&beta, &fwd) {
                    (_, _) if !s.selected => 0.0,
                    (Scorer::Linear(m), _) => row.dot(&ndarray::ArrayView1::from(&m.weights[..])) + m.bias,
                    (_, Some(f)) => f.0[k],
                    (_, None) => 0.0,
                };
                let t = cld_scalar_loss(s.selected, s.target, a, u, config.gamma)?;
                let w = s.weight / bw;
                epoch_loss += s.weight * t.loss;
                if s.selected {
                    if fwd.is_some() {
                        up_beta[k] = w * t.d_a;
                    } else {
                        for (g, v) in g_beta.iter_mut().zip(row.iter()) {
                            *g += w * t.d_a * v;
                        }
                        g_beta_b += w * t.d_a;
                    }
                    k += 1;
                }
                for (g, v) in g_omega.iter_mut().zip(row.iter()) {
                    *g += w * t.d_u * v;
                }
                g_omega_b += w * t.d_u;
            }
            if let Some((_, cache)) = &fwd {
                let grads = beta.backward(cache, &up_beta);
                opt_beta.step(&mut beta.blocks_mut(), &grads)?;
            } else if k > 0 {
                opt_beta.step(&mut beta.blocks_mut(), &[g_beta, vec![g_beta_b]])?;
            }
            let mut blocks: Vec<ParamBlock<'_>> = omega.blocks_mut();
            opt_omega.step(&mut blocks, &[g_omega, vec![g_omega_b]])?;
        }
        trace.push(epoch_loss / total_w);
    }
    Ok(CldFit { beta, omega, trace })
}

/// Train from a click log. The linear variant keeps one sample per record.
/// The network variant merges records that are identical in every field the
/// loss reads (document, selection, click, propensity) into one weighted
/// sample, which leaves the summed objective unchanged.
pub fn train_cld(log: &ClickLog, dataset: &Dataset, config: &TrainConfig, neural: bool) -> Result<TrainedRanker> {
    config.validate()?;
    check_log(log, dataset)?;
    let table = FeatureTable::new(dataset);
    let target = |r: &crate::clicksim::ClickRecord| if r.selected { r.reweighted_click() } else { Ok(0.0) };
    let samples: Vec<CldSample> = if neural {
        let mut merged: BTreeMap<(usize, usize, bool, bool, u64), f64> = BTreeMap::new();
        for r in &log.records {
            *merged.entry((r.query, r.doc, r.selected, r.clicked, r.propensity.to_bits())).or_insert(0.0) += 1.0;
        }
        let mut out = Vec::with_capacity(merged.len());
        for (&(q, d, selected, clicked, rho), &w) in &merged {
            let t = if selected { super::ips_reweight(f64::from(u8::from(clicked)), f64::from_bits(rho))? } else { 0.0 };
            out.push(CldSample { row: table.row(q, d), selected, target: t, weight: w });
        }
        out
    } else {
        log.records
            .iter()
            .map(|r| Ok(CldSample { row: table.row(r.query, r.doc), selected: r.selected, target: target(r)?, weight: 1.0 }))
            .collect::<Result<_>>()?
    };
    let mut rng = config.rng();
    let init = if neural { config.mlp(dataset.feature_dim, &mut rng)? } else { Scorer::Linear(LinearModel::zeros(dataset.feature_dim)) };
    let fit = fit_cld(&table.x, &samples, init, config)?;
    let method = if neural { Method::CldN } else { Method::Cld };
    Ok(TrainedRanker { method, beta: fit.beta, omega: Some(fit.omega), trace: fit.trace })
}
