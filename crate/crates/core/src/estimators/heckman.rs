//! Heckman two-stage correction: a probit selection model, then least
//! squares of clicks on the features and the inverse Mills ratio of the
//! selection index over the selected records.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use super::{check_log, FeatureTable, Method, TrainConfig, TrainedRanker};
use crate::clicksim::ClickLog;
use crate::dataset::Dataset;
use crate::models::{AdamW, LinearModel, ParamBlock, Scorer};
use crate::numerics::{inverse_mills, log_phi_cdf};
use crate::{Error, Result};

const STAGE1_STEPS: usize = 400;
const STAGE1_LR: f64 = 0.05;
/// Second-stage ridge strength per unit of record weight.
const RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct HeckmanFit {
    /// Probit selection model.
    pub omega: LinearModel,
    /// Outcome coefficients on the features, with intercept.
    pub beta: LinearModel,
    /// Coefficient of the inverse Mills ratio.
    pub mills_coef: f64,
}

/// Two-stage fit on weighted rows. Row `i` stands for `weights[i]` identical
/// records with features `x[i]`, selection flag `selected[i]` and, when
/// selected, mean click `clicks[i]`.
pub fn heckman_from_rows(x: &Array2<f64>, selected: &[bool], clicks: &[f64], weights: &[f64], l2: f64) -> Result<HeckmanFit> {
    let n = x.nrows();
    if selected.len() != n || clicks.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: selected.len().min(clicks.len()).min(weights.len()) });
    }
    let n_sel = selected.iter().filter(|&&s| s).count();
    if n_sel == 0 || n_sel == n {
        return Err(Error::Validation("the two-stage fit needs both selected and unselected records".into()));
    }
    let omega = fit_probit(x, selected, weights, l2)?;

    let dim = x.ncols();
    let sel_rows: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
    let u = omega.forward(x);
    let design = DMatrix::from_fn(sel_rows.len(), dim + 2, |r, c| {
        let i = sel_rows[r];
        let sw = weights[i].sqrt();
        let v = if c < dim {
            x[[i, c]]
        } else if c == dim {
            inverse_mills(u[i])
        } else {
            1.0
        };
        sw * v
    });
    let rhs = DVector::from_iterator(sel_rows.len(), sel_rows.iter().map(|&i| weights[i].sqrt() * clicks[i]));
    // A small ridge on the slopes pins down the solution when the Mills
    // regressor is close to collinear with the features, which happens when
    // selection barely depends on them.
    let ridge = RIDGE * sel_rows.iter().map(|&i| weights[i]).sum::<f64>();
    let mut normal = design.transpose() * &design;
    for c in 0..=dim {
        normal[(c, c)] += ridge;
    }
    let coef = normal
        .cholesky()
        .ok_or_else(|| Error::Validation("second-stage normal equations are singular".into()))?
        .solve(&(design.transpose() * rhs));
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("second-stage coefficients".into()));
    }
    Ok(HeckmanFit {
        omega,
        beta: LinearModel { weights: coef.rows(0, dim).iter().copied().collect(), bias: coef[dim + 1] },
        mills_coef: coef[dim],
    })
}

/// Penalized probit maximum likelihood by full-batch gradient ascent.
fn fit_probit(x: &Array2<f64>, selected: &[bool], weights: &[f64], l2: f64) -> Result<LinearModel> {
    let total: f64 = weights.iter().sum();
    let mut omega = LinearModel::zeros(x.ncols());
    let mut opt = AdamW::new(STAGE1_LR, l2);
    for _ in 0..STAGE1_STEPS {
        let u = omega.forward(x);
        let mut loss = 0.0;
        let mut up = Array1::zeros(x.nrows());
        for i in 0..x.nrows() {
            let w = weights[i] / total;
            if selected[i] {
                loss -= w * log_phi_cdf(u[i]);
                up[i] = -w * inverse_mills(u[i]);
            } else {
                loss -= w * log_phi_cdf(-u[i]);
                up[i] = w * inverse_mills(-u[i]);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("selection-model likelihood diverged".into()));
        }
        let grads = omega.backward(x, &up);
        let mut blocks: Vec<ParamBlock<'_>> = omega.blocks_mut();
        opt.step(&mut blocks, &grads)?;
    }
    Ok(omega)
}

pub fn train_heckman(log: &ClickLog, dataset: &Dataset, config: &TrainConfig) -> Result<TrainedRanker> {
    config.validate()?;
    check_log(log, dataset)?;
    let mut rows: BTreeMap<(usize, usize, bool), (f64, f64)> = BTreeMap::new();
    for r in &log.records {
        let e = rows.entry((r.query, r.doc, r.selected)).or_insert((0.0, 0.0));
        e.0 += f64::from(u8::from(r.clicked));
        e.1 += 1.0;
    }
    let table = FeatureTable::new(dataset);
    let idx: Vec<usize> = rows.keys().map(|&(q, d, _)| table.row(q, d)).collect();
    let x = table.gather(&idx);
    let selected: Vec<bool> = rows.keys().map(|k| k.2).collect();
    let clicks: Vec<f64> = rows.values().map(|&(c, n)| c / n).collect();
    let weights: Vec<f64> = rows.values().map(|&(_, n)| n).collect();
    let fit = heckman_from_rows(&x, &selected, &clicks, &weights, config.l2)?;
    Ok(TrainedRanker { method: Method::Heckman, beta: Scorer::Linear(fit.beta), omega: Some(fit.omega), trace: Vec::new() })
}
