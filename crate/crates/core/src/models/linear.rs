use ndarray::{Array1, Array2};
use rand::Rng;

use super::{Block, Checkpoint, ParamBlock};
use crate::{Error, Result};

/// `score(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel { weights: vec![0.0; dim], bias: 0.0 }
    }

    /// Xavier-uniform weights for a `dim -> 1` layer, zero bias.
    pub fn xavier<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let w = super::xavier_init(dim, 1, rng);
        LinearModel { weights: w.into_raw_vec_and_offset().0, bias: 0.0 }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array1<f64> {
        let w = Array1::from(self.weights.clone());
        x.dot(&w) + self.bias
    }

    pub(crate) fn backward(&self, x: &Array2<f64>, upstream: &Array1<f64>) -> Vec<Vec<f64>> {
        let gw = x.t().dot(upstream);
        vec![gw.to_vec(), vec![upstream.sum()]]
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock { name: "weights".into(), values: &mut self.weights, decay: true },
            ParamBlock { name: "bias".into(), values: std::slice::from_mut(&mut self.bias), decay: false },
        ]
    }

    pub(crate) fn write_blocks(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.blocks.push(Block::new(format!("{prefix}.weights"), 1, self.weights.len(), self.weights.clone()));
        ck.blocks.push(Block::new(format!("{prefix}.bias"), 1, 1, vec![self.bias]));
    }

    pub(crate) fn read_blocks(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let w = ck.block(&format!("{prefix}.weights"))?;
        let b = ck.block(&format!("{prefix}.bias"))?;
        if b.values.len() != 1 {
            return Err(Error::Validation(format!("{prefix}.bias must hold one value")));
        }
        Ok(LinearModel { weights: w.values.clone(), bias: b.values[0] })
    }
}

pub fn linear_score(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.weights.len() {
        return Err(Error::DimensionMismatch { expected: model.weights.len(), got: x.len() });
    }
    Ok(crate::dataset::dot(&model.weights, x) + model.bias)
}
