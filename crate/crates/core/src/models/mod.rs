//! Parameter containers with hand-written gradients, the optimizer, and the
//! checkpoint text format.

mod checkpoint;
mod linear;
mod mlp;
mod optim;

pub use checkpoint::{Block, Checkpoint};
pub use linear::{linear_score, LinearModel};
pub use mlp::{xavier_init, MlpCache, MlpModel, DEFAULT_HIDDEN};
pub use optim::{AdamW, ParamBlock};

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A ranking (or selection) function of the feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Linear(LinearModel),
    Mlp(MlpModel),
}

#[derive(Debug, Clone)]
pub enum ScorerCache {
    Linear(Array2<f64>),
    Mlp(MlpCache),
}

impl Scorer {
    pub fn input_dim(&self) -> usize {
        match self {
            Scorer::Linear(m) => m.weights.len(),
            Scorer::Mlp(m) => m.input_dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Scorer::Linear(_) => "linear",
            Scorer::Mlp(_) => "mlp",
        }
    }

    /// Scores for the rows of `x`. Dropout is applied only when an RNG is given.
    pub fn forward(&self, x: &Array2<f64>, dropout_rng: Option<&mut ChaCha8Rng>) -> (Array1<f64>, ScorerCache) {
        match self {
            Scorer::Linear(m) => (m.forward(x), ScorerCache::Linear(x.clone())),
            Scorer::Mlp(m) => {
                let (s, c) = m.forward(x, dropout_rng);
                (s, ScorerCache::Mlp(c))
            }
        }
    }

    /// Gradients of `sum_b upstream[b] * score_b`, one flat vector per
    /// parameter block in [`Scorer::blocks_mut`] order.
    pub fn backward(&self, cache: &ScorerCache, upstream: &Array1<f64>) -> Vec<Vec<f64>> {
        match (self, cache) {
            (Scorer::Linear(m), ScorerCache::Linear(x)) => m.backward(x, upstream),
            (Scorer::Mlp(m), ScorerCache::Mlp(c)) => m.backward(c, upstream),
            _ => panic!("cache does not belong to this scorer"),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        match self {
            Scorer::Linear(m) => m.blocks_mut(),
            Scorer::Mlp(m) => m.blocks_mut(),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        match self {
            Scorer::Linear(m) => linear_score(m, x),
            Scorer::Mlp(m) => Ok(m.score(x)),
        }
    }

    /// Scores of many rows at inference time.
    pub fn score_rows(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(self.forward(x, None).0)
    }

    pub fn write_blocks(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.meta(&format!("{prefix}.kind"), self.kind());
        match self {
            Scorer::Linear(m) => m.write_blocks(prefix, ck),
            Scorer::Mlp(m) => m.write_blocks(prefix, ck),
        }
    }

    pub fn read_blocks(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        match ck.get_meta(&format!("{prefix}.kind"))? {
            "linear" => Ok(Scorer::Linear(LinearModel::read_blocks(prefix, ck)?)),
            "mlp" => Ok(Scorer::Mlp(MlpModel::read_blocks(prefix, ck)?)),
            other => Err(Error::Validation(format!("unknown scorer kind {other:?}"))),
        }
    }
}

/// Stack feature rows into a matrix.
pub fn stack_rows<'a, I>(rows: I, dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), dim);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), data).expect("row lengths match dim")
}
