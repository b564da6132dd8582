//! Feed-forward scorer `n -> hidden... -> 1` with elu activations and
//! inverted dropout on hidden activations.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Block, Checkpoint, ParamBlock};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];

/// Uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..=a))
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`, so a layer computes `a W + b` on row batches.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    /// Scaled dropout masks of the hidden layers, if dropout was active.
    masks: Vec<Option<Array2<f64>>>,
}

impl MlpModel {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Validation("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Validation(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| Dense { w: xavier_init(w[0], w[1], rng), b: Array1::zeros(w[1]) })
            .collect();
        Ok(MlpModel { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.w.ncols()).collect()
    }

    /// Forward pass over the rows of `x`. With `dropout_rng` set and a
    /// positive dropout rate, hidden activations are masked and rescaled by
    /// `1 / (1 - p)`.
    pub fn forward(&self, x: &Array2<f64>, dropout_rng: Option<&mut ChaCha8Rng>) -> (Array1<f64>, MlpCache) {
        let mut rng = dropout_rng.filter(|_| self.dropout > 0.0);
        let keep = 1.0 - self.dropout;
        let n_hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        let mut masks = Vec::with_capacity(n_hidden);
        let mut a = x.clone();
        for layer in &self.layers[..n_hidden] {
            let z = a.dot(&layer.w) + &layer.b;
            let mut h = z.mapv(elu);
            let mask = rng.as_deref_mut().map(|r| {
                Array2::from_shape_simple_fn(h.raw_dim(), || if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            });
            if let Some(m) = &mask {
                h *= m;
            }
            inputs.push(a);
            pre.push(z);
            masks.push(mask);
            a = h;
        }
        let out = &self.layers[n_hidden];
        let scores = a.dot(&out.w).column(0).to_owned() + out.b[0];
        inputs.push(a);
        (scores, MlpCache { inputs, pre, masks })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
        self.forward(&row, None).0[0]
    }

    /// Gradients of `sum_b upstream[b] * score_b` with respect to every
    /// layer's weights and biases, in [`MlpModel::blocks_mut`] order.
    pub fn backward(&self, cache: &MlpCache, upstream: &Array1<f64>) -> Vec<Vec<f64>> {
        let n_hidden = self.layers.len() - 1;
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone().insert_axis(Axis(1));
        for l in (0..self.layers.len()).rev() {
            if l < n_hidden {
                if let Some(m) = &cache.masks[l] {
                    delta *= m;
                }
                Zip::from(&mut delta).and(&cache.pre[l]).for_each(|d, &z| *d *= elu_grad(z));
            }
            let gw = cache.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.layers[l].w.t());
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        grads
            .into_iter()
            .flat_map(|(gw, gb)| [gw.iter().copied().collect(), gb.to_vec()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push(ParamBlock {
                name: format!("layer{i}.w"),
                values: layer.w.as_slice_mut().expect("contiguous weights"),
                decay: true,
            });
            out.push(ParamBlock {
                name: format!("layer{i}.b"),
                values: layer.b.as_slice_mut().expect("contiguous bias"),
                decay: false,
            });
        }
        out
    }

    pub(crate) fn write_blocks(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.meta(&format!("{prefix}.dropout"), &self.dropout.to_string());
        ck.meta(&format!("{prefix}.layers"), &self.layers.len().to_string());
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.w.as_standard_layout().iter().copied().collect();
            ck.blocks.push(Block::new(format!("{prefix}.layer{i}.w"), l.w.nrows(), l.w.ncols(), w));
            ck.blocks.push(Block::new(format!("{prefix}.layer{i}.b"), 1, l.b.len(), l.b.to_vec()));
        }
    }

    pub(crate) fn read_blocks(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| Error::Validation(format!("{prefix}: {m}"));
        let dropout: f64 = ck.get_meta(&format!("{prefix}.dropout"))?.parse().map_err(|_| bad("bad dropout"))?;
        let n: usize = ck.get_meta(&format!("{prefix}.layers"))?.parse().map_err(|_| bad("bad layer count"))?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = ck.block(&format!("{prefix}.layer{i}.w"))?;
            let b = ck.block(&format!("{prefix}.layer{i}.b"))?;
            if b.values.len() != w.cols {
                return Err(bad("bias length does not match layer width"));
            }
            if let Some(prev) = layers.last() {
                let prev: &Dense = prev;
                if prev.w.ncols() != w.rows {
                    return Err(bad("layer shapes do not chain"));
                }
            }
            let w = Array2::from_shape_vec((w.rows, w.cols), w.values.clone()).map_err(|_| bad("bad weight shape"))?;
            layers.push(Dense { w, b: Array1::from(b.values.clone()) });
        }
        if layers.is_empty() || layers.last().map(|l| l.w.ncols()) != Some(1) {
            return Err(bad("network must end in a single output"));
        }
        Ok(MlpModel { layers, dropout })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn flatten(m: &MlpModel) -> Vec<f64> {
        let mut m = m.clone();
        m.blocks_mut().into_iter().flat_map(|b| b.values.to_vec()).collect()
    }

    fn unflatten(m: &mut MlpModel, p: &[f64]) {
        let mut off = 0;
        for b in m.blocks_mut() {
            let n = b.values.len();
            b.values.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let w = xavier_init(2, 3, &mut rng(1));
        let a = (6.0f64 / 5.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= a));
        assert_eq!(w, xavier_init(2, 3, &mut rng(1)));
    }

    #[test]
    fn zero_network_scores_zero() {
        let mut m = MlpModel::new(4, &[8, 4], 0.5, &mut rng(2)).unwrap();
        for b in m.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.score(&[1.0, -2.0, 3.0, 0.5]), 0.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let m = MlpModel::new(3, &DEFAULT_HIDDEN, 0.5, &mut rng(3)).unwrap();
        let x = [0.3, -0.7, 1.1];
        assert_eq!(m.score(&x), m.score(&x));
    }

    #[test]
    fn zero_dropout_matches_inference_bit_exactly() {
        let m = MlpModel::new(3, &[16, 8], 0.0, &mut rng(4)).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let mut r = rng(9);
        assert_eq!(m.forward(&x, Some(&mut r)).0, m.forward(&x, None).0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = MlpModel::new(3, &[6, 4], 0.0, &mut rng(5)).unwrap();
        let x = Array2::from_elem((2, 3), 0.5);
        let (_, cache) = m.forward(&x, None);
        let g = m.backward(&cache, &Array1::zeros(2));
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_gradient_is_upstream_times_x() {
        let m = MlpModel::new(3, &[], 0.0, &mut rng(6)).unwrap();
        let x = Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let (_, cache) = m.forward(&x, None);
        let g = m.backward(&cache, &Array1::from(vec![2.0]));
        assert_eq!(g[0], vec![2.0, -4.0, 1.0]);
        assert_eq!(g[1], vec![2.0]);
    }

    #[test]
    fn backward_matches_finite_differences_with_frozen_masks() {
        let mut m = MlpModel::new(4, &[7, 5, 3], 0.3, &mut rng(7)).unwrap();
        for l in &mut m.layers {
            l.b.iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * i as f64 - 0.1);
        }
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let up = Array1::from_shape_fn(6, |i| 0.5 - 0.2 * i as f64);
        // Freeze the dropout masks by replaying the same RNG state.
        let base = m.clone();
        let loss = |p: &[f64]| {
            let mut mm = base.clone();
            unflatten(&mut mm, p);
            let (s, cache) = mm.forward(&x, Some(&mut rng(42)));
            let grads: Vec<f64> = mm.backward(&cache, &up).into_iter().flatten().collect();
            (s.dot(&up), grads)
        };
        let report = grad_check(loss, &flatten(&m), 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MlpModel::new(3, &[5, 2], 0.5, &mut rng(8)).unwrap();
        let mut ck = Checkpoint::default();
        m.write_blocks("beta", &mut ck);
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(MlpModel::read_blocks("beta", &back).unwrap(), m);
    }
}
