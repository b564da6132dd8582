//! Adam with decoupled weight decay.

use crate::{Error, Result};

/// A named, flat view of one parameter tensor.
#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` must match `blocks[i]` in length. All
    /// gradients are checked before any parameter is touched.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>], grads: &[Vec<f64>]) -> Result<()> {
        if blocks.len() != grads.len() {
            return Err(Error::DimensionMismatch { expected: blocks.len(), got: grads.len() });
        }
        for (b, g) in blocks.iter().zip(grads) {
            if b.values.len() != g.len() {
                return Err(Error::DimensionMismatch { expected: b.values.len(), got: g.len() });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter block {}", b.name)));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Validation("parameter shapes changed between optimizer steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for (k, (b, g)) in blocks.iter_mut().zip(grads).enumerate() {
            let decay = if b.decay { lr * self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                b.values[i] -= lr * mhat / (vhat.sqrt() + self.eps) + decay * b.values[i];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: &mut f64) -> Vec<ParamBlock<'_>> {
        vec![ParamBlock { name: "p".into(), values: std::slice::from_mut(p), decay: true }]
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = 1.5;
        let mut opt = AdamW::new(1e-2, 0.0);
        for _ in 0..10 {
            opt.step(&mut scalar(&mut p), &[vec![0.0]]).unwrap();
        }
        assert_eq!(p, 1.5);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = 0.0;
        let mut opt = AdamW::new(1e-3, 0.0);
        let mut prev = p;
        for _ in 0..100 {
            opt.step(&mut scalar(&mut p), &[vec![2.0]]).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = 0.0f64;
        let mut opt = AdamW::new(1e-2, 0.0);
        let mut steps = 0;
        while steps < 5000 {
            let g = p - 3.0;
            opt.step(&mut scalar(&mut p), &[vec![g]]).unwrap();
            steps += 1;
        }
        assert!((p - 3.0).abs() < 1e-3, "p = {p}");
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut w = [1.0, 2.0];
        let mut b = 0.0;
        let mut blocks = vec![
            ParamBlock { name: "weights".into(), values: &mut w, decay: true },
            ParamBlock { name: "bias".into(), values: std::slice::from_mut(&mut b), decay: false },
        ];
        let err = AdamW::new(1e-3, 0.0).step(&mut blocks, &[vec![0.0, 0.0], vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
        assert_eq!(w, [1.0, 2.0]);
    }

    #[test]
    fn decay_skips_biases() {
        let mut w = [1.0];
        let mut b = 1.0;
        let mut blocks = vec![
            ParamBlock { name: "w".into(), values: &mut w, decay: true },
            ParamBlock { name: "b".into(), values: std::slice::from_mut(&mut b), decay: false },
        ];
        AdamW::new(0.1, 0.5).step(&mut blocks, &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(w[0], 0.95);
        assert_eq!(b, 1.0);
    }
}
