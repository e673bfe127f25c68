//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Plain SGD or Adam. State is allocated on the first step and keyed by the
/// position of each slice, so callers must pass slices in a fixed order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one descent step. `skip[i]` freezes slice `i`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, skip: &[bool]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let (b1t, b2t) = (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t));
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if skip.get(i).copied().unwrap_or(false) {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= self.lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        p[j] -= self.lr * (m[j] / b1t) / ((v[j] / b2t).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut x = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.1);
            for _ in 0..500 {
                let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                opt.step(vec![&mut x], vec![&g], &[]);
            }
            assert!(x.iter().all(|v| v.abs() < 1e-2), "{kind:?}: {x:?}");
        }
    }
}
