//! Adam/AdamW over a [`ParamSet`], with an optional staircase learning-rate
//! schedule. Moment buffers mirror the parameter list one-to-one.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tape::ParamSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW). Zero disables it.
    pub weight_decay: f64,
    /// `(step_threshold, multiplier)` pairs applied to `lr` once the step
    /// counter passes each threshold. Staircase decay; empty means constant.
    pub lr_drops: Vec<(u64, f64)>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 6.25e-5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
            lr_drops: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| Array2::zeros(params.get(i).dim()))
            .collect();
        let v = (0..params.len())
            .map(|i| Array2::zeros(params.get(i).dim()))
            .collect();
        Adam { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Effective learning rate after staircase drops at the current step.
    pub fn current_lr(&self) -> f64 {
        let mut lr = self.cfg.lr;
        for &(threshold, mult) in &self.cfg.lr_drops {
            if self.step >= threshold {
                lr *= mult;
            }
        }
        lr
    }

    /// Applies one update. `grads` is indexed like the parameter set;
    /// `None` entries (parameters untouched by the batch) are skipped
    /// entirely — their moments do not decay either, which keeps a
    /// zero-gradient step exactly identity.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Array2<f64>>]) {
        self.step += 1;
        let lr = self.current_lr();
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let wd = self.cfg.weight_decay;
            let p = params.get_mut(idx);
            for ((p, m), v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / bias1;
                let vhat = v / bias2;
                let mut delta = lr * mhat / (vhat.sqrt() + self.cfg.eps);
                if wd > 0.0 {
                    delta += lr * wd * *p;
                }
                *p -= delta;
            }
        }
    }

    /// Serializes optimizer moments as flat vectors (for checkpoints).
    pub fn state_flat(&self) -> (Vec<f64>, Vec<f64>, u64) {
        let flatten = |bufs: &[Array2<f64>]| {
            let mut out = Vec::new();
            for b in bufs {
                out.extend(b.iter().copied());
            }
            out
        };
        (flatten(&self.m), flatten(&self.v), self.step)
    }

    pub fn load_state_flat(&mut self, m: &[f64], v: &[f64], step: u64) {
        let load = |bufs: &mut [Array2<f64>], flat: &[f64]| {
            let mut off = 0;
            for b in bufs.iter_mut() {
                for x in b.iter_mut() {
                    *x = flat[off];
                    off += 1;
                }
            }
            assert_eq!(off, flat.len(), "optimizer state size mismatch");
        };
        load(&mut self.m, m);
        load(&mut self.v, v);
        self.step = step;
    }
}
