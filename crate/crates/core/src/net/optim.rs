//! Decoupled-weight-decay adaptive optimizer with a linear-warmup /
//! cosine-annealing learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    1e-4
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Steps of linear warmup from a zero multiplier.
    pub warmup_steps: usize,
    /// Total steps of the schedule (cosine anneal to zero afterward).
    pub total_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
            warmup_steps: 100,
            total_steps: 10_000,
        }
    }
}

/// Learning-rate multiplier at `step` (0-based): step/warmup during warmup,
/// then cosine from 1 to 0 across the remaining steps.
pub fn lr_multiplier(step: usize, warmup_steps: usize, total_steps: usize) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return step as f64 / warmup_steps as f64;
    }
    let total = total_steps.max(warmup_steps + 1);
    let progress = (step - warmup_steps) as f64 / (total - warmup_steps) as f64;
    let progress = progress.clamp(0.0, 1.0);
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub struct AdamW {
    pub cfg: OptimConfig,
    step_count: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig) -> Self {
        AdamW { cfg, step_count: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr * lr_multiplier(self.step_count, self.cfg.warmup_steps, self.cfg.total_steps)
    }

    /// One optimizer step. Parameters without a gradient entry are treated
    /// as having zero gradient (decay still applies through the update rule).
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::invalid_argument(format!("gradient for unknown param {name}")))?;
            if p.data.len() != g.len() {
                return Err(Error::invalid_argument(format!(
                    "gradient shape mismatch for {name}: {} vs {}",
                    g.len(),
                    p.data.len()
                )));
            }
        }
        let lr = self.current_lr();
        let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay);
        let t = (self.step_count + 1) as i32;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);

        for (name, g) in grads {
            let p = params.get_mut(name).unwrap();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                // Decoupled decay: applied directly to the parameter.
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p.data[i]);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
