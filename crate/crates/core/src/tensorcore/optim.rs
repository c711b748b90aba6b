use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Linear warmup to the peak, then decay with `sqrt(warmup / step)`.
    InverseSqrt,
    /// Linear warmup to the peak, then multiply by `decay` every step.
    Exponential { decay: f64 },
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub schedule: ScheduleKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 2e-3,
            warmup_steps: 300,
            schedule: ScheduleKind::InverseSqrt,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-6,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0,1)".into()));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config("eps and clip norm must be > 0, weight decay ≥ 0".into()));
        }
        Ok(())
    }

    /// Learning rate for 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        let warm = self.warmup_steps as f64;
        let ramp = if warm > 0.0 { (step / warm).min(1.0) } else { 1.0 };
        match self.schedule {
            ScheduleKind::Constant => self.lr * ramp,
            ScheduleKind::InverseSqrt => {
                if step <= warm {
                    self.lr * ramp
                } else {
                    self.lr * (warm.max(1.0) / step).sqrt()
                }
            }
            ScheduleKind::Exponential { decay } => {
                if step <= warm {
                    self.lr * ramp
                } else {
                    self.lr * decay.powf(step - warm)
                }
            }
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: OptimConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    frozen: Vec<bool>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: OptimConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
        Ok(Adam {
            cfg,
            frozen: vec![false; zeros.len()],
            second: zeros.clone(),
            first: zeros,
            step: 0,
        })
    }

    /// Excludes a parameter from updates (weight decay included).
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.index()] = true;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Clips `grads` to the configured global norm and applies one update.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut GradBuffer) -> f64 {
        let norm = grads.clip_global_norm(self.cfg.clip_norm);
        self.step += 1;
        let lr = self.cfg.lr_at(self.step);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if self.frozen[id.index()] {
                continue;
            }
            let g = grads.get(id);
            let p = store.get_mut(id);
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for i in 0..p.data.len() {
                let gi = g[i] + self.cfg.weight_decay * p.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
        norm
    }
}
