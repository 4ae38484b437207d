use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate factor at the start of warmup.
    pub warmup_start: f64,
    pub warmup_epochs: f64,
    /// Length of the first cosine cycle.
    pub t0: f64,
    /// Growth factor of successive cycles.
    pub t_mult: f64,
    pub lr_floor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            clip_norm: 1.0,
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_start: 0.1,
            warmup_epochs: 20.0,
            t0: 20.0,
            t_mult: 2.0,
            lr_floor: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.clip_norm, self.eps, self.warmup_start, self.t0];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.batch_size == 0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.warmup_epochs < 0.0
            || self.t_mult < 1.0
            || self.lr_floor < 0.0
        {
            return Err(Error::invalid(format!("invalid optimiser config {self:?}")));
        }
        Ok(())
    }

    /// Learning rate at a (possibly fractional) epoch: linear warmup from
    /// `warmup_start · lr` to `lr`, then cosine annealing with warm restarts
    /// of lengths `t0, t0·t_mult, …`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.max(0.0);
        if epoch < self.warmup_epochs {
            let frac = epoch / self.warmup_epochs;
            return self.lr * (self.warmup_start + (1.0 - self.warmup_start) * frac);
        }
        let mut t = epoch - self.warmup_epochs;
        let mut len = self.t0;
        while t >= len {
            t -= len;
            len *= self.t_mult;
        }
        let cos = (std::f64::consts::PI * t / len).cos();
        self.lr_floor + (self.lr - self.lr_floor) * (1.0 + cos) / 2.0
    }
}

/// Learning rate of the default schedule at `epoch`.
pub fn lr_at(epoch: f64) -> f64 {
    OptimConfig::default().lr_at(epoch)
}

/// What an [`Adam::step`] did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// Parameters updated; carries the pre-clip gradient norm.
    Applied { grad_norm: f64 },
    /// Non-finite gradient; parameters untouched.
    Skipped,
}

/// Adam with bias correction and global gradient-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    config: OptimConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: OptimConfig) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect()
        };
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips `grads` to global norm `clip_norm` and applies one update.
    pub fn step(&mut self, params: &mut ParamStore, mut grads: Vec<Tensor>, lr: f64) -> Result<StepOutcome> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
        if !norm.is_finite() {
            log::warn!("skipping optimiser step {}: non-finite gradient", self.step + 1);
            return Ok(StepOutcome::Skipped);
        }
        if norm > self.config.clip_norm {
            let f = self.config.clip_norm / norm;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= f);
            }
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            if p.shape() != grads[k].shape() {
                return Err(Error::invalid("gradient shape differs from parameter"));
            }
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *x -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(StepOutcome::Applied { grad_norm: norm })
    }
}
