//! Optimizers and the step-decay learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Unit of the decay interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayUnit {
    Steps,
    Epochs,
}

/// Multiply the rate by `rate` every `interval` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decay {
    pub rate: f64,
    pub interval: u64,
    #[serde(default = "default_unit")]
    pub unit: DecayUnit,
}

fn default_unit() -> DecayUnit {
    DecayUnit::Steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CategoricalCrossentropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub decay: Option<Decay>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default = "default_loss")]
    pub loss: Loss,
}

fn default_loss() -> Loss {
    Loss::CategoricalCrossentropy
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            decay: None,
            weight_decay: None,
            momentum: None,
            loss: Loss::CategoricalCrossentropy,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: Option<f64>) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, momentum, ..Self::adam(learning_rate) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(alloc::format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if let Some(d) = &self.decay {
            if !(d.rate > 0.0 && d.rate <= 1.0) {
                return bad(alloc::format!("decay rate {} outside (0, 1]", d.rate));
            }
            if d.interval == 0 {
                return bad("decay interval must be at least 1".into());
            }
        }
        if let Some(m) = self.momentum {
            if self.kind != OptimizerKind::Sgd {
                return bad("momentum only applies to sgd".into());
            }
            if !(0.0..1.0).contains(&m) {
                return bad(alloc::format!("momentum {m} outside [0, 1)"));
            }
        }
        if let Some(w) = self.weight_decay {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(alloc::format!("weight_decay {w} must be >= 0"));
            }
        }
        Ok(())
    }

    /// Learning rate after `count` decay units have elapsed.
    pub fn lr_at(&self, count: u64) -> f64 {
        lr_at(count, self)
    }

    /// Rate in effect for optimizer step `step` taken during `epoch`.
    pub fn lr_for(&self, step: u64, epoch: u64) -> f64 {
        match self.decay.map(|d| d.unit) {
            Some(DecayUnit::Epochs) => lr_at(epoch, self),
            _ => lr_at(step, self),
        }
    }
}

/// `learning_rate * rate ^ floor(count / interval)`.
pub fn lr_at(count: u64, config: &OptimizerConfig) -> f64 {
    match &config.decay {
        None => config.learning_rate,
        Some(d) => {
            let k = count / d.interval;
            config.learning_rate * libm::pow(d.rate, k as f64)
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f32 = 1e-7;

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, shapes: &[usize]) -> Self {
        let second = match config.kind {
            OptimizerKind::Adam => shapes.iter().map(|&n| vec![0.0; n]).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer { config, first: shapes.iter().map(|&n| vec![0.0; n]).collect(), second, steps: 0 }
    }

    /// Apply one update. `params` pairs each tensor with its weight-decay flag.
    pub fn step(&mut self, params: Vec<(&mut Vec<f32>, bool)>, grads: &[Vec<f32>], lr: f64) {
        self.steps += 1;
        let wd = self.config.weight_decay.unwrap_or(0.0) as f32;
        match self.config.kind {
            OptimizerKind::Adam => {
                let t = self.steps as f64;
                let corr = libm::sqrt(1.0 - libm::pow(ADAM_BETA2, t)) / (1.0 - libm::pow(ADAM_BETA1, t));
                let step = (lr * corr) as f32;
                let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
                for (i, (p, decays)) in params.into_iter().enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..p.len() {
                        let g = grads[i][j] + if decays { wd * p[j] } else { 0.0 };
                        m[j] = b1 * m[j] + (1.0 - b1) * g;
                        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                        p[j] -= step * m[j] / (libm::sqrtf(v[j]) + ADAM_EPSILON);
                    }
                }
            }
            OptimizerKind::Sgd => {
                let mu = self.config.momentum.unwrap_or(0.0) as f32;
                let lr = lr as f32;
                for (i, (p, decays)) in params.into_iter().enumerate() {
                    let vel = &mut self.first[i];
                    for j in 0..p.len() {
                        let g = grads[i][j] + if decays { wd * p[j] } else { 0.0 };
                        vel[j] = mu * vel[j] - lr * g;
                        p[j] += vel[j];
                    }
                }
            }
        }
    }
}
