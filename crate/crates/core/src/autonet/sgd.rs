use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stochastic gradient descent with momentum and L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
            || self.batch_size == 0
        {
            return Err(Error::Invalid(format!(
                "bad SGD settings: lr {} momentum {} weight decay {} batch {}",
                self.lr, self.momentum, self.weight_decay, self.batch_size
            )));
        }
        Ok(())
    }
}

/// One update: `v <- mu*v - lr*(g + lambda*w)`, `w <- w + v`.
pub fn sgd_step(
    weights: &mut [&mut Tensor],
    velocities: &mut [Tensor],
    grads: &[Tensor],
    cfg: &SgdConfig,
) -> Result<()> {
    if weights.len() != velocities.len() || weights.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} weights, {} velocities, {} gradients",
            weights.len(),
            velocities.len(),
            grads.len()
        )));
    }
    for ((w, v), g) in weights.iter_mut().zip(velocities.iter_mut()).zip(grads) {
        if w.shape() != v.shape() || w.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "weight {:?}, velocity {:?}, gradient {:?}",
                w.shape(),
                v.shape(),
                g.shape()
            )));
        }
        for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi - cfg.lr * (gi + cfg.weight_decay * *wi);
            *wi += *vi;
        }
    }
    Ok(())
}

/// Velocity buffers for a parameter list.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocities: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn step(&mut self, weights: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        sgd_step(weights, &mut self.velocities, grads, &self.config)
    }
}
