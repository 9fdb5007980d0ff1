//! SGD with momentum and weight decay, plus the stepped learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::network::{LayerParams, NetworkState};
use crate::nncore::tensor::Scalar;

/// Hyperparameters of the training protocol.
///
/// Defaults: mini-batches of 256 samples, momentum 0.9, weight decay 5e-4,
/// learning rate stepping down from 1e-2 and clamped at 5e-4.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_final: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_init: 1e-2,
            lr_final: 5e-4,
            lr_decay_factor: 0.5,
            lr_decay_every: 5,
            max_epochs: 30,
            patience: 5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_init) {
            return Err(Error::Config(format!(
                "need 0 < lr_final <= lr_init, got {} / {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0,1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Step decay: lr(e) = max(lr_final, lr_init * factor^floor(e / every)).
/// Monotone non-increasing, equals lr_init at epoch 0, clamped at lr_final.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_decay_every) as i32;
    (cfg.lr_init * cfg.lr_decay_factor.powi(steps)).max(cfg.lr_final)
}

/// One SGD update:
///   v <- momentum * v - lr * (g + weight_decay * w)
///   w <- w + v
/// Biases receive no weight decay.
pub fn sgd_step<T: Scalar>(
    state: &mut NetworkState<T>,
    grads: &[Option<LayerParams<T>>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::Usage(format!(
            "{} gradient slots for {} layers",
            grads.len(),
            state.params.len()
        )));
    }
    let lr = T::from_f64(lr);
    let mom = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    for (li, grad) in grads.iter().enumerate() {
        let (Some(g), Some(p), Some(v)) = (
            grad.as_ref(),
            state.params[li].as_mut(),
            state.velocity[li].as_mut(),
        ) else {
            if grad.is_some() != state.params[li].is_some() {
                return Err(Error::Usage(format!(
                    "gradient present/absent mismatch at layer {li}"
                )));
            }
            continue;
        };
        if g.weights.shape() != p.weights.shape() || g.bias.shape() != p.bias.shape() {
            return Err(Error::Usage(format!(
                "gradient shapes do not match parameters at layer {li}"
            )));
        }
        for ((w, vel), &gw) in p
            .weights
            .data_mut()
            .iter_mut()
            .zip(v.weights.data_mut())
            .zip(g.weights.data())
        {
            *vel = mom * *vel - lr * (gw + wd * *w);
            *w += *vel;
        }
        for ((b, vel), &gb) in p
            .bias
            .data_mut()
            .iter_mut()
            .zip(v.bias.data_mut())
            .zip(g.bias.data())
        {
            *vel = mom * *vel - lr * gb;
            *b += *vel;
        }
    }
    Ok(())
}
