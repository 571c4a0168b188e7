//! Noam-style learning rate with a peak factor, multiplicative plateau decay
//! and a stop threshold.
//!
//! `lr(n) = p · d_model^−0.5 · min(n^−0.5, n · N_warmup^−1.5) · scale`

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step must be at least 1")]
    ZeroStep,
    #[error("validation loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("invalid scheduler config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub d_model: usize,
    pub warmup_steps: u64,
    pub peak_factor: f64,
    pub plateau_factor: f64,
    pub stop_threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            warmup_steps: 25_000,
            peak_factor: 1.0,
            plateau_factor: 0.3,
            stop_threshold: 1e-6,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.d_model == 0 || self.warmup_steps == 0 {
            return Err(ScheduleError::Config("d_model and warmup_steps must be positive".into()));
        }
        if !(self.peak_factor > 0.0 && self.peak_factor.is_finite()) {
            return Err(ScheduleError::Config(format!("peak_factor {}", self.peak_factor)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(ScheduleError::Config(format!("plateau_factor {}", self.plateau_factor)));
        }
        if !(self.stop_threshold >= 0.0) {
            return Err(ScheduleError::Config(format!("stop_threshold {}", self.stop_threshold)));
        }
        Ok(())
    }

    /// The schedule before any plateau decay.
    pub fn base_lr(&self, n: u64) -> Result<f64, ScheduleError> {
        if n == 0 {
            return Err(ScheduleError::ZeroStep);
        }
        let n = n as f64;
        let warm = self.warmup_steps as f64;
        Ok(self.peak_factor * (self.d_model as f64).powf(-0.5) * n.powf(-0.5).min(n * warm.powf(-1.5)))
    }

    pub fn peak_lr(&self) -> f64 {
        self.peak_factor * (self.d_model as f64).powf(-0.5) * (self.warmup_steps as f64).powf(-0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub step: u64,
    pub best_val_loss: f64,
    pub scale: f64,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self, ScheduleError> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            best_val_loss: f64::INFINITY,
            scale: 1.0,
        })
    }

    pub fn lr_at(&self, n: u64) -> Result<f64, ScheduleError> {
        Ok(self.config.base_lr(n)? * self.scale)
    }

    /// Advances one optimizer step and returns the rate to use for it.
    pub fn advance(&mut self) -> f64 {
        self.step += 1;
        self.config.base_lr(self.step).expect("step is positive") * self.scale
    }

    /// Records a validation loss; returns true when it triggered a decay.
    pub fn on_validation(&mut self, val_loss: f64) -> Result<bool, ScheduleError> {
        if !val_loss.is_finite() {
            return Err(ScheduleError::NonFiniteLoss(val_loss));
        }
        if val_loss >= self.best_val_loss {
            self.scale *= self.config.plateau_factor;
            Ok(true)
        } else {
            self.best_val_loss = val_loss;
            Ok(false)
        }
    }

    /// True once the rate at the current step (or step 1 before training)
    /// has fallen below the stop threshold.
    pub fn should_stop(&self) -> bool {
        let lr = self.lr_at(self.step.max(1)).expect("step is positive");
        lr < self.config.stop_threshold
    }

    /// `(step, lr)` rows for steps `1..=steps` at the current scale.
    pub fn dump(&self, steps: u64) -> Vec<(u64, f64)> {
        (1..=steps).map(|n| (n, self.lr_at(n).expect("n >= 1"))).collect()
    }
}
