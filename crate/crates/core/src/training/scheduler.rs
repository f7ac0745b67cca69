use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum decrease in the monitored loss that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 10,
            threshold: PLATEAU_THRESHOLD,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::invalid(format!("scheduler factor must be in (0, 1), got {}", self.factor)));
        }
        if self.patience == 0 {
            return Err(Error::invalid("scheduler patience must be >= 1"));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid("scheduler threshold must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule driven by validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub lr: f64,
    pub best: Option<f64>,
    /// Epochs since the last improvement.
    pub counter: usize,
    pub reductions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerStep {
    pub improved: bool,
    /// The new learning rate when this epoch triggered a reduction.
    pub reduced_to: Option<f64>,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: SchedulerConfig) -> Self {
        Self {
            config,
            lr,
            best: None,
            counter: 0,
            reductions: 0,
        }
    }

    /// Records one epoch's validation loss. A NaN loss never improves.
    pub fn step(&mut self, val_loss: f64) -> SchedulerStep {
        let improved = match self.best {
            None => !val_loss.is_nan(),
            Some(best) => val_loss < best - self.config.threshold,
        };
        if improved {
            self.best = Some(val_loss);
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        let mut reduced_to = None;
        if self.counter > self.config.patience {
            self.lr *= self.config.factor;
            self.counter = 0;
            self.reductions += 1;
            reduced_to = Some(self.lr);
        }
        SchedulerStep { improved, reduced_to }
    }
}
