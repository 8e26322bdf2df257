use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Next-item training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Softmax cross-entropy against the whole catalog.
    #[default]
    FullSoftmax,
    /// One positive and `negatives` uniformly drawn negatives per position.
    SampledBinary,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::FullSoftmax => "full-softmax",
            LossKind::SampledBinary => "sampled-binary",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-softmax" => Ok(LossKind::FullSoftmax),
            "sampled-binary" => Ok(LossKind::SampledBinary),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub negatives: usize,
    /// Exclude already-seen items when ranking during validation.
    pub exclude_seen: bool,
    /// Check every primitive's output for NaN/Inf.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 128,
            epochs: 200,
            patience: 20,
            seed: 42,
            loss: LossKind::FullSoftmax,
            negatives: 1,
            exclude_seen: true,
            check_finite: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field}: {why}")));
        if self.epochs < 1 {
            return bad("epochs", "must be at least 1");
        }
        if self.patience > self.epochs {
            return bad("patience", "must not exceed epochs");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be a positive finite number");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1");
        }
        if self.loss == LossKind::SampledBinary && self.negatives < 1 {
            return bad("negatives", "must be at least 1 in sampled-binary mode");
        }
        Ok(())
    }
}
