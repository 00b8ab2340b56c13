//! Adam, early stopping, fold construction, metrics, cross-validation and the
//! skip/no-skip ablation.

mod adam;
mod fit;
mod folds;
mod metrics;

pub use adam::AdamState;
pub use fit::{
    ablation_csv, batch_tensor, cross_validate, cross_validate_with_plan, evaluate, fit,
    one_hot, predict, run_ablation, train_epoch, train_fold, validation_split, AblationOutcome,
    AblationRow, CvOutcome, EpochRecord, FoldOutcome, History,
};
pub use folds::{make_folds, FoldPlan, Grouping};
pub use metrics::Metrics;

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradient for {name}")]
    NonFiniteGradient { name: String },
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("fold {fold}: subjects {subjects:?} appear in both train and test")]
    SubjectLeak { fold: usize, subjects: Vec<u16> },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for TrainError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}

impl TrainError {
    /// Numerical failures, as opposed to configuration mistakes.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFiniteLoss { .. } | Self::NonFiniteGradient { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs between validations.
    pub validate_every: usize,
    /// Consecutive non-improving validations before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 2000,
            validate_every: 10,
            patience: 10,
            val_fraction: 0.1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 || self.validate_every == 0 {
            return fail("max_epochs and validate_every must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        AdamState::<f32>::new(self.lr, self.beta1, self.beta2, self.epsilon)?;
        Ok(())
    }

    pub fn adam(&self) -> Result<AdamState<f32>, TrainError> {
        AdamState::new(self.lr, self.beta1, self.beta2, self.epsilon)
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|r| TrainError::Config(format!("line {}: {r}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {key} from {v:?}"))
        }
        match key {
            "batch_size" => self.batch_size = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "validate_every" => self.validate_every = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "val_fraction" => self.val_fraction = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "validate_every = {}", self.validate_every);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_validation() {
        let c = TrainConfig {
            lr: 3e-4,
            seed: 17,
            ..Default::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert!(TrainConfig { batch_size: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { val_fraction: 1.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig::parse("momentum = 0.9").is_err());
        c.validate().unwrap();
    }
}
