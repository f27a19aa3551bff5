use serde::{Deserialize, Serialize};

use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Intensity and flip augmentation. Jitter applies to T1w and FA only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    /// Probability of a horizontal (x-axis) flip.
    pub flip_p: f64,
    /// Additive offset drawn from `U(-a, a)`.
    pub brightness: f64,
    /// Gain drawn from `U(1-a, 1+a)`.
    pub contrast: f64,
    /// Exponent drawn from `U(1-a, 1+a)`; stands in for hue on
    /// single-channel images.
    pub hue: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            flip_p: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            hue: 0.1,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Augmentation {
            flip_p: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            hue: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_p) {
            return Err(Error::Config(format!("flip_p {} outside [0, 1]", self.flip_p)));
        }
        for (name, a) in [("brightness", self.brightness), ("contrast", self.contrast), ("hue", self.hue)] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::Config(format!("{name} amplitude {a} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub use_mem: bool,
    pub use_fem: bool,
    pub use_aem: bool,
    pub use_dcl: bool,
    pub augmentation: Augmentation,
    pub threshold: f64,
    /// Boundary-flip rate applied to the precise labels of training
    /// subjects only (label-noise experiments). 0 disables it.
    pub train_label_flip_rate: f64,
    /// Momentum of the batch-norm running averages.
    pub bn_momentum: f64,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// CPU-sized defaults: batch 8, 30 epochs, narrow network, and a
    /// larger step to make up for the short schedule.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 8,
            epochs: 30,
            folds: 5,
            seed: 0,
            use_mem: true,
            use_fem: true,
            use_aem: true,
            use_dcl: true,
            augmentation: Augmentation::default(),
            threshold: 0.5,
            train_label_flip_rate: 0.0,
            bn_momentum: 0.1,
            model: ModelConfig {
                widths: DESK_WIDTHS.to_vec(),
                ..ModelConfig::default()
            },
            loss: LossConfig::default(),
        }
    }

    /// Full-size settings: lr 0.002, batch 32, 200 epochs, widths 16..256.
    pub fn paper_protocol() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            batch_size: 32,
            epochs: 200,
            model: ModelConfig::default(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-protocol" => Ok(Self::paper_protocol()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected desk or paper-protocol)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds {} must be >= 2", self.folds)));
        }
        if self.use_mem && !self.use_fem && !self.use_aem {
            return Err(Error::Config("use_mem needs use_fem or use_aem".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold == 0.0 {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(0.0..0.5).contains(&self.train_label_flip_rate) {
            return Err(Error::Config(format!(
                "train_label_flip_rate {} outside [0, 0.5)",
                self.train_label_flip_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum {} outside [0, 1]", self.bn_momentum)));
        }
        self.augmentation.validate()?;
        self.model_config().validate()
    }

    /// Network config with the exchange flags taken from the ablation
    /// switches and the initializer seeded from `seed`.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            fem: self.use_mem && self.use_fem,
            aem: self.use_mem && self.use_aem,
            init_seed: self.seed,
            ..self.model.clone()
        }
    }
}

/// Stem plus four stage widths used by the desk preset.
pub const DESK_WIDTHS: [usize; 5] = [4, 8, 16, 32, 64];
