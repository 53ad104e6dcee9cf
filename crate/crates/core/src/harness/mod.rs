//! Training protocol, evaluation, robustness sweeps and file formats.

mod gradsuite;
mod io;
mod sweep;
mod train;

pub use gradsuite::{run_gradient_suite, GradCase, Precision};
pub use io::{
    dataset_sha256, load_checkpoint, load_dataset, read_checkpoint, read_dataset, save_checkpoint,
    save_dataset, write_checkpoint, write_dataset, RunManifest, CHECKPOINT_MAGIC, DATASET_MAGIC,
};
pub use sweep::{robustness_sweep, Protocol, SweepTable};
pub use train::{
    dump_activations, evaluate, evaluate_with_states, finetune_multistream, pretrain_baseline,
    write_epoch_csv, EpochLog, SampleActivations, StreamActivation, TrainOutcome,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::{DegradationSpec, DegradeError};
use crate::model::{ActivationKind, EvalClass, ModelConfig, ModelError};
use crate::ntu::NtuError;
use crate::preprocess::PreprocessError;
use crate::stgcn::{BackboneConfig, DEFAULT_ALPHA};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset missing: {0}")]
    DatasetMissing(PathBuf),
    #[error("data error: {0}")]
    Data(String),
    #[error("training data must not be degraded")]
    ProtocolViolation,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Ntu(#[from] NtuError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

impl HarnessError {
    /// Process exit status: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ProtocolViolation => 2,
            Self::Model(ModelError::Config(_)) => 2,
            Self::Degrade(DegradeError::InvalidSpec(_) | DegradeError::UnknownPart(_)) => 2,
            Self::NumericalFailure(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Everything a training run needs. Loaded from JSON; every field has a
/// desk-scale default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Maximum graph distance `D`.
    pub max_distance: usize,
    /// Temporal window `L`.
    pub kernel: usize,
    pub delta: f64,
    pub dropout: f64,
    pub alpha: f64,
    pub input_bn: bool,
    /// Channel widths are the full schedule divided by this.
    pub width_divisor: usize,
    pub streams: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs between tenfold learning-rate drops.
    pub lr_step: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: ActivationKind,
    pub eval_class: EvalClass,
    pub masking: bool,
    /// Finetuning starts the schedule again at `lr`; otherwise it continues
    /// at the rate reached after `epochs` pretraining epochs.
    pub restart_schedule: bool,
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    /// Must stay empty: training never sees degraded skeletons.
    pub degradation: Option<DegradationSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_distance: 2,
            kernel: 5,
            delta: 0.3,
            dropout: 0.5,
            alpha: DEFAULT_ALPHA,
            input_bn: true,
            width_divisor: 8,
            streams: 1,
            epochs: 30,
            lr: 0.05,
            lr_step: 10,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            seed: 0,
            activation: ActivationKind::Threshold,
            eval_class: EvalClass::FirstStream,
            masking: true,
            restart_schedule: true,
            dataset: None,
            eval_dataset: None,
            pretrained: None,
            degradation: None,
        }
    }
}

impl TrainConfig {
    /// Full-size network and the original schedule: 60 epochs, learning
    /// rate 0.1 divided by 10 every 20 epochs.
    pub fn full_scale() -> Self {
        Self {
            width_divisor: 1,
            epochs: 60,
            lr: 0.1,
            lr_step: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.lr_step == 0 {
            return bad("lr step must be >= 1".into());
        }
        let negative = |x: f64| x.is_nan() || x < 0.0;
        if negative(self.lr)
            || self.lr == 0.0
            || negative(self.momentum)
            || negative(self.weight_decay)
        {
            return bad("lr must be positive, momentum and weight decay non-negative".into());
        }
        if self.width_divisor == 0 {
            return bad("width divisor must be >= 1".into());
        }
        self.backbone().validate().map_err(HarnessError::Config)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} not in (0, 1)", self.delta));
        }
        if self.streams == 0 {
            return bad("at least one stream".into());
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            kernel: self.kernel,
            max_distance: self.max_distance,
            alpha: self.alpha,
            dropout: self.dropout,
            input_bn: self.input_bn,
            ..BackboneConfig::narrowed(self.width_divisor)
        }
    }

    pub fn model(&self, streams: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            delta: self.delta,
            activation: self.activation,
            eval_class: self.eval_class,
            masking: self.masking,
            ..ModelConfig::new(self.backbone(), streams, num_classes)
        }
    }
}

/// `lr · 10^(−⌊epoch / lr_step⌋)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * 10f64.powi(-((epoch / cfg.lr_step.max(1)) as i32))
}
