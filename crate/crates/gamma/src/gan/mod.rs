//! Two-generator / two-discriminator cycle translation between the
//! terrestrial and underwater-style domains.

mod loss;
mod nets;
mod train;

pub use loss::{adversarial_loss, cycle_loss, full_objective, generator_fool_loss};
pub use nets::{
    build_cyclegan, build_discriminator, build_generator, discriminator_forward,
    generator_forward, CycleGanModel, GenRole,
};
pub use train::{train_cyclegan, train_step, translate, translate_batch, StepOutcome, TraceRecord};

use crate::GammaError;

/// Training hyperparameters. Defaults: cycle weight 10, Adam at 2e-4 held
/// for 100 epochs then linearly decayed to zero over 100 more, batch size 1,
/// weights drawn from N(0, 0.02).
#[derive(Debug, Clone)]
pub struct GanTrainConfig {
    pub lambda_cyc: f64,
    pub base_lr: f64,
    pub constant_epochs: usize,
    pub decay_epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Epochs actually executed; defaults to the full schedule length.
    pub epochs: Option<usize>,
    /// Steps per epoch; defaults to max(|X|, |Y|).
    pub steps_per_epoch: Option<usize>,
    /// Checkpoint cadence in epochs.
    pub checkpoint_interval: usize,
    /// Distribution-distance probe cadence in epochs (None disables).
    pub fid_interval: Option<usize>,
    /// Probe set size per domain.
    pub fid_probe: usize,
    /// Generator fools with -log D(G(x)) instead of log(1 - D(G(x))).
    pub non_saturating: bool,
    pub gen_channels: usize,
    pub disc_channels: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            lambda_cyc: 10.0,
            base_lr: 2e-4,
            constant_epochs: 100,
            decay_epochs: 100,
            batch_size: 1,
            image_size: 64,
            seed: 0,
            epochs: None,
            steps_per_epoch: None,
            checkpoint_interval: 20,
            fid_interval: Some(20),
            fid_probe: 64,
            non_saturating: false,
            gen_channels: 8,
            disc_channels: 8,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<(), GammaError> {
        if self.lambda_cyc < 0.0 {
            return Err(GammaError::Contract("cycle weight must be >= 0".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(GammaError::Contract("learning rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(GammaError::Contract("batch size must be >= 1".into()));
        }
        if self.image_size % 4 != 0 || self.image_size < 16 {
            return Err(GammaError::Contract(format!(
                "image size must be a multiple of 4 and >= 16, got {}",
                self.image_size
            )));
        }
        if self.checkpoint_interval == 0 {
            return Err(GammaError::Contract("checkpoint interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.constant_epochs + self.decay_epochs
    }
}

/// Base rate on [0, constant), then a linear ramp hitting exactly zero at
/// epoch constant + decay (the terminal fencepost):
/// lr(e) = base * min(1, (total - e) / decay).
pub fn lr_schedule(epoch: usize, config: &GanTrainConfig) -> Result<f64, GammaError> {
    let total = config.total_epochs();
    if epoch > total {
        return Err(GammaError::Contract(format!(
            "epoch {epoch} outside schedule 0..={total}"
        )));
    }
    if epoch < config.constant_epochs {
        Ok(config.base_lr)
    } else {
        Ok(config.base_lr * (total - epoch) as f64 / config.decay_epochs as f64)
    }
}
