//! Underwater-style domain translation for data augmentation plus an
//! attention-augmented two-stage detector, with FID / IoU / AP / mAP
//! evaluation and seeded synthetic datasets that keep every mechanism
//! verifiable on a CPU.

pub mod attention;
pub mod boxes;
pub mod data;
pub mod detector;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod testkit;

pub use error::GammaError;
