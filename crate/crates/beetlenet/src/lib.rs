//! Bark-beetle attack-stage classification pipeline.
//!
//! Crown-patch ingestion, class-balancing augmentation, a RetinaNet-derived
//! four-class classifier trained with focal loss, classical ML baselines,
//! and evaluation/visualization outputs.

pub mod augment;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod imageops;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod stage;
pub mod train;

pub use error::{Error, Result};
pub use stage::{AttackStage, FlightSpec};
