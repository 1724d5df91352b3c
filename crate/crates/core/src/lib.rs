//! Verifiable rewards, GRPO advantages, mask majority voting and gIoU/cIoU
//! evaluation for reasoning segmentation, plus a seeded rollout simulator.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod grpo;
pub mod metrics;
pub mod response;
pub mod reward;
pub mod sim;
pub mod voting;

pub use error::{Error, Result};
