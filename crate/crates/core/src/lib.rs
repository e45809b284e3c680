//! A tabular laboratory for reinforcement learning with verifiable rewards and
//! confidence-aware shaping of negative advantages.
//!
//! The policy is an explicit table of next-token logits, so every expectation
//! can be computed exactly by enumeration and every gradient checked against
//! finite differences.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod cli;
pub mod env;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod seeding;
pub mod theory;
pub mod trainer;

pub use advantage::{ace_advantages, group_stats, grpo_advantages, ModulationKind, Rollout};
pub use env::{Dataset, TaskSpec};
pub use error::{AceError, Result};
pub use policy::{Gradient, PolicyParams};
pub use trainer::{train, Algorithm, TrainerConfig};
