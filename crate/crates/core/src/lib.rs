//! Constrained speaker-linking engine for the telephone channel-assignment
//! task: given the (unordered) speaker pair of every two-channel
//! conversation and pairwise LLR scores between recording sides, compute a
//! calibrated Bayesian posterior over the channel-assignment configurations
//! of each clique, together with entropy budgets, calibration, and
//! evaluation metrics.

pub mod calibration;
pub mod clique;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod synthetic;

mod union_find;

pub use error::{Error, Result};
