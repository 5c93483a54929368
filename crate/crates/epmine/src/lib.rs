//! Desk-scale metric-learning laboratory: online triplet mining
//! (easy/hard positives, hard/semi-hard/easy negatives), an NCA-based loss
//! family with analytic gradients, a group-structured batch sampler, a small
//! MLP encoder with unit-sphere output, and retrieval/diagnostic evaluation.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod mining;

pub use error::{Error, Result};
