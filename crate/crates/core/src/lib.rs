//! Desk-scale hybrid-attention language modeling.
//!
//! A small decoder transformer whose attention runs causal, bidirectional,
//! or in a hybrid context/span mode, trained jointly on masked next-token
//! prediction, in-batch contrastive encoding, and missing-span generation.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod masks;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
