//! Group-balanced gradient combination for worst-group robustness.

pub mod balancer;
pub mod cli;
pub mod data_synth;
pub mod entropy;
pub mod error;
pub mod group_state;
pub mod lp;
pub mod metrics;
pub mod minnorm;
pub mod models;
pub mod train;

pub use error::{Error, Result};
