//! Evidential deep learning for uncertainty quantification.
//!
//! Trains small feed-forward networks with evidential output heads
//! (Dirichlet for classification, Normal-Inverse-Gamma for regression) and
//! ensemble baselines, decomposes predictive uncertainty into aleatoric and
//! epistemic parts via the law of total variance, and verifies calibration
//! and skill with a probabilistic forecast metric suite.

pub mod dist;
pub mod ensemble;
pub mod error;
pub mod evcls;
pub mod evreg;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
pub use rng::RngState;
