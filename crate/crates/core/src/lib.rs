//! Replay-based continual learning.
//!
//! The crate trains dense networks on class-incremental task sequences while
//! a replay buffer retains selected past samples. It provides the seven
//! replay trainers (NSR, NSR+, TEM, GEM, A-GEM, GBSS, iCaRL), every buffer
//! selection strategy they use, the JT/RT/RB baselines, and the accuracy,
//! forgetting and transfer measures computed from the evaluation matrix.
//!
//! Module map:
//!
//! - [`nn`]: dense network, losses, flat gradients, momentum SGD
//! - [`data`]: IDX loading, synthetic blobs, task protocols, seeded streams
//! - [`buffer`]: replay buffer, quotas, and selection strategies
//! - [`methods`]: projection math and the trainers
//! - [`metrics`]: evaluation matrix and derived measures
//! - [`harness`]: baselines, experiment runs, grids, reports
//! - [`par`]: parallel fan-out with a sequential fallback

pub mod buffer;
pub mod data;
pub mod error;
pub mod harness;
pub mod methods;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
