//! Gradient clustering for personalized federated learning.
//!
//! Clients that share an optimum are grouped by robustly clustering the
//! gradients (or momentums) they exchange. The crate provides the clustering
//! primitive ([`threshold`]), the training loops built on it and their
//! baselines ([`algorithms`]), Byzantine behaviors ([`attacks`]), problem
//! generators ([`problems`]) and diagnostics ([`analysis`]).
//!
//! Every run is a deterministic function of its seed: randomness comes from
//! [`rng::RngStream`]s keyed by client, round and purpose.

pub mod algorithms;
pub mod analysis;
pub mod attacks;
pub mod error;
pub mod ids;
pub mod problems;
pub mod rng;
pub mod scenarios;
pub mod threshold;
pub mod vector;

pub use error::{Error, Result};
pub use ids::{ClientId, ClusterId};
pub use rng::{Purpose, RngStream, StreamId};
pub use vector::{mean, squared_distance, Vector};
