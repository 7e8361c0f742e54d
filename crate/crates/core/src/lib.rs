//! Self-supervised pretraining on weighted bipartite graphs followed by
//! frozen-encoder link prediction.
//!
//! The pipeline: [`graph`] loads and splits a timestamped bipartite event list,
//! [`trainer::pretrain`] fits a bootstrapped encoder with the weighted
//! attractive/repulsive objective from [`loss`], and
//! [`trainer::train_decoder`] fits an MLP link decoder on frozen embeddings.
//! [`experiment`] drives whole runs over seeds and weighting variants.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
