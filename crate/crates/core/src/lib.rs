//! QoS prediction for web services.
//!
//! The pipeline takes a sparse user × service QoS log (response time or
//! throughput), narrows it down around a target (user, service) pair with
//! context-aware hybrid filtering, densifies the filtered submatrices with
//! collaborative filtering and matrix factorization, and predicts the missing
//! value with a two-level neural regression.
//!
//! Modules map onto pipeline stages:
//!
//! - [`data`]: QoS matrices, datasets, WS-DREAM loaders, train/validation/test splits
//! - [`similarity`]: Haversine distance and cosine similarity kernels
//! - [`filtering`]: user-intensive and service-intensive hybrid filtering
//! - [`fill`]: sparsity filling (deviation-corrected CF and matrix factorization)
//! - [`neural`]: small feedforward regressor trained with SGD + momentum
//! - [`hierarchy`]: level-1 regressors, controller, level-2 / MAE aggregation
//! - [`benchmark`]: metrics, ablation variants and experiment protocol
//! - [`config`]: the declarative pipeline configuration

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod filtering;
pub mod fill;
pub mod hierarchy;
pub mod neural;
pub mod similarity;
pub mod synthetic;

mod seed;

pub use error::{Error, Result};
