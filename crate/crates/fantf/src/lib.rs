//! fantf: a fuzzy-attention transformer for multivariate time series.
//!
//! The library provides, bottom-up:
//!
//! - [`tensor`]: dense f64 tensors with a per-forward-pass reverse-mode tape
//!   and a finite-difference gradient checker;
//! - [`rng`]: a seeded, bit-reproducible random source (xoshiro256++ with
//!   Box–Muller normals);
//! - [`fuzz`]: fuzzy membership functions and the additive attention-score
//!   fuzz term, including the learnable-gain gaussian noise mode;
//! - [`attention`]: multi-head self-attention over series tokens with the
//!   fuzz term injected into the score matrix;
//! - [`model`]: the encoder (embedding, attention blocks, feed-forward,
//!   post-norm residuals) with forecasting, classification and
//!   reconstruction heads, plus binary checkpoints;
//! - [`train`]: losses, Adam, the training loop and task evaluators;
//! - [`metrics`]: forecast error suite (MSE/MAE/sMAPE/MAPE/MASE/OWA),
//!   threshold-based anomaly extraction and detection scores;
//! - [`data`]: CSV ingestion, per-variate normalization, window extraction,
//!   chronological splits and synthetic generators;
//! - [`config`] / [`runner`]: flat key=value experiment configs, the
//!   run/compare/plot pipelines and JSON result emission;
//! - [`selftest`]: the self-check property suite behind the CLI verb.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fuzz;
pub mod json;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use attention::{AttentionConfig, FuzzyAttentionLayer};
pub use error::{FantfError, Result};
pub use fuzz::FuzzinessMode;
pub use model::{Model, ModelConfig, Task, TokenMode};
pub use rng::RngState;
pub use tensor::{grad_check, Tape, Tensor};
