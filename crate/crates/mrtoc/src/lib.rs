//! Multi-rate task-oriented communication.
//!
//! This crate simulates a task-oriented link: an encoder maps observations
//! to a latent vector, a nested codebook quantizes the latent at one of
//! several bit depths, a symmetric discrete channel corrupts the codeword
//! indices, and an inference head solves the task from whatever arrives.
//! All stages are trained end to end with progressive level-by-level
//! training, so one set of weights serves every rate the codebook supports.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`]: dense `f64` tensors and a define-by-run
//!   reverse-mode gradient tape, including the stop-gradient and
//!   straight-through primitives quantized training needs.
//! - [`codebook`]: the nested codebook, nearest-codeword quantization, and
//!   the vector-quantization loss.
//! - [`channel`]: the symmetric discrete memoryless channel and the rate
//!   arithmetic that picks a coding level for a latency budget.
//! - [`models`]: encoder and inference-head multilayer perceptrons.
//! - [`data`]: synthetic blob tasks and IDX ingestion.
//! - [`training`]: the multi-rate loss, Adam, and the progressive trainer.
//! - [`evaluation`]: accuracy sweeps over error rates and coding levels.
//! - [`config`], [`checkpoint`]: experiment configuration and model
//!   serialization.

pub mod autodiff;
pub mod channel;
pub mod checkpoint;
pub mod codebook;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
