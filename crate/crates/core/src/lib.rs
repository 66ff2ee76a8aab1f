//! Correlation congruence knowledge distillation (CCKD) on small dense
//! networks.
//!
//! A student network is trained to match a teacher both per instance
//! (temperature-softened KL divergence or L2 feature mimicry) and across
//! instances, by matching the kernel correlation matrices of teacher and
//! student embeddings within each mini-batch:
//!
//! ```text
//! L = α·CE + (1 − α)·KD + β·‖ψ(F_t) − ψ(F_s)‖² / b²
//! ```
//!
//! Modules:
//! - [`nn`]: dense network, softmax, SGD with momentum, gradient checking
//! - [`kernels`]: correlation metrics and the batch correlation matrix
//! - [`losses`]: CE, KD, mimic and correlation-congruence losses
//! - [`samplers`]: uniform, class-uniform and superclass-uniform batch plans
//! - [`harness`]: datasets, configuration, training and evaluation
//! - [`analysis`]: cosine-similarity statistics and CSV exports

pub mod analysis;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod samplers;

pub use error::{Error, Result};
pub use matrix::Matrix;
