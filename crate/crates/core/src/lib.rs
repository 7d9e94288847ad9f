//! Speaker-invariant training of feed-forward acoustic models.
//!
//! A deep feature extractor feeds two heads: a senone classifier trained to
//! minimise its loss, and a speaker classifier placed behind a gradient reversal
//! layer so the extractor learns to confuse it. Around that core sit a
//! speaker-independent baseline trainer, unsupervised per-speaker adaptation, a
//! synthetic corpus generator with a small binary format, and evaluation tools
//! (speaker probe, invariance ratio, PCA and t-SNE projections).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod seeding;
pub mod trainer;

pub use error::{FormatError, Result, SitError};
pub use linalg::Matrix;
pub use model::{AcousticModel, AcousticTopology, Hyperparams, ModelParams, SpeakerTopology};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type AcousticModel64 = AcousticModel<f64>;
pub type AcousticModel32 = AcousticModel<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type FrameBatch64 = data::FrameBatch<f64>;
pub type FrameBatch32 = data::FrameBatch<f32>;
