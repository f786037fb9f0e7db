//! Feature matching intervention (FMI) for out-of-distribution generalization.
//!
//! A first-stage classifier is trained on the pooled training data; its
//! predictions are used to subsample a batch in which the label is independent
//! of the prediction within every predicted class, which emulates an
//! intervention on whatever spurious feature the first stage latched onto. A
//! second model trained on those matched batches then has to rely on features
//! that remain predictive under the intervention. A chi-square test on a
//! validation environment decides whether matching is needed at all.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the `f64` instantiation used by the experiment harness.

pub(crate) mod codec;
pub mod datagen;
pub mod error;
pub mod fmi;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod scalar;
pub mod scm;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Dataset64 = datagen::LabeledDataset<f64>;
pub type Dataset32 = datagen::LabeledDataset<f32>;
pub type Model64 = models::Model<f64>;
pub type Model32 = models::Model<f32>;
