//! Compatibility metric learning for generalized zero-shot classification,
//! regularized by semantic borrowing.
//!
//! A compatibility function `c(f, s)` scores an image feature `f` against a
//! class semantic vector `s`; classification picks the best-scoring class over
//! the union of seen and unseen classes. Two model families are provided:
//!
//! * a bilinear model `fᵀ W s` trained with a symmetric hinge ranking loss,
//! * a two-MLP relation model trained with squared error against {0, 1}
//!   targets.
//!
//! Semantic borrowing adds, for every anchor, a second ranking term in which
//! the most similar semantic vector of a *different* training class (drawn from
//! a disjoint minibatch) plays the positive role.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! name the common instantiations.

pub mod config;
pub mod datamodel;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod models;
pub mod optimizer;
pub mod oracle;
pub mod scalar;
pub mod similarity;
pub mod synthgen;
pub mod trainer;

pub use datamodel::{ClassId, SplitSpec};
pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;
pub use similarity::SimilarityMetric;

pub type Dataset = datamodel::Dataset<f64>;
pub type Dataset32 = datamodel::Dataset<f32>;
pub type ModelParams = models::ModelParams<f64>;
pub type ModelParams32 = models::ModelParams<f32>;
pub type LossBreakdown = losses::LossBreakdown<f64>;
pub type OptimizerState = optimizer::OptimizerState<f64>;
pub type OptimizerState32 = optimizer::OptimizerState<f32>;
