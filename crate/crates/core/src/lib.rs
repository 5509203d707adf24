//! Federated sparse learning toolkit.
//!
//! Implements three hard-thresholding optimizers for sparsity-constrained
//! empirical risk minimization over simulated non-IID clients — a
//! server-side thresholding scheme (`fed_ht`), a per-step thresholding
//! scheme (`fediter_ht`), and the single-step distributed baseline
//! (`distributed_iht`) — together with synthetic data generators, a LibSVM
//! loader and partitioners, and executable convergence diagnostics.
//!
//! The numeric kernels ([`tensor`], [`objectives`]) are generic over the
//! scalar type; the simulation layers and the aliases below fix `f64`.

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod objectives;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense model coordinates at the crate's working precision.
pub type ParameterVector = tensor::DenseVector<f64>;
/// Objective model at the crate's working precision.
pub type Objective = objectives::ObjectiveModel<f64>;
/// Sample batch at the crate's working precision.
pub type Batch = objectives::SampleBatch<f64>;
