//! Fairness-constrained learning to rank with the SPO+ surrogate.
//!
//! The math modules are generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvn;
pub mod clicksim;
pub mod datasets;
pub mod error;
pub mod evalmetrics;
pub mod fairlp;
pub mod linalg;
pub mod scalar;
pub mod scorer;
pub mod simplex;
pub mod spotrain;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Policy = fairlp::Policy<f64>;
pub type FairnessSpec = fairlp::FairnessSpec<f64>;
pub type LpInstance = fairlp::LpInstance<f64>;
pub type SolverCache = fairlp::SolverCache<f64>;
pub type PolicySolution = fairlp::PolicySolution<f64>;
pub type MeritWeights = datasets::MeritWeights<f64>;
pub type DiscountVector = evalmetrics::DiscountVector<f64>;
pub type BvnDecomposition = bvn::BvnDecomposition<f64>;
pub type ModelParams = scorer::ModelParams<f64>;
pub type AdamState = scorer::AdamState<f64>;
