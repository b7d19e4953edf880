//! Determinant-free Hamiltonian Monte Carlo for Gaussian-process
//! hyperparameters.

pub mod anderson;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod pole;
pub mod posterior;
pub mod random;
pub mod samplers;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Dataset64 = kernel::Dataset<f64>;
pub type HyperParams64 = kernel::HyperParams<f64>;
pub type KernelModel64 = kernel::KernelModel<f64>;
pub type DenseMatrix64 = dense::DenseMatrix<f64>;
pub type PoleExpansion64 = pole::PoleExpansion<f64>;
pub type TargetModel64 = samplers::TargetModel<f64>;
pub type ChainTrace64 = diagnostics::ChainTrace<f64>;
