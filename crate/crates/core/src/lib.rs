//! Kinetics of rigid-rod polymers under the quadratic Doi closure.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the precision used by the runner.

pub mod chaos;
pub mod closure;
pub mod cycle;
pub mod error;
pub mod fit;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod ode;
pub mod quadrature;
pub mod runner;
pub mod scalar;
pub mod scenario;
pub mod sde;
pub mod suite;
pub mod types;

pub use error::{Result, RodError};
pub use linalg::Mat;
pub use scalar::Scalar;

pub type Mat64 = linalg::Mat<f64>;
pub type Mat32 = linalg::Mat<f32>;
pub type ModelParams64 = types::ModelParams<f64>;
pub type ModelParams32 = types::ModelParams<f32>;
pub type FlowMatrix64 = types::FlowMatrix<f64>;
pub type ConfTensor64 = types::ConfTensor<f64>;
pub type ConfTensor32 = types::ConfTensor<f32>;
pub type QState64 = types::QState<f64>;
pub type Ensemble64 = types::Ensemble<f64>;
pub type Ensemble32 = types::Ensemble<f32>;
pub type OdeConfig64 = ode::OdeConfig<f64>;
pub type SdeConfig64 = sde::SdeConfig<f64>;
