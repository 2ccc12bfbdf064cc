//! Conic relaxations for power flow and power system state estimation.
//!
//! The lifted model replaces the complex voltage vector `v` by the Hermitian
//! matrix `X = v v*`, so every quadratic measurement `v* M_j v` becomes the
//! linear functional `Tr(M_j X)`. The crate builds those functionals from a
//! network case, solves SDP/SOCP relaxations and penalized estimators with a
//! built-in interior-point method, constructs closed-form dual certificates,
//! and recovers voltage profiles from the lifted solution.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the CLI and the
//! experiment harness use.

pub mod baseline;
pub mod cases;
pub mod certificates;
pub mod conic;
pub mod error;
pub mod harness;
pub mod measurements;
pub mod netmodel;
pub mod recovery;
pub mod relaxations;
pub mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Complex64 = num_complex::Complex<f64>;

pub type NetworkCase = netmodel::NetworkCase<f64>;
pub type AdmittanceModel = netmodel::AdmittanceModel<f64>;
pub type HermitianSparse = sparse::HermitianSparse<f64>;
pub type MeasurementSet = measurements::MeasurementSet<f64>;
pub type NoiseConfig = measurements::NoiseConfig<f64>;
pub type ConicProgram = conic::ConicProgram<f64>;
pub type ConicSolution = conic::ConicSolution<f64>;
pub type ObjectiveDesign = relaxations::ObjectiveDesign<f64>;
pub type DualCertificate = certificates::DualCertificate<f64>;
pub type BoundReport = certificates::BoundReport<f64>;
pub type VoltageEstimate = recovery::VoltageEstimate<f64>;
