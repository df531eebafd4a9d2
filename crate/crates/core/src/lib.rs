//! Parametrized finite-frame least squares.
//!
//! Given a family of frames `x ↦ F(x)` and a measurement `w`, find the
//! parameter whose analysis-operator range lies closest to `w`, i.e. minimize
//! `E(x) = ‖(I − F*(FF*)⁻¹F)w‖²`. The crate provides
//!
//! * [`frame`]: frame families, canonical duals, null-space projection and `E`;
//! * [`calculus`]: the analytic gradient and Hessian of `E`;
//! * [`newton`]: grid-initialized damped Newton minimization;
//! * [`radar`]: the FDOA multistatic radar family and measurement simulation;
//! * [`diagnostics`]: residual bounds, level sets and uniqueness certificates;
//! * [`variational`]: trajectory estimation from FDOA time series via the
//!   Euler–Lagrange equation of the time-integrated residual.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod calculus;
pub mod diagnostics;
mod error;
pub mod frame;
pub mod newton;
pub mod radar;
pub mod scalar;
pub mod variational;

pub use error::{Error, Result};
pub use frame::{Dims, FrameFamily, FrameJet, JetOrder, Measurement, ParameterPoint};
pub use scalar::Real;

pub type ParameterPoint64 = frame::ParameterPoint<f64>;
pub type Measurement64 = frame::Measurement<f64>;
pub type FrameJet64 = frame::FrameJet<f64>;
pub type RadarGeometry64 = radar::RadarGeometry<f64>;
pub type RadarFamily64 = radar::RadarFamily<f64>;
pub type RadarScenario64 = radar::RadarScenario<f64>;
pub type SolverConfig64 = newton::SolverConfig<f64>;
pub type SolveResult64 = newton::SolveResult<f64>;
pub type GridSpec64 = newton::GridSpec<f64>;
pub type TimeSeries64 = variational::TimeSeries<f64>;
pub type Trajectory64 = variational::Trajectory<f64>;

pub type ParameterPoint32 = frame::ParameterPoint<f32>;
pub type Measurement32 = frame::Measurement<f32>;
pub type RadarFamily32 = radar::RadarFamily<f32>;
