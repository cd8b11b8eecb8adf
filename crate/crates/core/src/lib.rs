//! Stochastic two-phase Stefan problem `dX = Δβ(X) dt + dL_t` on `(0, 1)` with
//! Dirichlet conditions and pure-jump Lévy noise `L`.
//!
//! The state lives in a sine basis; [`operators`] solves the nonlinear
//! elliptic problems behind the resolvents and the Yosida-type approximation,
//! [`levy`] samples the noise, [`integrator`] steps the regularized and limit
//! equations, and [`harness`] turns many paths into long-time statistics.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enthalpy;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod levy;
mod linalg;
pub mod lyapunov;
pub mod opcheck;
pub mod operators;
pub mod scalar;
pub mod spectral;
pub mod stats;

pub use enthalpy::EnthalpyParams;
pub use error::{Error, Result};
pub use integrator::{Integrator, RunSettings, SchemeKind, TrajectoryRecord};
pub use levy::{NoiseSpec, NoiseStream};
pub use lyapunov::LyapunovParams;
pub use operators::{SolverSettings, StefanOperators};
pub use scalar::Real;
pub use spectral::{Basis, Space, SpectralField};

pub type Field = SpectralField<f64>;
pub type Field32 = SpectralField<f32>;
pub type Params = EnthalpyParams<f64>;
pub type Params32 = EnthalpyParams<f32>;
pub type Operators = StefanOperators<f64>;
pub type Operators32 = StefanOperators<f32>;
pub type Stepper = Integrator<f64>;
pub type Stepper32 = Integrator<f32>;
pub type Setup = harness::Setup<f64>;
