//! Viscoelastic wave propagation with first and second order derivatives
//! of the parameter-to-wavefield map and their adjoints.

pub mod config;
pub mod error;
pub mod wave2d;
pub mod evolution_oracle;
pub mod fwi;
pub mod rheology;
pub mod scalar;
pub mod sym;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use sym::Sym;

/// Double precision instances of the generic pointwise types.
pub type SymF64 = sym::Sym<f64>;
pub type IsotropicMapF64 = rheology::IsotropicMap<f64>;
pub type ParameterPointF64 = rheology::ParameterPoint<f64>;
pub type ParameterBoundsF64 = rheology::ParameterBounds<f64>;
pub type RelaxationSpecF64 = rheology::RelaxationSpec<f64>;
pub type StateCellF64 = rheology::StateCell<f64>;

/// Single precision instances of the generic pointwise types.
pub type SymF32 = sym::Sym<f32>;
pub type IsotropicMapF32 = rheology::IsotropicMap<f32>;
pub type ParameterPointF32 = rheology::ParameterPoint<f32>;
pub type ParameterBoundsF32 = rheology::ParameterBounds<f32>;
pub type RelaxationSpecF32 = rheology::RelaxationSpec<f32>;
pub type StateCellF32 = rheology::StateCell<f32>;
