//! Two-dimensional method-of-lines solver for the transformed viscoelastic
//! system, its linearizations and its adjoints.
//!
//! Velocities live on the nodes of a rotated staggered grid, stresses and
//! material parameters on the cells. The divergence is the negative
//! adjoint of the strain operator under the grid inner products, so the
//! discrete `A` is exactly skew. Time stepping is classical RK4.

mod field;
mod grid;
pub mod io;
mod ops;
mod solver;
mod source;

pub use field::{Field5, ParameterField};
pub use grid::{Boundary, Grid2D, Layout, Side};
pub use ops::{CellMaps, DiscreteOperators, Gains, UnitMaps};
pub use solver::{
    run_adjoint, run_adjoint_continuous, run_adjoint_discrete, run_forward, run_linearized,
    run_second_adjoint_continuous, run_second_linearized, drives_at_steps, trapezoid_weights, AdjointMode,
    DiscreteAdjoint, RecordedWavefield, SecondAdjointRun, Src,
};
pub use source::{
    make_wavelet, wavelet_derivatives_at_zero, wavelet_peak, wavelet_regularity, wavelet_value, AdjointData, Component, Forcing,
    NoForcing, PointSource, ONSET_TOLERANCE,
};
