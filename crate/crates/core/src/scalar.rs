//! Floating point abstraction shared by the pointwise algebra.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the generic pointwise code: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Relative tolerance used for structural checks (symmetry, singularity).
    fn structural_tol() -> Self {
        Self::c(1e-12).max(Self::epsilon() * Self::c(16.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
