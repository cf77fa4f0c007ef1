//! Floating point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used by the solver, the policy algebra and the scorer.
///
/// Tolerances scale with the precision of the type: the values for `f64` are
/// the ones the fairness guarantees are stated against, the `f32` values are
/// loosened to a few ulps above single precision round-off at n <= 20.
pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Primal feasibility tolerance on constraint rows and variable bounds.
    fn feasibility_tol() -> Self;
    /// Optimality tolerance on reduced costs.
    fn optimality_tol() -> Self;
    /// Smallest magnitude accepted as a pivot element.
    fn pivot_tol() -> Self;
    /// Entries at or below this level are treated as structural zeros.
    fn dust() -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f64 {
    fn feasibility_tol() -> Self {
        1e-7
    }
    fn optimality_tol() -> Self {
        1e-9
    }
    fn pivot_tol() -> Self {
        1e-9
    }
    fn dust() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn feasibility_tol() -> Self {
        1e-4
    }
    fn optimality_tol() -> Self {
        1e-5
    }
    fn pivot_tol() -> Self {
        1e-5
    }
    fn dust() -> Self {
        1e-5
    }
}
