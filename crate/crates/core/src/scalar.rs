//! Scalar abstraction for the numeric core.
//!
//! All probability, model, and attack math is generic over [`Scalar`], which
//! is implemented for `f32` and `f64`. Concrete `f64` aliases for the main
//! types live at the crate root.

use std::fmt;
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum<Self>
    + ScalarOperand
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy cast from `f64`. Exact for `f64`; rounds for `f32`.
    fn cast(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("finite f64 converts to scalar")
    }

    /// Widening cast to `f64`. Exact for both `f32` and `f64`.
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    /// Tolerance for checking that a probability vector over `k` classes
    /// sums to one: 1e-9, widened for scalars whose epsilon makes 1e-9
    /// unattainable after `k`-term summation.
    fn sum_tolerance(k: usize) -> Self {
        let widened = Self::epsilon() * Self::cast(64.0 * k.max(1) as f64);
        let floor = Self::cast(1e-9);
        if widened > floor {
            widened
        } else {
            floor
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
