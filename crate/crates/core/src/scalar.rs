//! Scalar abstraction: every kernel in this crate is written once, generic
//! over `S: Scalar`, and instantiated at f32 for production and f64 for
//! reference/oracle paths.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Construct from an f64 constant. Panics only if the value is not
    /// representable at all, which cannot happen for finite literals.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Widen to f64 (lossless for both supported scalars).
    fn as_f64(self) -> f64;

    /// Narrow to f32 (rounds when `Self = f64`); used by fixed-width file formats.
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}
