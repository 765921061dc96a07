use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric stack is generic over.
///
/// `lit` converts literal constants exactly (both impls are plain casts);
/// `as_f64` widens for metrics and reporting, which always happen in f64.
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
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Round through f32, the storage precision of checkpoints. Models are
    /// passed through this before serialization so that a save/load round
    /// trip reproduces the in-memory parameters bit for bit.
    fn round_f32(self) -> Self;
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn round_f32(self) -> Self {
        self
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn round_f32(self) -> Self {
        self as f32 as f64
    }
}
