use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numeric core is written against: `f32` or `f64`.
///
/// Sampling always happens in `f64` and is narrowed with [`Scalar::of`], so a
/// given seed produces the same draws regardless of the storage type.
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
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Bytes of the little-endian `f32` representation used by on-disk formats.
    fn to_f32_le(self) -> [u8; 4] {
        (self.to_f64_lossy() as f32).to_le_bytes()
    }

    fn from_f32_le(bytes: [u8; 4]) -> Self {
        Self::of(f32::from_le_bytes(bytes) as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
