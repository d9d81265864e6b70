//! Scalar abstraction shared by the geometric modules.
use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Ordered field elements: `f32`, `f64` and exact rationals.
pub trait Scalar:
    Num + Signed + FromPrimitive + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_count(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("representable integer")
    }

    /// Larger of two values; the first wins on ties or incomparable inputs.
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl<T> Scalar for T where
    T: Num + Signed + FromPrimitive + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
}
