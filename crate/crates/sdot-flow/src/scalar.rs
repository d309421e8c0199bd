//! Floating-point abstraction used throughout the crate.
//!
//! All numerical code is generic over [`Scalar`] so the same routines run in
//! `f32` or `f64`. File formats and the seeded noise generator are pinned to
//! `f64`; generic code converts through [`Scalar::of`] / [`Scalar::to64`] at
//! those boundaries.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert from `f64`, rounding to nearest if the target is narrower.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every supported scalar")
    }

    /// Widen (or pass through) to `f64`.
    fn to64(self) -> f64 {
        self.to_f64().expect("every supported scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
