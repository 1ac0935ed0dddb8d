//! Scalar abstraction shared by every learner.
//!
//! Geometry and feature extraction are done in `f64` page units; the
//! learners (networks, logits, CRF) are generic over [`Real`] so they can
//! run in either single or double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    #[inline]
    fn of(v: f64) -> Self {
        // Both impls below convert every finite f64 (f32 rounds or saturates to inf).
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
