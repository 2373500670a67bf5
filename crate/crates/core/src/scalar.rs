//! Scalar abstraction shared by every solver.
//!
//! All numerical code is written against [`Real`], so the same solvers run in
//! `f64` (the default, used by the CLI and the golden tests) or in `f32` for
//! quick low-precision experiments. Tolerances that only make sense in double
//! precision are scaled through [`Real::norm_tol`].

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by the solvers: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + FromStr<Err = ParseFloatError>
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64`, used at the reporting and eigensolver boundary.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Normalization tolerance: 1e-12 in double precision, widened to a few
    /// thousand ulps for narrower types.
    #[inline]
    fn norm_tol() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(4096.0))
    }

    /// `x ln x` with the `0 ln 0 = 0` convention.
    #[inline]
    fn xlogx(self) -> Self {
        if self > Self::zero() {
            self * self.ln()
        } else {
            Self::zero()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
