//! Floating-point abstraction used by every numerical routine in this crate.
//!
//! The solvers are written against [`Scalar`] so they can run in `f32` or
//! `f64`. The concrete aliases at the crate root fix `f64`, which is the
//! precision all shipped tolerances assume.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Working scalar for grids, rates, solvers and fits.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// Convert a count into the working scalar type.
#[inline]
pub fn real_of<F: Scalar>(n: usize) -> F {
    F::from_usize(n).expect("usize must be representable in the scalar type")
}

/// Sum a slice without requiring `Sum` bounds at call sites.
#[inline]
pub fn total<F: Scalar>(xs: &[F]) -> F {
    xs.iter().fold(F::zero(), |acc, &x| acc + x)
}

/// Largest absolute value in a slice (zero for an empty slice).
#[inline]
pub fn sup_norm<F: Scalar>(xs: &[F]) -> F {
    xs.iter().fold(F::zero(), |acc, &x| acc.max(x.abs()))
}
