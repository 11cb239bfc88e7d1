//! Floating-point scalar abstraction for the vector-math layer.
//!
//! Embedding storage, centroids and the HNSW index are generic over
//! [`Scalar`] so the same code runs on `f32` (the on-disk width) and `f64`.
//! Reductions (dot products, norms, objectives) always accumulate in `f64`.

use std::fmt::Debug;

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn as_f64(self) -> f64;
    fn of_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn of_f64(v: f64) -> Self {
        v
    }
}

/// Dot product with `f64` accumulation.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

#[inline]
pub fn norm<S: Scalar>(a: &[S]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit L2 norm in place. Returns the original norm; a zero
/// vector is left untouched.
pub fn normalize_in_place<S: Scalar>(v: &mut [S]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = S::of_f64(x.as_f64() / n);
        }
    }
    n
}
