//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar (`f32` or `f64`).
///
/// Bundles nalgebra's field operations with the num-traits conversions the
/// algorithms need for literal constants and reporting.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(value: f64) -> T {
    T::from_f64(value).expect("f64 literal representable in target scalar")
}

/// Positive infinity in `T`.
#[inline]
pub fn infinity<T: Real>() -> T {
    lit(f64::INFINITY)
}

#[inline]
pub fn is_finite<T: Real>(value: T) -> bool {
    value.to_f64().is_some_and(f64::is_finite)
}

/// Lossy conversion used for reporting.
#[inline]
pub fn to_f64<T: Real>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Shortest round-trip decimal text for CSV output, switching to
/// scientific notation outside `[1e-4, 1e15)`.
pub fn format_number<T: Real>(value: T) -> String {
    let v = to_f64(value);
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}
