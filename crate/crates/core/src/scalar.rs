use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar the library is generic over.
///
/// Everything numeric in this crate (losses, densities, gradients, the
/// optimizer) works for any `Real`; `f32` and `f64` are the intended
/// instantiations. Concrete aliases live at the crate root.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for pulling an `f64` constant into the generic scalar type.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("finite constant")
}

/// Formats with 9 significant digits, locale independent; negative zero is
/// normalized so equal values always print identically.
pub fn sig9<T: Real>(v: T) -> String {
    let v = v.to_f64().unwrap_or(f64::NAN);
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.8e}")
}
