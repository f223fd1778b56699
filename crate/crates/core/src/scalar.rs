//! Floating-point scalar abstraction used by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the tensor core, model and aggregation code are generic over.
///
/// Implemented for `f32` and `f64`; experiments run at `f64` and the wire
/// carries `f32`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported float types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }

    /// Round-trips the value through `f32`, the precision used on the wire.
    #[inline]
    fn quantize(self) -> Self {
        Self::lit(self.as_f64() as f32 as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
