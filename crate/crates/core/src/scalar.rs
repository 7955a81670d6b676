//! Scalar abstraction for voxel data.
//!
//! Image kernels are written once against [`Real`] and instantiated for `f32`
//! (the storage type of every volume read from disk) and `f64`. Geometry and
//! transforms are always `f64`.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating point voxel type.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn lit(x: f64) -> Self;
    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f64() {
        assert_eq!(f32::lit(0.1).as_f64(), 0.1f32 as f64);
        assert_eq!(f64::lit(0.1).as_f64(), 0.1);
    }
}
