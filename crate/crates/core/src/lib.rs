//! Brain extraction for tumor-bearing head volumes.
//!
//! The pipeline registers an atlas onto the patient with a multi-resolution
//! affine search, carries the atlas brain mask across, and refines that mask
//! with a geodesic active contour level set.
//!
//! Image kernels are generic over [`Real`]; the aliases below fix the scalar
//! for the common cases.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod levelset;
pub mod nifti;
pub mod phantom;
pub mod registration;
pub mod scalar;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::Geometry;
pub use scalar::Real;
pub use transform::AffineTransform;
pub use volume::{BinaryMask, Interpolation, Volume, VectorField};

pub type Volume32 = Volume<f32>;
pub type Volume64 = Volume<f64>;



