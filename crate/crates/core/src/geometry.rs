//! Physical-space description of a voxel grid.
//!
//! A voxel value lives at its center. Index `(i, j, k)` maps to world
//! millimeters as `origin + direction * (spacing ⊙ ijk)`, the same convention
//! as a NIfTI sform whose columns are `direction * diag(spacing)`.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Columns are the world-space unit vectors of the index axes.
    pub direction: Matrix3<f64>,
}

impl Geometry {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        direction: Matrix3<f64>,
    ) -> Result<Self> {
        let g = Geometry {
            dims,
            spacing,
            origin,
            direction,
        };
        g.validate()?;
        Ok(g)
    }

    /// Identity direction, zero origin.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3], Matrix3::identity())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!(
                "dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry("origin is not finite".into()));
        }
        let err = (self.direction.transpose() * self.direction - Matrix3::identity()).amax();
        if !(err < ORTHONORMAL_TOL) {
            return Err(Error::InvalidGeometry(format!(
                "direction columns are not orthonormal (error {err:e})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x-fastest linear index.
    #[inline(always)]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline(always)]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Voxels on any outer face of the grid.
    #[inline]
    pub fn is_face(&self, c: [usize; 3]) -> bool {
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn index_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        let scaled = Vector3::new(
            ijk[0] * self.spacing[0],
            ijk[1] * self.spacing[1],
            ijk[2] * self.spacing[2],
        );
        let w = Vector3::from(self.origin) + self.direction * scaled;
        [w.x, w.y, w.z]
    }

    pub fn world_to_index(&self, xyz: [f64; 3]) -> [f64; 3] {
        let d = Vector3::from(xyz) - Vector3::from(self.origin);
        let r = self.direction.transpose() * d;
        [
            r.x / self.spacing[0],
            r.y / self.spacing[1],
            r.z / self.spacing[2],
        ]
    }

    /// World position of the continuous grid center.
    pub fn center_world(&self) -> [f64; 3] {
        self.index_to_world([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }

    /// 4x4 voxel-to-world affine rows (sform layout).
    pub fn sform_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.direction[(r, c)] * self.spacing[c];
            }
            row[3] = self.origin[r];
        }
        rows
    }

    /// Exact equality of all fields; the error names both operands.
    pub fn ensure_same(&self, other: &Geometry, a: &'static str, b: &'static str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(a, b))
        }
    }
}
