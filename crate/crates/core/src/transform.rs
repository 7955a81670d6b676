//! World-space affine maps.
//!
//! An [`AffineTransform`] maps a fixed-space world point `x` to the moving
//! space as `matrix * x + translation`. Resampling pulls each output voxel from
//! the moving image through this map.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt::Write as _;
use std::str::FromStr;

/// Smallest |det| accepted for an invertible map.
pub const MIN_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub matrix: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn new(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        AffineTransform {
            matrix,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::new(Matrix3::identity(), Vector3::from(t))
    }

    /// Rotation of `angle_rad` about the unit `axis`, then isotropic `scale`,
    /// acting about `center`, followed by `translation`.
    pub fn about_center(
        axis: [f64; 3],
        angle_rad: f64,
        scale: f64,
        translation: [f64; 3],
        center: [f64; 3],
    ) -> Self {
        let axis = Vector3::from(axis);
        let rot = if axis.norm() > 0.0 && angle_rad != 0.0 {
            *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle_rad)
                .matrix()
        } else {
            Matrix3::identity()
        };
        let m = rot * scale;
        let c = Vector3::from(center);
        Self::new(m, c - m * c + Vector3::from(translation))
    }

    pub fn det(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.matrix * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(a: &AffineTransform, b: &AffineTransform) -> AffineTransform {
        AffineTransform::new(
            a.matrix * b.matrix,
            a.matrix * b.translation + a.translation,
        )
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        let det = self.det();
        if !(det.abs() > MIN_DET) {
            return Err(Error::SingularTransform(det.abs()));
        }
        let inv = self
            .matrix
            .try_inverse()
            .ok_or(Error::SingularTransform(det.abs()))?;
        Ok(AffineTransform::new(inv, -(inv * self.translation)))
    }

    pub(crate) fn ensure_invertible(&self) -> Result<()> {
        let det = self.det();
        if det.abs() > MIN_DET && det.is_finite() {
            Ok(())
        } else {
            Err(Error::SingularTransform(det.abs()))
        }
    }

    /// Row-major matrix entries followed by the translation.
    pub fn to_params(&self) -> [f64; 12] {
        let m = &self.matrix;
        let t = &self.translation;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_params(p: &[f64; 12]) -> Self {
        Self::new(
            Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]),
            Vector3::new(p[9], p[10], p[11]),
        )
    }

    /// Max absolute difference over the 12 parameters.
    pub fn max_param_diff(&self, other: &AffineTransform) -> f64 {
        self.to_params()
            .iter()
            .zip(other.to_params().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Text form: 12 values, one per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in self.to_params() {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }
}

impl FromStr for AffineTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("transform value {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let params: [f64; 12] = values.as_slice().try_into().map_err(|_| {
            Error::InvalidConfig(format!(
                "transform file needs 12 values, found {}",
                values.len()
            ))
        })?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("transform has non-finite values".into()));
        }
        Ok(Self::from_params(&params))
    }
}

/// Serialized as the 12 parameters in [`AffineTransform::to_params`] order.
impl Serialize for AffineTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_params().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffineTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = <[f64; 12]>::deserialize(d)?;
        Ok(Self::from_params(&p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    #[test]
    fn identity_is_neutral() {
        let id = AffineTransform::identity();
        let p = [1.5, -2.0, 7.25];
        assert_eq!(id.apply_point(p), p);
        assert_eq!(id.det(), 1.0);
        let t = AffineTransform::about_center([0.0, 0.0, 1.0], 0.3, 1.1, [1.0, 2.0, 3.0], [5.0; 3]);
        assert_eq!(AffineTransform::compose(&id, &t), t);
        assert_eq!(AffineTransform::compose(&t, &id), t);
    }

    #[test]
    fn apply_examples() {
        let t = AffineTransform::translation([1.0, -2.0, 3.0]);
        assert_eq!(t.apply_point([0.0; 3]), [1.0, -2.0, 3.0]);
        let s = AffineTransform::new(Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)), Vector3::zeros());
        assert_eq!(s.apply_point([3.0, 0.0, 0.0]), [6.0, 0.0, 0.0]);
        // 90 degrees about z then translate by (1, 0, 0):
        // e_x -> e_y + (1,0,0), e_y -> -e_x + (1,0,0), e_z -> e_z + (1,0,0)
        let r = AffineTransform::new(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
        );
        assert_eq!(r.apply_point([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0]);
        assert_eq!(r.apply_point([0.0, 1.0, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(r.apply_point([0.0, 0.0, 1.0]), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn translations_sum() {
        let a = AffineTransform::translation([1.0, 2.0, 3.0]);
        let b = AffineTransform::translation([-4.0, 0.5, 1.0]);
        let c = AffineTransform::compose(&a, &b);
        assert_eq!(c.matrix, Matrix3::identity());
        assert_eq!(c.translation, Vector3::new(-3.0, 2.5, 4.0));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(
            AffineTransform::identity().invert().unwrap(),
            AffineTransform::identity()
        );
        let s = AffineTransform::new(Matrix3::identity() * 2.0, Vector3::zeros());
        let inv = s.invert().unwrap();
        assert!((inv.matrix - Matrix3::identity() * 0.5).amax() < 1e-15);
        let t = AffineTransform::about_center([1.0, 1.0, 0.0], 0.2, 0.9, [3.0, -1.0, 2.0], [1.0, 2.0, 3.0]);
        let id = AffineTransform::compose(&t, &t.invert().unwrap());
        assert!(id.max_param_diff(&AffineTransform::identity()) < 1e-9);
        let p = [4.0, -5.0, 6.0];
        assert!(close(t.invert().unwrap().apply_point(t.apply_point(p)), p, 1e-9));
    }

    #[test]
    fn singular_is_rejected() {
        let z = AffineTransform::new(Matrix3::zeros(), Vector3::zeros());
        assert!(matches!(z.invert(), Err(Error::SingularTransform(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = AffineTransform::about_center([0.3, -0.2, 1.0], 0.087, 1.05, [4.0, 2.0, -3.0], [31.5; 3]);
        let text = t.to_text();
        assert_eq!(text.lines().count(), 12);
        let back: AffineTransform = text.parse().unwrap();
        assert_eq!(back, t);
        assert!("1 2 3".parse::<AffineTransform>().is_err());
    }

    #[test]
    fn serde_as_parameter_array() {
        let t = AffineTransform::translation([1.0, 2.0, 3.0]);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "[1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0,1.0,2.0,3.0]");
        assert_eq!(serde_json::from_str::<AffineTransform>(&json).unwrap(), t);
        assert!(serde_json::from_str::<AffineTransform>("[1, 2]").is_err());
    }
}
