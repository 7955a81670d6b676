//! Geodesic active contour refinement of a brain mask.
//!
//! The level set function is a signed distance in millimeters, negative inside
//! the brain. It is initialized from a mask, evolved under balloon, curvature
//! and edge-advection forces modulated by an edge potential, and thresholded
//! back into a mask.

mod edge;
pub mod edt;
mod evolve;

pub use edge::{edge_potential, EdgePotential, EdgeScale};
pub use evolve::{evolve, evolve_observed, EvolutionConfig, EvolutionResult, Observer};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Real;
use crate::volume::{BinaryMask, Volume};
use std::collections::VecDeque;

/// Regularizer for |∇φ| in the curvature denominator.
pub const CURVATURE_EPS: f64 = 1e-8;

/// Signed distance field, negative inside.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetField<T = f32> {
    phi: Volume<T>,
}

impl<T: Real> LevelSetField<T> {
    pub fn new(phi: Volume<T>) -> Self {
        LevelSetField { phi }
    }

    pub fn from_fn(geometry: Geometry, f: impl FnMut([usize; 3]) -> T) -> Self {
        LevelSetField {
            phi: Volume::from_fn(geometry, f),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        self.phi.geometry()
    }

    pub fn values(&self) -> &[T] {
        self.phi.data()
    }

    pub fn as_volume(&self) -> &Volume<T> {
        &self.phi
    }

    pub fn into_volume(self) -> Volume<T> {
        self.phi
    }

    pub fn inside_count(&self) -> usize {
        self.values().iter().filter(|&&p| p <= T::zero()).count()
    }
}

/// Signed distance from a mask's boundary: `+d` outside, `-d` inside.
///
/// Distances come from the exact EDT of the mask and of its complement. Both
/// are shifted by half the smallest spacing so voxels touching the interface
/// carry `|phi| = min_spacing / 2`.
pub fn signed_distance_from_mask<T: Real>(m: &BinaryMask) -> Result<LevelSetField<T>> {
    if m.is_empty() {
        return Err(Error::EmptyMask);
    }
    if m.is_full() {
        return Err(Error::FullMask);
    }
    let g = m.geometry();
    let to_inside = edt::squared_distance_transform(m.data(), g.dims, g.spacing);
    let complement: Vec<bool> = m.data().iter().map(|&b| !b).collect();
    let to_outside = edt::squared_distance_transform(&complement, g.dims, g.spacing);
    let half = 0.5 * g.min_spacing();
    let phi = m
        .data()
        .iter()
        .enumerate()
        .map(|(i, &inside)| {
            if inside {
                T::lit(-(to_outside[i].sqrt() - half))
            } else {
                T::lit(to_inside[i].sqrt() - half)
            }
        })
        .collect();
    Ok(LevelSetField {
        phi: Volume::new(g.clone(), phi)?,
    })
}

/// Rebuilds `phi` as a signed distance without moving the `phi <= 0` set.
pub fn reinitialize<T: Real>(phi: &LevelSetField<T>) -> Result<LevelSetField<T>> {
    let mask = extract_mask(phi, false);
    if mask.is_empty() || mask.is_full() {
        return Err(Error::NoZeroCrossing);
    }
    signed_distance_from_mask(&mask)
}

/// `phi <= 0`, optionally reduced to its largest 6-connected component.
///
/// Equal-sized components are resolved in favor of the one whose first voxel
/// has the smallest linear index.
pub fn extract_mask<T: Real>(phi: &LevelSetField<T>, keep_largest_component: bool) -> BinaryMask {
    let g = phi.geometry().clone();
    let data: Vec<bool> = phi.values().iter().map(|&p| p <= T::zero()).collect();
    let mut mask = BinaryMask::new(g, data).expect("geometry already validated");
    if keep_largest_component {
        keep_largest(&mut mask);
    }
    mask
}

pub(crate) fn neighbors6(g: &Geometry, idx: usize) -> impl Iterator<Item = usize> + '_ {
    let c = g.coords(idx);
    let strides = [1, g.dims[0], g.dims[0] * g.dims[1]];
    (0..3).flat_map(move |a| {
        let lo = (c[a] > 0).then(|| idx - strides[a]);
        let hi = (c[a] + 1 < g.dims[a]).then(|| idx + strides[a]);
        lo.into_iter().chain(hi)
    })
}

fn keep_largest(mask: &mut BinaryMask) {
    let g = mask.geometry().clone();
    let n = g.len();
    let mut label = vec![0u32; n];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !mask.data()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            for nb in neighbors6(&g, idx) {
                if mask.data()[nb] && label[nb] == 0 {
                    label[nb] = next;
                    queue.push_back(nb);
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    for (m, &l) in mask.data_mut().iter_mut().zip(&label) {
        *m = *m && l == best.0;
    }
}

/// Central-difference derivatives of φ at an interior voxel, in mm units.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Derivatives {
    pub d: [f64; 3],
    pub dd: [f64; 3],
    /// xy, xz, yz
    pub mixed: [f64; 3],
}

#[inline(always)]
pub(crate) fn central_derivatives<T: Real>(phi: &[T], g: &Geometry, idx: usize) -> Derivatives {
    let s = [1, g.dims[0], g.dims[0] * g.dims[1]];
    let h = g.spacing;
    let at = |i: usize| phi[i].as_f64();
    let c = at(idx);
    let mut d = [0.0; 3];
    let mut dd = [0.0; 3];
    for a in 0..3 {
        let p = at(idx + s[a]);
        let m = at(idx - s[a]);
        d[a] = (p - m) / (2.0 * h[a]);
        dd[a] = (p - 2.0 * c + m) / (h[a] * h[a]);
    }
    let cross = |a: usize, b: usize| {
        let pp = at(idx + s[a] + s[b]);
        let pm = at(idx + s[a] - s[b]);
        let mp = at(idx - s[a] + s[b]);
        let mm = at(idx - s[a] - s[b]);
        (pp - pm - mp + mm) / (4.0 * h[a] * h[b])
    };
    Derivatives {
        d,
        dd,
        mixed: [cross(0, 1), cross(0, 2), cross(1, 2)],
    }
}

impl Derivatives {
    pub fn grad_norm(&self) -> f64 {
        (self.d[0] * self.d[0] + self.d[1] * self.d[1] + self.d[2] * self.d[2]).sqrt()
    }

    /// div(∇φ/|∇φ|), the sum of principal curvatures.
    pub fn curvature(&self) -> f64 {
        let [x, y, z] = self.d;
        let [xx, yy, zz] = self.dd;
        let [xy, xz, yz] = self.mixed;
        let num = (yy + zz) * x * x + (xx + zz) * y * y + (xx + yy) * z * z
            - 2.0 * (x * y * xy + x * z * xz + y * z * yz);
        let n = self.grad_norm();
        num / (n * n * n + CURVATURE_EPS)
    }
}

/// Mean curvature (sum convention) of the level sets of `phi` at a voxel, in
/// mm⁻¹. Positive on convex interfaces enclosing negative `phi`.
pub fn curvature<T: Real>(phi: &LevelSetField<T>, voxel: [usize; 3]) -> Result<f64> {
    let g = phi.geometry();
    if (0..3).any(|a| voxel[a] == 0 || voxel[a] + 1 >= g.dims[a]) {
        return Err(Error::BoundaryVoxel(voxel));
    }
    let idx = g.linear(voxel[0], voxel[1], voxel[2]);
    Ok(central_derivatives(phi.values(), g, idx).curvature())
}

/// Discrete |∇φ| that does not difference across the zero crossing: per axis,
/// central when both neighbors share the voxel's sign, otherwise one-sided
/// toward the same-sign neighbor. `None` on faces or isolated sign voxels.
pub fn same_side_gradient_norm<T: Real>(phi: &LevelSetField<T>, voxel: [usize; 3]) -> Option<f64> {
    let g = phi.geometry();
    if g.is_face(voxel) {
        return None;
    }
    let v = phi.values();
    let idx = g.linear(voxel[0], voxel[1], voxel[2]);
    let s = [1, g.dims[0], g.dims[0] * g.dims[1]];
    let c = v[idx].as_f64();
    let inside = c <= 0.0;
    let mut sum = 0.0;
    for a in 0..3 {
        let p = v[idx + s[a]].as_f64();
        let m = v[idx - s[a]].as_f64();
        let h = g.spacing[a];
        let d = match ((p <= 0.0) == inside, (m <= 0.0) == inside) {
            (true, true) => (p - m) / (2.0 * h),
            (true, false) => (p - c) / h,
            (false, true) => (c - m) / h,
            (false, false) => return None,
        };
        sum += d * d;
    }
    Some(sum.sqrt())
}

/// Summary of |∇φ| deviations from 1 over the band `min_spacing < |φ| < band_width_mm`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientAudit {
    pub checked: usize,
    /// Voxels with | |∇φ| − 1 | ≥ `tolerance`.
    pub violations: usize,
    pub worst: f64,
}

impl GradientAudit {
    pub fn violation_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Audits the signed-distance property with [`same_side_gradient_norm`].
pub fn gradient_norm_audit<T: Real>(phi: &LevelSetField<T>, band_width_mm: f64, tolerance: f64) -> GradientAudit {
    let g = phi.geometry();
    let lo = g.min_spacing();
    let mut audit = GradientAudit { checked: 0, violations: 0, worst: 0.0 };
    for (idx, v) in phi.values().iter().enumerate() {
        let a = v.as_f64().abs();
        if !(a > lo && a < band_width_mm) {
            continue;
        }
        if let Some(n) = same_side_gradient_norm(phi, g.coords(idx)) {
            let dev = (n - 1.0).abs();
            audit.checked += 1;
            audit.worst = audit.worst.max(dev);
            if dev >= tolerance {
                audit.violations += 1;
            }
        }
    }
    audit
}
