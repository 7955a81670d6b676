//! Synthetic head phantoms with exact ground truth.
//!
//! The anatomy is a set of concentric ellipsoids around the volume's world
//! center: brain, a CSF gap, skull, then scalp. A spherical tumor replaces
//! brain intensity near the brain border. An optional affine perturbation warps
//! the anatomy analytically: each voxel center `x` is classified at `T⁻¹ x`, so
//! the ideal atlas-to-phantom registration is `T⁻¹` and the mask stays exact.
//!
//! Noise is additive Gaussian drawn in voxel order from ChaCha8 seeded with
//! `seed`, which gives identical streams on every platform.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::transform::AffineTransform;
use crate::volume::{BinaryMask, Volume};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intensities {
    pub background: f64,
    pub scalp: f64,
    pub skull: f64,
    pub csf: f64,
    pub brain: f64,
    pub tumor: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 0.0,
            scalp: 60.0,
            skull: 20.0,
            csf: 15.0,
            brain: 100.0,
            tumor: 140.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub brain_semi_axes: [f64; 3],
    /// Width of the CSF gap between brain and skull, mm.
    pub skull_inner_offset: f64,
    pub skull_thickness: f64,
    pub scalp_thickness: f64,
    pub intensities: Intensities,
    /// Tumor center relative to the brain center, mm.
    pub tumor_center_offset: [f64; 3],
    /// Tumor radius in mm; 0 disables the tumor.
    pub tumor_radius: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Maps canonical anatomy onto the phantom: the phantom at `x` shows the
    /// canonical anatomy at `T⁻¹ x`.
    pub affine_perturbation: Option<AffineTransform>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64; 3],
            spacing: [1.0; 3],
            brain_semi_axes: [22.0, 26.0, 20.0],
            skull_inner_offset: 2.0,
            skull_thickness: 3.0,
            scalp_thickness: 3.0,
            intensities: Intensities::default(),
            // the tumor surface sits 0.5 mm inside the lateral brain border
            tumor_center_offset: [13.5, 0.0, 0.0],
            tumor_radius: 8.0,
            noise_sigma: 4.0,
            seed: 42,
            affine_perturbation: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tissue {
    Background,
    Scalp,
    Skull,
    Csf,
    Brain,
    Tumor,
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::axis_aligned(self.dims, self.spacing)
    }

    /// World-space center of the anatomy.
    pub fn center(&self) -> Result<[f64; 3]> {
        Ok(self.geometry()?.center_world())
    }

    fn shell_axes(&self, extra: f64) -> [f64; 3] {
        self.brain_semi_axes.map(|a| a + extra)
    }

    fn scalp_axes(&self) -> [f64; 3] {
        self.shell_axes(self.skull_inner_offset + self.skull_thickness + self.scalp_thickness)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        self.geometry()?;
        if self.brain_semi_axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad(format!("brain_semi_axes must be positive, got {:?}", self.brain_semi_axes));
        }
        for (name, v) in [
            ("skull_inner_offset", self.skull_inner_offset),
            ("skull_thickness", self.skull_thickness),
            ("scalp_thickness", self.scalp_thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tumor_radius >= 0.0 && self.tumor_radius.is_finite()) {
            return bad(format!("tumor_radius must be >= 0, got {}", self.tumor_radius));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let i = &self.intensities;
        if [i.background, i.scalp, i.skull, i.csf, i.brain, i.tumor]
            .iter()
            .any(|v| !v.is_finite())
        {
            return bad("intensities must be finite".into());
        }
        if self.tumor_center_offset.iter().any(|v| !v.is_finite()) {
            return bad("tumor_center_offset must be finite".into());
        }
        if self.tumor_radius > 0.0 {
            // sufficient test: ellipsoidal norm of the center plus the radius
            // over the smallest scalp semi-axis stays within the head
            let s = self.scalp_axes();
            let norm = (0..3)
                .map(|a| (self.tumor_center_offset[a] / s[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            let reach = self.tumor_radius / s.iter().cloned().fold(f64::INFINITY, f64::min);
            if norm + reach > 1.0 {
                return bad(format!(
                    "tumor (offset {:?}, radius {}) is not fully inside the head",
                    self.tumor_center_offset, self.tumor_radius
                ));
            }
        }
        if let Some(t) = &self.affine_perturbation {
            t.ensure_invertible()?;
        }
        Ok(())
    }

    fn classify(&self, p: Vector3<f64>) -> Tissue {
        let inside = |axes: [f64; 3]| (0..3).map(|a| (p[a] / axes[a]).powi(2)).sum::<f64>() <= 1.0;
        let csf_axes = self.shell_axes(self.skull_inner_offset);
        if self.tumor_radius > 0.0
            && (p - Vector3::from(self.tumor_center_offset)).norm() <= self.tumor_radius
            && inside(csf_axes)
        {
            return Tissue::Tumor;
        }
        if inside(self.brain_semi_axes) {
            Tissue::Brain
        } else if inside(csf_axes) {
            Tissue::Csf
        } else if inside(self.shell_axes(self.skull_inner_offset + self.skull_thickness)) {
            Tissue::Skull
        } else if inside(self.scalp_axes()) {
            Tissue::Scalp
        } else {
            Tissue::Background
        }
    }

    fn intensity(&self, t: Tissue) -> f64 {
        let i = &self.intensities;
        match t {
            Tissue::Background => i.background,
            Tissue::Scalp => i.scalp,
            Tissue::Skull => i.skull,
            Tissue::Csf => i.csf,
            Tissue::Brain => i.brain,
            Tissue::Tumor => i.tumor,
        }
    }

    /// A perturbation about the anatomy center: rotation by a uniform angle in
    /// ±`max_angle_deg` about a random axis, isotropic scale in
    /// 1 ± `max_scale`, and a uniform translation in ±`max_shift_mm` per axis.
    pub fn random_perturbation(
        &self,
        seed: u64,
        max_angle_deg: f64,
        max_scale: f64,
        max_shift_mm: f64,
    ) -> Result<AffineTransform> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis: [f64; 3] = [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal));
        let angle = rng.random_range(-1.0..=1.0) * max_angle_deg.to_radians();
        let scale = 1.0 + rng.random_range(-1.0..=1.0) * max_scale;
        let shift = [0; 3].map(|_| rng.random_range(-1.0..=1.0) * max_shift_mm);
        Ok(AffineTransform::about_center(axis, angle, scale, shift, self.center()?))
    }
}

fn render(spec: &PhantomSpec) -> Result<(Volume<f32>, BinaryMask)> {
    spec.validate()?;
    let g = spec.geometry()?;
    let c = Vector3::from(g.center_world());
    let back = match &spec.affine_perturbation {
        Some(t) => t.invert()?,
        None => AffineTransform::identity(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(g.len());
    let mut mask = Vec::with_capacity(g.len());
    for idx in 0..g.len() {
        let ijk = g.coords(idx).map(|v| v as f64);
        let x = back.apply_point(g.index_to_world(ijk));
        let tissue = spec.classify(Vector3::from(x) - c);
        let mut v = spec.intensity(tissue);
        if spec.noise_sigma > 0.0 {
            v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        data.push(v as f32);
        mask.push(matches!(tissue, Tissue::Brain | Tissue::Tumor));
    }
    Ok((Volume::new(g.clone(), data)?, BinaryMask::new(g, mask)?))
}

/// Phantom volume and its ground-truth brain mask (brain plus tumor).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume<f32>, BinaryMask)> {
    render(spec)
}

/// Tumor-free, noise-free, unperturbed reference anatomy and its brain mask.
pub fn generate_atlas(spec: &PhantomSpec) -> Result<(Volume<f32>, BinaryMask)> {
    spec.validate()?;
    render(&PhantomSpec {
        tumor_radius: 0.0,
        noise_sigma: 0.0,
        affine_perturbation: None,
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn clean() -> PhantomSpec {
        PhantomSpec {
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        }
    }

    fn at_world(v: &Volume<f32>, offset: [f64; 3]) -> f32 {
        let g = v.geometry();
        let c = g.center_world();
        let idx = g.world_to_index([c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]]);
        v.at(idx[0].round() as usize, idx[1].round() as usize, idx[2].round() as usize)
    }

    #[test]
    fn constructed_intensities() {
        // center 31.5: sample half a voxel off so rounding is unambiguous
        let (v, _) = generate_phantom(&clean()).unwrap();
        assert_eq!(at_world(&v, [-0.5, 0.5, 0.5]), 100.0);
        // mid-skull along z: brain 20 + CSF 2 + 1.5 of the 3 mm skull
        assert_eq!(at_world(&v, [0.5, 0.5, 23.5]), 20.0);
        assert_eq!(at_world(&v, [13.5 - 0.5, 0.5, 0.5]), 140.0);
        assert_eq!(at_world(&v, [0.5, 0.5, 21.0]), 15.0);
    }

    #[test]
    fn mask_volume_matches_ellipsoid() {
        let s = PhantomSpec {
            tumor_radius: 0.0,
            ..clean()
        };
        let (_, m) = generate_phantom(&s).unwrap();
        let [a, b, c] = s.brain_semi_axes;
        let analytic = 4.0 / 3.0 * PI * a * b * c;
        let rel = (m.count() as f64 - analytic).abs() / analytic;
        assert!(rel < 0.05, "{rel}");
        // with the default tumor inside the brain the mask is unchanged
        let (_, with_tumor) = generate_phantom(&clean()).unwrap();
        assert_eq!(with_tumor, m);
    }

    #[test]
    fn protruding_tumor_is_brain_up_to_the_csf() {
        let s = PhantomSpec {
            tumor_center_offset: [18.0, 0.0, 0.0],
            tumor_radius: 6.0,
            ..clean()
        };
        let (v, m) = generate_phantom(&s).unwrap();
        let (_, plain) = generate_phantom(&PhantomSpec { tumor_radius: 0.0, ..clean() }).unwrap();
        assert!(m.count() > plain.count());
        // tumor does not overwrite skull
        assert_eq!(at_world(&v, [25.5, 0.5, 0.5]), 20.0);
        assert_eq!(at_world(&v, [22.5, 0.5, 0.5]), 140.0);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let s = PhantomSpec {
            dims: [16; 3],
            brain_semi_axes: [4.0, 4.0, 4.0],
            tumor_radius: 0.0,
            ..PhantomSpec::default()
        };
        let (a, _) = generate_phantom(&s).unwrap();
        let (b, _) = generate_phantom(&s).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_phantom(&PhantomSpec { seed: 7, ..s.clone() }).unwrap();
        assert_ne!(a, c);
        // residual noise statistics in the background
        let (clean, _) = generate_phantom(&PhantomSpec { noise_sigma: 0.0, ..s }).unwrap();
        let diff: Vec<f64> = a.data().iter().zip(clean.data()).map(|(x, y)| (x - y) as f64).collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.3 && (sd - 4.0).abs() < 0.3, "{mean} {sd}");
    }

    #[test]
    fn atlas_is_clean_reference() {
        let (atlas, am) = generate_atlas(&PhantomSpec::default()).unwrap();
        assert!(atlas.data().iter().all(|&v| v != 140.0));
        let plain = PhantomSpec {
            tumor_radius: 0.0,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let (pv, pm) = generate_phantom(&plain).unwrap();
        assert_eq!(am, pm);
        assert_eq!(atlas, pv);
    }

    #[test]
    fn perturbation_is_analytic() {
        let s = clean();
        let t = AffineTransform::translation([3.0, 0.0, 0.0]);
        let (v, m) = generate_phantom(&PhantomSpec { affine_perturbation: Some(t), ..s.clone() }).unwrap();
        let (v0, m0) = generate_phantom(&s).unwrap();
        // an integer shift moves whole voxels
        let g = v.geometry();
        for k in 0..64 {
            for i in 3..64 {
                assert_eq!(v.at(i, 32, k), v0.at(i - 3, 32, k));
                assert_eq!(m.at(i, 32, k), m0.at(i - 3, 32, k));
            }
        }
        assert_eq!(g, v0.geometry());
    }

    #[test]
    fn invalid_specs() {
        let far = PhantomSpec {
            tumor_center_offset: [28.0, 0.0, 0.0],
            ..PhantomSpec::default()
        };
        assert!(matches!(generate_phantom(&far), Err(Error::InvalidPhantom(_))));
        let thin = PhantomSpec {
            skull_thickness: 0.0,
            ..PhantomSpec::default()
        };
        assert!(matches!(thin.validate(), Err(Error::InvalidPhantom(_))));
        let cfg: PhantomSpec = serde_json::from_str(r#"{"seed": 3, "intensities": {"tumor": 150}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.intensities.tumor, 150.0);
        assert_eq!(cfg.intensities.brain, 100.0);
    }

    #[test]
    fn random_perturbation_is_bounded() {
        let s = PhantomSpec::default();
        let c = s.center().unwrap();
        for seed in 0..50 {
            let t = s.random_perturbation(seed, 10.0, 0.1, 10.0).unwrap();
            let det = t.det().cbrt();
            assert!((0.9 - 1e-12..=1.1 + 1e-12).contains(&det));
            let moved = t.apply_point(c);
            assert!((0..3).all(|a| (moved[a] - c[a]).abs() <= 10.0 + 1e-9));
            assert_eq!(t, s.random_perturbation(seed, 10.0, 0.1, 10.0).unwrap());
        }
    }
}
