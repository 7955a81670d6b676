//! Multi-resolution affine registration and atlas mask propagation.
//!
//! The atlas is the moving image and the patient the fixed one. The search runs
//! over the 12 raw affine parameters, with the matrix acting about the fixed
//! volume's world center, using regular-step gradient descent on
//! finite-difference gradients in a scaled parameter space.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Real;
use crate::transform::AffineTransform;
use crate::volume::{downsample, resample, sample_trilinear_f64, BinaryMask, IndexMap, Interpolation, Volume};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Finite-difference half-width in scaled parameter units.
pub const GRADIENT_STEP: f64 = 1e-3;
/// Minimum fraction of samples that must map inside the moving image.
pub const MIN_OVERLAP: f64 = 0.1;
/// Coarsest allowed level: no axis is decimated below this many voxels.
const MIN_LEVEL_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanSquares,
    #[default]
    NormalizedCorrelation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Subsampling factors, coarse to fine.
    pub pyramid_factors: Vec<usize>,
    pub metric: Metric,
    pub max_iterations_per_level: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Step shrink factor on direction reversal or a rejected trial.
    pub relaxation: f64,
    pub sample_fraction: f64,
    /// Per-parameter weights: 9 matrix entries (row-major), then 3 translations.
    pub parameter_scales: [f64; 12],
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let mut parameter_scales = [1.0; 12];
        parameter_scales[9..].fill(0.01);
        RegistrationConfig {
            pyramid_factors: vec![4, 2],
            metric: Metric::NormalizedCorrelation,
            max_iterations_per_level: 200,
            initial_step: 1.0,
            min_step: 1e-3,
            relaxation: 0.6,
            sample_fraction: 1.0,
            parameter_scales,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.pyramid_factors.is_empty() {
            return bad("pyramid_factors must not be empty".into());
        }
        if self.pyramid_factors.contains(&0) {
            return bad("pyramid_factors must be >= 1".into());
        }
        if self.pyramid_factors.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!(
                "pyramid_factors must be non-increasing, got {:?}",
                self.pyramid_factors
            ));
        }
        if self.max_iterations_per_level == 0 {
            return bad("max_iterations_per_level must be >= 1".into());
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad(format!("initial_step must be positive, got {}", self.initial_step));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.initial_step) {
            return bad(format!(
                "min_step must lie in (0, initial_step], got {}",
                self.min_step
            ));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 1.0) {
            return bad(format!("relaxation must lie in (0, 1), got {}", self.relaxation));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!(
                "sample_fraction must lie in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if self.parameter_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("parameter_scales must be positive and finite".into());
        }
        Ok(())
    }

    fn sample_stride(&self) -> usize {
        ((1.0 / self.sample_fraction).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub transform: AffineTransform,
    /// Metric of `transform` at the finest pyramid level.
    pub final_metric: f64,
    pub iterations_used: Vec<usize>,
    pub converged: Vec<bool>,
    /// Metric at the start and end of each level.
    pub level_metrics: Vec<[f64; 2]>,
}

/// Similarity of `fixed` and `moving` pulled back through `t`; 0 is perfect.
pub fn metric_value<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    t: &AffineTransform,
    cfg: &RegistrationConfig,
) -> Result<f64> {
    cfg.validate()?;
    t.ensure_invertible()?;
    evaluate(fixed, moving, t, cfg.metric, cfg.sample_stride())
}

fn evaluate<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    t: &AffineTransform,
    metric: Metric,
    stride: usize,
) -> Result<f64> {
    let fg = fixed.geometry();
    let map = IndexMap::new(fg, t, moving.geometry());
    let total = fg.len().div_ceil(stride);
    let mut pairs = Vec::with_capacity(total);
    for idx in (0..fg.len()).step_by(stride) {
        if let Some(m) = sample_in_fov(moving, map.apply(fg.coords(idx))) {
            pairs.push((fixed.data()[idx].as_f64(), m));
        }
    }
    if (pairs.len() as f64) < MIN_OVERLAP * total as f64 || pairs.is_empty() {
        return Err(Error::InsufficientOverlap {
            valid: pairs.len(),
            total,
        });
    }
    let n = pairs.len() as f64;
    let value = match metric {
        Metric::MeanSquares => pairs.iter().map(|(f, m)| (f - m) * (f - m)).sum::<f64>() / n,
        Metric::NormalizedCorrelation => {
            let mf = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let mm = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut sff, mut smm, mut sfm) = (0.0, 0.0, 0.0);
            for (f, m) in &pairs {
                let (a, b) = (f - mf, m - mm);
                sff += a * a;
                smm += b * b;
                sfm += a * b;
            }
            let denom = (sff * smm).sqrt();
            if !(denom > 0.0) {
                return Err(Error::NonFiniteMetric);
            }
            1.0 - (sfm / denom).abs().min(1.0)
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteMetric)
    }
}

/// Trilinear sample inside the physical field of view, which reaches half a
/// voxel past the outer voxel centers; that margin repeats the edge values.
///
/// With this extent a grid-aligned transform puts no sample on the FOV
/// border, so samples leave the overlap one at a time as the transform moves
/// rather than a whole face at once.
#[inline]
fn sample_in_fov<T: Real>(v: &Volume<T>, ijk: [f64; 3]) -> Option<f64> {
    let d = v.geometry().dims;
    let mut c = [0.0; 3];
    for a in 0..3 {
        let hi = (d[a] - 1) as f64;
        if !(ijk[a] >= -0.5 && ijk[a] <= hi + 0.5) {
            return None;
        }
        c[a] = ijk[a].clamp(0.0, hi);
    }
    sample_trilinear_f64(v, c)
}

/// Per-axis decimation for a nominal pyramid factor: anisotropic axes are
/// decimated less so that level voxels stay roughly isotropic, and no axis
/// drops below a few voxels.
fn level_factors(g: &Geometry, factor: usize) -> [usize; 3] {
    let h = g.min_spacing();
    [0, 1, 2].map(|a| {
        let f = ((factor as f64 * h / g.spacing[a]).round() as usize).max(1);
        f.min((g.dims[a] / MIN_LEVEL_DIM).max(1))
    })
}

/// Centered parameterization: `x ↦ M (x − c) + c + t`.
struct Centered {
    center: Vector3<f64>,
    scales: [f64; 12],
}

impl Centered {
    fn to_scaled(&self, t: &AffineTransform) -> [f64; 12] {
        let shift = t.translation + t.matrix * self.center - self.center;
        let mut p = AffineTransform::new(t.matrix, shift).to_params();
        for (v, s) in p.iter_mut().zip(&self.scales) {
            *v *= s;
        }
        p
    }

    fn transform(&self, u: &[f64; 12]) -> AffineTransform {
        let mut p = *u;
        for (v, s) in p.iter_mut().zip(&self.scales) {
            *v /= s;
        }
        let raw = AffineTransform::from_params(&p);
        let m: Matrix3<f64> = raw.matrix;
        AffineTransform::new(m, self.center - m * self.center + raw.translation)
    }
}

struct Level<'a, T> {
    fixed: &'a Volume<T>,
    moving: &'a Volume<T>,
    metric: Metric,
    stride: usize,
    param: &'a Centered,
}

impl<T: Real> Level<'_, T> {
    fn value(&self, u: &[f64; 12]) -> Result<f64> {
        let t = self.param.transform(u);
        t.ensure_invertible()?;
        evaluate(self.fixed, self.moving, &t, self.metric, self.stride)
    }

    fn gradient(&self, u: &[f64; 12]) -> Result<[f64; 12]> {
        let mut g = [0.0; 12];
        for i in 0..12 {
            let mut a = *u;
            let mut b = *u;
            a[i] += GRADIENT_STEP;
            b[i] -= GRADIENT_STEP;
            g[i] = (self.value(&a)? - self.value(&b)?) / (2.0 * GRADIENT_STEP);
        }
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonFiniteMetric)
        }
    }
}

struct LevelOutcome {
    u: [f64; 12],
    start: f64,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn descend<T: Real>(level: &Level<'_, T>, u0: [f64; 12], f0: f64, cfg: &RegistrationConfig) -> Result<LevelOutcome> {
    let mut u = u0;
    let mut f = f0;
    let mut step = cfg.initial_step;
    let mut grad: Option<[f64; 12]> = None;
    let mut prev_dir: Option<[f64; 12]> = None;
    let mut iterations = 0;
    while iterations < cfg.max_iterations_per_level && step >= cfg.min_step {
        let g = match grad {
            Some(g) => g,
            None => level.gradient(&u)?,
        };
        grad = Some(g);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let dir = g.map(|v| -v / norm);
        let reversed = prev_dir.is_some_and(|pd| dir.iter().zip(&pd).map(|(a, b)| a * b).sum::<f64>() < 0.0);
        if reversed {
            step *= cfg.relaxation;
        }
        prev_dir = Some(dir);
        iterations += 1;

        let mut trial = u;
        for (t, d) in trial.iter_mut().zip(&dir) {
            *t += step * d;
        }
        match level.value(&trial) {
            Ok(ft) if ft < f => {
                u = trial;
                f = ft;
                grad = None;
            }
            // rejected trials, including ones that leave the overlap, shrink the step
            Ok(_) | Err(Error::InsufficientOverlap { .. }) | Err(Error::SingularTransform(_)) | Err(Error::NonFiniteMetric) => {
                step *= cfg.relaxation;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LevelOutcome {
        u,
        start: f0,
        value: f,
        iterations,
        converged: step < cfg.min_step || grad.is_some_and(|g| g.iter().all(|&v| v == 0.0)),
    })
}

/// Aligns `moving` (atlas) to `fixed` (patient) starting from `init`.
pub fn register_affine<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    cfg: &RegistrationConfig,
    init: &AffineTransform,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    init.ensure_invertible()?;
    let param = Centered {
        center: Vector3::from(fixed.geometry().center_world()),
        scales: cfg.parameter_scales,
    };
    let u_init = param.to_scaled(init);
    let mut u = u_init;
    let mut result = RegistrationResult {
        transform: *init,
        final_metric: f64::NAN,
        iterations_used: Vec::new(),
        converged: Vec::new(),
        level_metrics: Vec::new(),
    };
    for &factor in &cfg.pyramid_factors {
        let f_l = downsample(fixed, level_factors(fixed.geometry(), factor))?;
        let m_l = downsample(moving, level_factors(moving.geometry(), factor))?;
        let level = Level {
            fixed: &f_l,
            moving: &m_l,
            metric: cfg.metric,
            stride: cfg.sample_stride(),
            param: &param,
        };
        let f_init = level.value(&u_init)?;
        let (start_u, start_f) = if u == u_init {
            (u, f_init)
        } else {
            match level.value(&u) {
                Ok(f) if f <= f_init => (u, f),
                _ => (u_init, f_init),
            }
        };
        let out = descend(&level, start_u, start_f, cfg)?;
        u = out.u;
        result.final_metric = out.value;
        result.iterations_used.push(out.iterations);
        result.converged.push(out.converged);
        result.level_metrics.push([out.start, out.value]);
    }
    result.transform = param.transform(&u);
    Ok(result)
}

/// Carries `atlas_mask` onto `target` through `t`: trilinear resampling of the
/// 0/1 mask with zero outside, thresholded at 0.5.
pub fn propagate_mask(atlas_mask: &BinaryMask, t: &AffineTransform, target: &Geometry) -> Result<BinaryMask> {
    let v: Volume<f64> = atlas_mask.to_volume();
    Ok(resample(&v, target, t, Interpolation::Trilinear, 0.0)?.threshold(0.5))
}
