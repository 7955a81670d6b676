//! Scalar volumes, binary masks and the image kernels that operate on them.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Real;
use crate::transform::AffineTransform;
use nalgebra::{Matrix3, Vector3};

/// Continuous indices closer than this to an integer are treated as nodes.
const NODE_SNAP: f64 = 1e-9;

/// 3D scalar grid with physical geometry. Data is x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    geometry: Geometry,
    data: Vec<T>,
}

/// Boolean grid sharing a volume's geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<bool>,
}

/// World-space gradient components, per millimeter.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T = f32> {
    pub geometry: Geometry,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

impl<T: Real> Volume<T> {
    pub fn new(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: T) -> Self {
        let n = geometry.len();
        Volume {
            geometry,
            data: vec![value; n],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let data = (0..geometry.len()).map(|idx| f(geometry.coords(idx))).collect();
        Volume { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.geometry.linear(i, j, k)]
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Keeps voxel values where the mask is set, `fill` elsewhere.
    pub fn masked(&self, mask: &BinaryMask, fill: T) -> Result<Volume<T>> {
        self.geometry.ensure_same(mask.geometry(), "volume", "mask")?;
        let data = self
            .data
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v } else { fill })
            .collect();
        Ok(Volume {
            geometry: self.geometry.clone(),
            data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    /// Trilinear interpolation at a continuous index. See [`sample_trilinear`].
    pub fn sample(&self, ijk: [f64; 3], outside: T) -> T {
        sample_trilinear(self, ijk, outside)
    }

    pub fn threshold(&self, level: T) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v >= level).collect(),
        }
    }
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(BinaryMask { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        let n = geometry.len();
        BinaryMask {
            geometry,
            data: vec![false; n],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..geometry.len()).map(|idx| f(geometry.coords(idx))).collect();
        BinaryMask { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.geometry.linear(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// 0/1 float volume with the same geometry.
    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        Volume {
            geometry: self.geometry.clone(),
            data: self
                .data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }

    /// Mean world position of the set voxels.
    pub fn centroid_index(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for (idx, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.geometry.coords(idx);
            for a in 0..3 {
                acc[a] += c[a] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| acc.map(|s| s / n as f64))
    }
}

#[inline(always)]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < NODE_SNAP {
        r
    } else {
        x
    }
}

/// Lower node, upper node and fractional weight along one axis.
#[inline(always)]
fn axis_stencil(x: f64, dim: usize) -> Option<(usize, usize, f64)> {
    let x = snap(x);
    let last = (dim - 1) as f64;
    if !(x >= 0.0 && x <= last) {
        return None;
    }
    let lo = x.floor();
    let i0 = lo as usize;
    if i0 + 1 >= dim {
        Some((i0, i0, 0.0))
    } else {
        Some((i0, i0 + 1, x - lo))
    }
}

#[inline(always)]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Interpolates the 8 voxels around a continuous index.
///
/// Returns `outside` when the index leaves `[0, dim - 1]` on any axis. Integer
/// indices return the stored value exactly.
pub fn sample_trilinear<T: Real>(v: &Volume<T>, ijk: [f64; 3], outside: T) -> T {
    match sample_trilinear_f64(v, ijk) {
        Some(s) => T::lit(s),
        None => outside,
    }
}

#[inline]
pub(crate) fn sample_trilinear_f64<T: Real>(v: &Volume<T>, ijk: [f64; 3]) -> Option<f64> {
    let d = v.geometry.dims;
    let (x0, x1, fx) = axis_stencil(ijk[0], d[0])?;
    let (y0, y1, fy) = axis_stencil(ijk[1], d[1])?;
    let (z0, z1, fz) = axis_stencil(ijk[2], d[2])?;
    let g = &v.geometry;
    let at = |i, j, k| v.data[g.linear(i, j, k)].as_f64();
    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    Some(lerp(c0, c1, fz))
}

#[inline]
pub(crate) fn sample_nearest<T: Real>(v: &Volume<T>, ijk: [f64; 3]) -> Option<T> {
    let d = v.geometry.dims;
    let mut n = [0usize; 3];
    for a in 0..3 {
        let r = ijk[a].round();
        if !(r >= 0.0 && r <= (d[a] - 1) as f64) {
            return None;
        }
        n[a] = r as usize;
    }
    Some(v.data[v.geometry.linear(n[0], n[1], n[2])])
}

/// Affine map from target voxel indices to source continuous indices through a
/// world-space transform.
#[derive(Clone, Copy, Debug)]
pub(crate) struct IndexMap {
    pub matrix: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

impl IndexMap {
    pub fn new(target: &Geometry, t: &AffineTransform, source: &Geometry) -> Self {
        let s_t = Matrix3::from_diagonal(&Vector3::from(target.spacing));
        let s_s_inv = Matrix3::from_diagonal(&Vector3::from(source.spacing).map(|s| 1.0 / s));
        let to_src = s_s_inv * source.direction.transpose();
        let matrix = to_src * t.matrix * target.direction * s_t;
        let offset = to_src
            * (t.matrix * Vector3::from(target.origin) + t.translation - Vector3::from(source.origin));
        IndexMap { matrix, offset }
    }

    #[inline(always)]
    pub fn apply(&self, c: [usize; 3]) -> [f64; 3] {
        let p = self.matrix * Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) + self.offset;
        [p.x, p.y, p.z]
    }
}

/// Resamples `src` onto `target` geometry. Each target voxel center is mapped
/// through `t` into source world space and interpolated there.
pub fn resample<T: Real>(
    src: &Volume<T>,
    target: &Geometry,
    t: &AffineTransform,
    interp: Interpolation,
    outside: T,
) -> Result<Volume<T>> {
    t.ensure_invertible()?;
    target.validate()?;
    let map = IndexMap::new(target, t, &src.geometry);
    let data = (0..target.len())
        .map(|idx| {
            let p = map.apply(target.coords(idx));
            match interp {
                Interpolation::Trilinear => sample_trilinear(src, p, outside),
                Interpolation::Nearest => sample_nearest(src, p).unwrap_or(outside),
            }
        })
        .collect();
    Ok(Volume {
        geometry: target.clone(),
        data,
    })
}

/// Block-average decimation by an integer factor per axis.
///
/// Partial blocks at the far border average only the voxels that exist. The
/// first output voxel sits at the centroid of its source block.
pub fn downsample<T: Real>(v: &Volume<T>, factor: [usize; 3]) -> Result<Volume<T>> {
    if factor.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "downsample factor must be >= 1, got {factor:?}"
        )));
    }
    if factor == [1, 1, 1] {
        return Ok(v.clone());
    }
    let g = &v.geometry;
    let d = g.dims;
    let out_dims = [0, 1, 2].map(|a| d[a].div_ceil(factor[a]));
    let first_centroid = [0, 1, 2].map(|a| (factor[a].min(d[a]) - 1) as f64 / 2.0);
    let geometry = Geometry {
        dims: out_dims,
        spacing: [0, 1, 2].map(|a| g.spacing[a] * factor[a] as f64),
        origin: g.index_to_world(first_centroid),
        direction: g.direction,
    };
    let mut data = Vec::with_capacity(geometry.len());
    for ok in 0..out_dims[2] {
        let zr = ok * factor[2]..((ok + 1) * factor[2]).min(d[2]);
        for oj in 0..out_dims[1] {
            let yr = oj * factor[1]..((oj + 1) * factor[1]).min(d[1]);
            for oi in 0..out_dims[0] {
                let xr = oi * factor[0]..((oi + 1) * factor[0]).min(d[0]);
                let mut sum = 0.0f64;
                let mut n = 0usize;
                for k in zr.clone() {
                    for j in yr.clone() {
                        for i in xr.clone() {
                            sum += v.at(i, j, k).as_f64();
                            n += 1;
                        }
                    }
                }
                data.push(T::lit(sum / n as f64));
            }
        }
    }
    Ok(Volume { geometry, data })
}

/// Normalized 1D Gaussian taps for a sigma in voxels, truncated at 3 sigma.
pub(crate) fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma_vox * sigma_vox)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let n = dims[axis] as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = ((idx / stride) % dims[axis]) as isize;
        let base = idx as isize - pos * stride as isize;
        let mut acc = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let p = (pos + t as isize - radius).clamp(0, n - 1);
            acc += w * data[(base + p * stride as isize) as usize];
        }
        *o = acc;
    }
    out
}

/// Separable Gaussian blur with `sigma_mm` converted to voxels per axis.
/// Borders clamp to the edge value.
pub fn gaussian_smooth<T: Real>(v: &Volume<T>, sigma_mm: f64) -> Result<Volume<T>> {
    if !(sigma_mm > 0.0) || !sigma_mm.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sigma_mm must be positive, got {sigma_mm}"
        )));
    }
    let dims = v.geometry.dims;
    let mut buf: Vec<f64> = v.data.iter().map(|x| x.as_f64()).collect();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm / v.geometry.spacing[axis]);
        if kernel.len() > 1 && dims[axis] > 1 {
            buf = convolve_axis(&buf, dims, axis, &kernel);
        }
    }
    Ok(Volume {
        geometry: v.geometry.clone(),
        data: buf.into_iter().map(T::lit).collect(),
    })
}

/// Per-mm derivatives along the three index axes: central differences inside,
/// one-sided at the faces.
pub(crate) fn axis_gradient<T: Real>(v: &Volume<T>) -> Result<[Vec<T>; 3]> {
    let g = &v.geometry;
    let d = g.dims;
    if d.iter().any(|&n| n < 2) {
        return Err(Error::InvalidGeometry(format!(
            "gradient needs at least 2 voxels per axis, got {d:?}"
        )));
    }
    let strides = [1, d[0], d[0] * d[1]];
    let mut out: [Vec<T>; 3] = Default::default();
    for axis in 0..3 {
        let s = strides[axis];
        let h = g.spacing[axis];
        out[axis] = (0..g.len())
            .map(|idx| {
                let c = g.coords(idx)[axis];
                let val = |i: usize| v.data[i].as_f64();
                let dv = if c == 0 {
                    (val(idx + s) - val(idx)) / h
                } else if c + 1 == d[axis] {
                    (val(idx) - val(idx - s)) / h
                } else {
                    (val(idx + s) - val(idx - s)) / (2.0 * h)
                };
                T::lit(dv)
            })
            .collect();
    }
    Ok(out)
}

/// Spacing-aware image gradient expressed along world axes.
pub fn gradient<T: Real>(v: &Volume<T>) -> Result<VectorField<T>> {
    let [gi, gj, gk] = axis_gradient(v)?;
    let dir = v.geometry.direction;
    if dir == Matrix3::identity() {
        return Ok(VectorField {
            geometry: v.geometry.clone(),
            x: gi,
            y: gj,
            z: gk,
        });
    }
    let n = v.geometry.len();
    let (mut x, mut y, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for idx in 0..n {
        let w = dir * Vector3::new(gi[idx].as_f64(), gj[idx].as_f64(), gk[idx].as_f64());
        x.push(T::lit(w.x));
        y.push(T::lit(w.y));
        z.push(T::lit(w.z));
    }
    Ok(VectorField {
        geometry: v.geometry.clone(),
        x,
        y,
        z,
    })
}

impl<T: Real> VectorField<T> {
    pub fn magnitude(&self) -> Volume<T> {
        let data = (0..self.x.len())
            .map(|i| (self.x[i] * self.x[i] + self.y[i] * self.y[i] + self.z[i] * self.z[i]).sqrt())
            .collect();
        Volume {
            geometry: self.geometry.clone(),
            data,
        }
    }
}
