//! Minimal NIfTI-1 single-file (`.nii`) reader and writer.
//!
//! Reading accepts either byte order, datatypes uint8/int16/float32/float64,
//! and takes geometry from the sform, falling back to the qform and then to
//! `pixdim`. Writing always produces little-endian float32 with an sform.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Real;
use crate::volume::Volume;
use nalgebra::Matrix3;
use std::path::Path;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// Tolerance above which an sform is considered sheared rather than noisy.
const SFORM_SHEAR_TOL: f64 = 1e-3;

struct Fields<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn raw<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().unwrap();
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.raw(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.raw(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.raw(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.raw(at))
    }
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes)
}

pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume<f32>> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::InvalidNifti(format!(
            "file has {} bytes, header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => {
            return Err(Error::InvalidNifti(format!(
                "sizeof_hdr is {le}, expected 348"
            )))
        }
    };
    let h = Fields { bytes, big_endian };
    debug_assert_eq!(h.i32(offset::SIZEOF_HDR), 348);
    if &bytes[offset::MAGIC..offset::MAGIC + 4] != MAGIC {
        return Err(Error::InvalidNifti(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            &bytes[offset::MAGIC..offset::MAGIC + 4]
        )));
    }

    let dim: Vec<i16> = (0..8).map(|i| h.i16(offset::DIM + 2 * i)).collect();
    if dim[0] != 3 {
        return Err(Error::InvalidNifti(format!(
            "only 3D volumes are supported, dim[0] = {}",
            dim[0]
        )));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::InvalidNifti(format!("invalid dims {:?}", &dim[1..4])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let n = dims[0] * dims[1] * dims[2];

    let datatype = h.i16(offset::DATATYPE);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let vox_offset = h.f32(offset::VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::InvalidNifti(format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let end = start + n * width;
    if bytes.len() < end {
        return Err(Error::InvalidNifti(format!(
            "file truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let body = Fields {
        bytes: &bytes[start..end],
        big_endian,
    };
    let raw: Vec<f64> = match datatype {
        DT_UINT8 => body.bytes.iter().map(|&b| b as f64).collect(),
        DT_INT16 => (0..n).map(|i| body.i16(2 * i) as f64).collect(),
        DT_FLOAT32 => (0..n).map(|i| body.f32(4 * i) as f64).collect(),
        _ => (0..n).map(|i| body.f64(8 * i)).collect(),
    };
    let slope = h.f32(offset::SCL_SLOPE) as f64;
    let inter = h.f32(offset::SCL_INTER) as f64;
    let scaled = slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0);
    let data: Vec<f32> = raw
        .into_iter()
        .map(|r| if scaled { (slope * r + inter) as f32 } else { r as f32 })
        .collect();

    let geometry = read_geometry(&h, dims)?;
    Volume::new(geometry, data)
}

fn read_geometry(h: &Fields, dims: [usize; 3]) -> Result<Geometry> {
    let pixdim: Vec<f64> = (0..8).map(|i| h.f32(offset::PIXDIM + 4 * i) as f64).collect();
    let sform_code = h.i16(offset::SFORM_CODE);
    let qform_code = h.i16(offset::QFORM_CODE);
    if sform_code > 0 {
        let mut m = Matrix3::zeros();
        let mut origin = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = h.f32(offset::SROW_X + 16 * r + 4 * c) as f64;
            }
            origin[r] = h.f32(offset::SROW_X + 16 * r + 12) as f64;
        }
        let spacing = [0, 1, 2].map(|c| m.column(c).norm());
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidNifti("sform has a zero column".into()));
        }
        let mut dir = m;
        for c in 0..3 {
            let s = spacing[c];
            dir.column_mut(c).iter_mut().for_each(|x| *x /= s);
        }
        Geometry::new(dims, spacing, origin, orthonormalize(dir)?)
    } else if qform_code > 0 {
        let b = h.f32(offset::QUATERN_B) as f64;
        let c = h.f32(offset::QUATERN_B + 4) as f64;
        let d = h.f32(offset::QUATERN_B + 8) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut r = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        r.column_mut(2).iter_mut().for_each(|x| *x *= qfac);
        let origin = [0, 1, 2].map(|i| h.f32(offset::QOFFSET_X + 4 * i) as f64);
        let spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
        Geometry::new(dims, spacing, origin, orthonormalize(r)?)
    } else {
        let spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
        Geometry::axis_aligned(dims, spacing)
    }
}

/// Removes float32 storage noise from a rotation; rejects real shear.
fn orthonormalize(m: Matrix3<f64>) -> Result<Matrix3<f64>> {
    let err = (m.transpose() * m - Matrix3::identity()).amax();
    if err > SFORM_SHEAR_TOL {
        return Err(Error::InvalidNifti(format!(
            "orientation is not a rotation (orthonormality error {err:e})"
        )));
    }
    if err < 1e-12 {
        return Ok(m);
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok(u * vt)
}

/// Serializes as little-endian float32 NIfTI-1 with `sform_code = 1`.
pub fn nifti_bytes<T: Real>(v: &Volume<T>) -> Vec<u8> {
    let g = v.geometry();
    let mut out = vec![0u8; VOX_OFFSET + 4 * g.len()];
    let mut put = |at: usize, b: &[u8]| out[at..at + b.len()].copy_from_slice(b);
    put(offset::SIZEOF_HDR, &348i32.to_le_bytes());
    let dim = [3, g.dims[0] as i16, g.dims[1] as i16, g.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(offset::DIM + 2 * i, &d.to_le_bytes());
    }
    put(offset::DATATYPE, &DT_FLOAT32.to_le_bytes());
    put(offset::BITPIX, &32i16.to_le_bytes());
    let pixdim = [1.0f32, g.spacing[0] as f32, g.spacing[1] as f32, g.spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(offset::PIXDIM + 4 * i, &p.to_le_bytes());
    }
    put(offset::VOX_OFFSET, &(VOX_OFFSET as f32).to_le_bytes());
    put(offset::SCL_SLOPE, &1.0f32.to_le_bytes());
    put(offset::SCL_INTER, &0.0f32.to_le_bytes());
    // millimeters
    put(offset::XYZT_UNITS, &[2u8]);
    put(offset::SFORM_CODE, &1i16.to_le_bytes());
    for (r, row) in g.sform_rows().iter().enumerate() {
        for (c, val) in row.iter().enumerate() {
            put(offset::SROW_X + 16 * r + 4 * c, &(*val as f32).to_le_bytes());
        }
    }
    put(offset::MAGIC, MAGIC);
    let body = &mut out[VOX_OFFSET..];
    for (chunk, val) in body.chunks_exact_mut(4).zip(v.data()) {
        chunk.copy_from_slice(&(val.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn save_nifti<T: Real>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, nifti_bytes(v)).map_err(|e| Error::io(path, e))
}
