//! QC overlays: orthogonal mid-slices as binary PPM with the mask outline in red.

use skullstrip_core::{BinaryMask, Volume};

pub const RED: [u8; 3] = [255, 0, 0];

/// Grayscale window bounds as percentiles of all voxel values.
pub const WINDOW: (f64, f64) = (0.02, 0.98);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    /// (fixed axis, horizontal axis, vertical axis)
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Axial => (2, 0, 1),
            Plane::Coronal => (1, 0, 2),
            Plane::Sagittal => (0, 1, 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Nearest-rank percentiles `(lo, hi)` of the finite values.
pub fn window(v: &Volume<f32>) -> (f32, f32) {
    let mut vals: Vec<f32> = v.data().iter().copied().filter(|x| x.is_finite()).collect();
    if vals.is_empty() {
        return (0.0, 1.0);
    }
    vals.sort_by(f32::total_cmp);
    let at = |p: f64| vals[(p * (vals.len() - 1) as f64).round() as usize];
    (at(WINDOW.0), at(WINDOW.1))
}

/// Slice index per axis through the mask centroid, or the volume middle for
/// an empty mask.
pub fn slice_center(mask: &BinaryMask) -> [usize; 3] {
    let dims = mask.dims();
    match mask.centroid_index() {
        Some(c) => [0, 1, 2].map(|a| (c[a].round() as usize).min(dims[a] - 1)),
        None => dims.map(|d| d / 2),
    }
}

/// Renders one plane through `center`. Row 0 is the top of the image, which
/// holds the largest index along the vertical axis.
pub fn render(volume: &Volume<f32>, mask: &BinaryMask, plane: Plane, center: [usize; 3]) -> Image {
    let dims = volume.dims();
    let (fixed, hx, vy) = plane.axes();
    let (w, h) = (dims[hx], dims[vy]);
    let (lo, hi) = window(volume);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let voxel = |x: usize, y: usize| {
        let mut c = [0usize; 3];
        c[fixed] = center[fixed];
        c[hx] = x;
        c[vy] = h - 1 - y;
        c
    };
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && {
            let c = voxel(x as usize, y as usize);
            mask.at(c[0], c[1], c[2])
        }
    };
    let mut rgb = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            // in-plane outline: a mask pixel with a 4-neighbor outside the mask or the image
            let edge = inside(xi, yi)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dx, dy)| !inside(xi + dx, yi + dy));
            if edge {
                rgb.extend_from_slice(&RED);
            } else {
                let c = voxel(x, y);
                let v = volume.at(c[0], c[1], c[2]);
                let t = if v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
                let g = (t * 255.0).round() as u8;
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
    }
    Image { width: w, height: h, rgb }
}
