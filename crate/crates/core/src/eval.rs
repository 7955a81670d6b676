//! Overlap and surface-distance scores between binary masks.

use crate::error::{Error, Result};
use crate::levelset::edt::squared_distance_transform;
use crate::levelset::neighbors6;
use crate::volume::BinaryMask;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiceReport {
    pub dice: f64,
    pub true_voxels_a: usize,
    pub true_voxels_b: usize,
    pub intersection: usize,
}

/// Dice overlap `2|A∩B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<DiceReport> {
    a.geometry().ensure_same(b.geometry(), "first mask", "second mask")?;
    let mut r = DiceReport {
        dice: 1.0,
        true_voxels_a: 0,
        true_voxels_b: 0,
        intersection: 0,
    };
    for (&x, &y) in a.data().iter().zip(b.data()) {
        r.true_voxels_a += x as usize;
        r.true_voxels_b += y as usize;
        r.intersection += (x && y) as usize;
    }
    let denom = r.true_voxels_a + r.true_voxels_b;
    if denom > 0 {
        r.dice = 2.0 * r.intersection as f64 / denom as f64;
    }
    Ok(r)
}

/// Mask voxels with an in-grid 6-neighbor outside the mask.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    let g = m.geometry();
    let d = m.data();
    let data = (0..g.len())
        .map(|i| d[i] && neighbors6(g, i).any(|n| !d[n]))
        .collect();
    BinaryMask::new(g.clone(), data).expect("same geometry")
}

/// Symmetric mean and maximum distance in mm between the boundary voxels of
/// `a` and `b`. The mean pools the distances from both sides.
pub fn boundary_distance_stats(a: &BinaryMask, b: &BinaryMask) -> Result<(f64, f64)> {
    a.geometry().ensure_same(b.geometry(), "first mask", "second mask")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask);
    }
    let g = a.geometry();
    let (ba, bb) = (boundary(a), boundary(b));
    // a full mask has no in-grid boundary; fall back to its voxels
    let surface = |bm: BinaryMask, m: &BinaryMask| if bm.is_empty() { m.clone() } else { bm };
    let (ba, bb) = (surface(ba, a), surface(bb, b));
    let da = squared_distance_transform(ba.data(), g.dims, g.spacing);
    let db = squared_distance_transform(bb.data(), g.dims, g.spacing);
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut max = 0.0f64;
    for (from, to) in [(&ba, &db), (&bb, &da)] {
        for (i, _) in from.data().iter().enumerate().filter(|(_, &x)| x) {
            let d = to[i].sqrt();
            sum += d;
            n += 1;
            max = max.max(d);
        }
    }
    Ok((sum / n as f64, max))
}
