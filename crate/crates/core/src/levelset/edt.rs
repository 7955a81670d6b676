//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), one pass per axis, with distances measured in millimeters.

/// Squared distance in mm² from every voxel to the nearest `true` voxel.
///
/// Voxels that are set get 0. If no voxel is set the result is all `+inf`.
pub fn squared_distance_transform(mask: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    assert_eq!(mask.len(), dims[0] * dims[1] * dims[2]);
    let mut d: Vec<f64> = mask
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let longest = *dims.iter().max().unwrap();
    let mut scratch = Scratch::new(longest);
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let base = a * strides[o1] + b * strides[o2];
                for q in 0..n {
                    scratch.f[q] = d[base + q * stride];
                }
                scratch.transform(n, spacing[axis]);
                for q in 0..n {
                    d[base + q * stride] = scratch.out[q];
                }
            }
        }
    }
    d
}

struct Scratch {
    f: Vec<f64>,
    out: Vec<f64>,
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            f: vec![0.0; n],
            out: vec![0.0; n],
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// 1D pass: out[q] = min_r (q·h − r·h)² + f[r] over finite f[r].
    fn transform(&mut self, n: usize, h: f64) {
        let f = &self.f;
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k: usize = 0;
        let mut any = false;
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            let pq = q as f64 * h;
            if !any {
                any = true;
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                continue;
            }
            // z[0] is -inf, so the envelope never pops below its first parabola
            loop {
                let r = v[k];
                let pr = r as f64 * h;
                let s = ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
                if s <= z[k] {
                    k -= 1;
                    continue;
                }
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
        if !any {
            self.out[..n].fill(f64::INFINITY);
            return;
        }
        let mut j = 0;
        for q in 0..n {
            let pq = q as f64 * h;
            while z[j + 1] < pq {
                j += 1;
            }
            let r = v[j];
            let dx = pq - r as f64 * h;
            self.out[q] = dx * dx + f[r];
        }
    }
}
