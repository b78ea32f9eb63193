use super::{linear_index, offset, unravel, BinaryMask, Dims, Spacing, FACE_OFFSETS};

/// Mask voxels with at least one face neighbour outside the mask; voxels on
/// the grid border count as surface.
pub fn surface_voxels(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let src = mask.data();
    let out = (0..src.len())
        .map(|i| {
            src[i] && {
                let p = unravel(dims, i);
                FACE_OFFSETS.iter().any(|&d| match offset(dims, p, d) {
                    Some(q) => !src[linear_index(dims, q[0], q[1], q[2])],
                    None => true,
                })
            }
        })
        .collect();
    BinaryMask::new(dims, mask.spacing(), out).expect("same grid")
}

/// Lower envelope of parabolas `w^2 (p - q)^2 + f(q)` along one line.
fn edt_1d(f: &[f64], w: f64, out: &mut [f64]) {
    let n = f.len();
    let w2 = w * w;
    let mut v = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&last) => {
                    let fv = f[last] + w2 * (last * last) as f64;
                    let s = (fq - fv) / (2.0 * w2 * (q - last) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        continue;
                    }
                    v.push(q);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let d = p as f64 - q as f64;
        *o = w2 * d * d + f[q];
    }
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest
/// set voxel of `feature`, honoring anisotropic spacing. Infinite everywhere
/// when `feature` is empty.
pub fn squared_distance_transform(feature: &BinaryMask) -> Vec<f64> {
    squared_edt(feature.data(), feature.dims(), feature.spacing())
}

pub(crate) fn squared_edt(feature: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let mut buf: Vec<f64> = feature
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    for axis in [2usize, 1, 0] {
        let n = dims[axis];
        let stride = strides[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for start in 0..buf.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = buf[start + k * stride];
            }
            edt_1d(&line, spacing[axis], &mut out);
            for k in 0..n {
                buf[start + k * stride] = out[k];
            }
        }
    }
    buf
}
