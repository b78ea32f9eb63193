use super::{linear_index, Dims, Result, Spacing, Volume3D, VolumeError};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Spacing after resampling `dims` voxels to `target` voxels over the same
/// field of view: `spacing * dims / target` per axis.
pub fn resampled_spacing(spacing: Spacing, dims: Dims, target: Dims) -> Spacing {
    [
        spacing[0] * dims[0] as f64 / target[0] as f64,
        spacing[1] * dims[1] as f64 / target[1] as f64,
        spacing[2] * dims[2] as f64 / target[2] as f64,
    ]
}

/// Per-axis sample position for each output index. Voxel centres are
/// aligned (half-voxel convention) and positions are clamped to the edge.
fn axis_positions(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let max = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let src = if n_in == n_out {
                i as f64
            } else {
                ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max)
            };
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, frac)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

pub fn resample(vol: &Volume3D, target: Dims, mode: Interpolation) -> Result<Volume3D> {
    resample_with(vol, target, mode, Exec::default())
}

/// Resamples `vol` onto a `target` grid covering the same field of view.
pub fn resample_with(
    vol: &Volume3D,
    target: Dims,
    mode: Interpolation,
    exec: Exec,
) -> Result<Volume3D> {
    if target.iter().any(|&d| d == 0) {
        return Err(VolumeError::ZeroDim(target));
    }
    let dims = vol.dims();
    let spacing = resampled_spacing(vol.spacing(), dims, target);
    if dims == target {
        return Volume3D::new(target, spacing, vol.data().to_vec());
    }
    let pz = axis_positions(dims[0], target[0]);
    let py = axis_positions(dims[1], target[1]);
    let px = axis_positions(dims[2], target[2]);
    let src = vol.data();
    let plane = target[1] * target[2];
    let mut out = vec![0.0f32; plane * target[0]];

    exec.for_each_chunk(&mut out, plane, |z, slab| {
        let (z0, z1, tz) = pz[z];
        let mut k = 0;
        for &(y0, y1, ty) in &py {
            for &(x0, x1, tx) in &px {
                slab[k] = match mode {
                    Interpolation::Nearest => {
                        let zi = if tz >= 0.5 { z1 } else { z0 };
                        let yi = if ty >= 0.5 { y1 } else { y0 };
                        let xi = if tx >= 0.5 { x1 } else { x0 };
                        src[linear_index(dims, zi, yi, xi)]
                    }
                    Interpolation::Trilinear => {
                        let at = |zz, yy, xx| src[linear_index(dims, zz, yy, xx)] as f64;
                        let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), tx);
                        let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), tx);
                        let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), tx);
                        let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), tx);
                        let c0 = lerp(c00, c01, ty);
                        let c1 = lerp(c10, c11, ty);
                        lerp(c0, c1, tz) as f32
                    }
                };
                k += 1;
            }
        }
    });
    Volume3D::new(target, spacing, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> Volume3D {
        Volume3D::from_fn(dims, [1.0; 3], |z, y, x| (z * 7 + y * 3 + x) as f32).unwrap()
    }

    #[test]
    fn identity_when_dims_match() {
        let v = ramp([3, 4, 5]);
        let r = resample(&v, [3, 4, 5], Interpolation::Trilinear).unwrap();
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume3D::filled([4, 3, 5], [1.0; 3], 2.5).unwrap();
        let r = resample(&v, [7, 2, 9], Interpolation::Trilinear).unwrap();
        assert!(r.data().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn center_of_upsampled_cube_is_corner_mean() {
        let vals = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
        let v = Volume3D::new([2, 2, 2], [1.0; 3], vals.to_vec()).unwrap();
        let r = resample(&v, [3, 3, 3], Interpolation::Trilinear).unwrap();
        let mean: f32 = vals.iter().sum::<f32>() / 8.0;
        assert!((r.get(1, 1, 1) - mean).abs() < 1e-4, "{}", r.get(1, 1, 1));
    }

    #[test]
    fn spacing_follows_field_of_view() {
        let v = Volume3D::filled([80, 80, 80], [2.0; 3], 0.0).unwrap();
        let r = resample(&v, [160, 160, 160], Interpolation::Trilinear).unwrap();
        assert_eq!(r.spacing(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn nearest_keeps_value_set() {
        let v = Volume3D::from_fn([5, 6, 7], [1.0; 3], |z, y, x| [0.0, 2.0, 4.0][(z + y + x) % 3])
            .unwrap();
        let r = resample(&v, [9, 4, 11], Interpolation::Nearest).unwrap();
        assert!(r.data().iter().all(|x| [0.0, 2.0, 4.0].contains(x)));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let v = ramp([6, 5, 4]);
        let a = resample_with(&v, [11, 9, 13], Interpolation::Trilinear, Exec::Sequential).unwrap();
        let b = resample_with(&v, [11, 9, 13], Interpolation::Trilinear, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
