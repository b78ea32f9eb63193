use super::{Dims, Volume3D};
use crate::exec::Exec;

/// Normalized Gaussian taps for `sigma` voxels, truncated at `floor(3 sigma)`.
/// A zero radius yields the single tap `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = if sigma > 0.0 {
        (3.0 * sigma).floor() as usize
    } else {
        0
    };
    if radius == 0 {
        return vec![1.0];
    }
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Convolves along one axis with clamp-to-edge borders.
fn convolve_axis(src: &[f64], dims: Dims, axis: usize, kernel: &[f64], exec: Exec) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let plane = dims[1] * dims[2];
    let strides = [plane, dims[2], 1];
    let stride = strides[axis];
    let n = dims[axis] as isize;
    let mut out = vec![0.0f64; src.len()];
    exec.for_each_chunk(&mut out, plane, |z, slab| {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z, y, x];
                let base = z * plane + y * dims[2] + x - p[axis] * stride;
                let c = p[axis] as isize;
                let mut acc = 0.0;
                for (t, &w) in kernel.iter().enumerate() {
                    let j = (c + t as isize - radius).clamp(0, n - 1) as usize;
                    acc += w * src[base + j * stride];
                }
                slab[y * dims[2] + x] = acc;
            }
        }
    });
    out
}

pub fn gaussian_smooth(vol: &Volume3D, sigma_mm: f64) -> Volume3D {
    gaussian_smooth_with(vol, sigma_mm, Exec::default())
}

/// Separable Gaussian smoothing with `sigma_mm` converted to voxels per axis.
pub fn gaussian_smooth_with(vol: &Volume3D, sigma_mm: f64, exec: Exec) -> Volume3D {
    let sp = vol.spacing();
    smooth_sigmas(vol, [sigma_mm / sp[0], sigma_mm / sp[1], sigma_mm / sp[2]], exec)
}

/// Isotropic smoothing with `sigma_vox` expressed in voxels.
pub fn gaussian_smooth_vox(vol: &Volume3D, sigma_vox: f64) -> Volume3D {
    smooth_sigmas(vol, [sigma_vox; 3], Exec::default())
}

pub(crate) fn smooth_sigmas(vol: &Volume3D, sigmas: [f64; 3], exec: Exec) -> Volume3D {
    let buf: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    let out = smooth_f64(buf, vol.dims(), sigmas, exec);
    Volume3D::new(
        vol.dims(),
        vol.spacing(),
        out.into_iter().map(|v| v as f32).collect(),
    )
    .expect("grid unchanged")
}

pub(crate) fn smooth_f64(mut buf: Vec<f64>, dims: Dims, sigmas: [f64; 3], exec: Exec) -> Vec<f64> {
    for axis in [2, 1, 0] {
        let k = gaussian_kernel(sigmas[axis]);
        if k.len() > 1 {
            buf = convolve_axis(&buf, dims, axis, &k, exec);
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved() {
        let v = Volume3D::filled([6, 7, 8], [1.0, 2.0, 0.5], 3.25).unwrap();
        let s = gaussian_smooth(&v, 1.5);
        assert!(s.data().iter().all(|&x| (x - 3.25).abs() < 1e-6));
    }

    #[test]
    fn impulse_gives_separable_gaussian() {
        let n = 15;
        let mut v = Volume3D::filled([n, n, n], [1.0; 3], 0.0).unwrap();
        v.set(7, 7, 7, 1.0);
        let sigma = 1.2;
        let s = gaussian_smooth(&v, sigma);
        // direct product of normalized 1D kernels
        let k = gaussian_kernel(sigma);
        let r = k.len() / 2;
        let mut best = (0.0f32, [0; 3]);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let w = |c: usize| {
                        let d = c as isize - 7 + r as isize;
                        if d >= 0 && (d as usize) < k.len() {
                            k[d as usize]
                        } else {
                            0.0
                        }
                    };
                    let expect = w(z) * w(y) * w(x);
                    let got = s.get(z, y, x);
                    assert!((got as f64 - expect).abs() < 1e-7);
                    if got > best.0 {
                        best = (got, [z, y, x]);
                    }
                }
            }
        }
        assert_eq!(best.1, [7, 7, 7]);
        let total: f64 = s.data().iter().map(|&x| x as f64).sum();
        assert!((total - 1.0).abs() < 5e-3);
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let v = Volume3D::from_fn([4, 4, 4], [1.0; 3], |z, y, x| (z * 16 + y * 4 + x) as f32).unwrap();
        let s = gaussian_smooth(&v, 0.2);
        assert_eq!(s, v);
    }

    #[test]
    fn anisotropic_spacing_converts_sigma() {
        // 2 mm along x: sigma 2 mm is 1 voxel -> radius 3
        let k = gaussian_kernel(2.0 / 2.0);
        assert_eq!(k.len(), 7);
    }
}
