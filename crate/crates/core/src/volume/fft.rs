use super::{Dims, Result, Spacing, Volume3D, VolumeError};
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// Complex spectrum on the same `(z, y, x)` layout as the source volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub dims: Dims,
    pub spacing: Spacing,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn power(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|c| c.norm_sqr())
    }
}

fn transform(data: &mut [Complex64], dims: Dims, dir: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let fft = planner.plan_fft(n, dir);
        let stride = strides[axis];
        line.resize(n, Complex64::new(0.0, 0.0));
        for start in 0..data.len() {
            // only visit the first element of each line along `axis`
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[start + k * stride] = *v;
            }
        }
    }
}

/// Forward 3D DFT (unnormalized). Dimensions must be powers of two.
pub fn fft3(vol: &Volume3D) -> Result<Spectrum> {
    let dims = vol.dims();
    if dims.iter().any(|d| !d.is_power_of_two()) {
        return Err(VolumeError::NonPowerOfTwoDims(dims));
    }
    let mut data: Vec<Complex64> = vol
        .data()
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();
    transform(&mut data, dims, FftDirection::Forward);
    Ok(Spectrum {
        dims,
        spacing: vol.spacing(),
        data,
    })
}

/// Inverse of [`fft3`], returning the real part scaled by `1/N`.
pub fn ifft3(spec: &Spectrum) -> Result<Volume3D> {
    let mut data = spec.data.clone();
    transform(&mut data, spec.dims, FftDirection::Inverse);
    let n = data.len() as f64;
    Volume3D::new(
        spec.dims,
        spec.spacing,
        data.into_iter().map(|c| (c.re / n) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_concentrates_in_dc() {
        let v = Volume3D::filled([4, 8, 2], [1.0; 3], 1.5).unwrap();
        let s = fft3(&v).unwrap();
        assert!((s.data[0].re - 1.5 * 64.0).abs() < 1e-9);
        assert!(s.data[1..].iter().all(|c| c.norm() < 1e-9));
    }

    #[test]
    fn impulse_is_flat() {
        let mut v = Volume3D::filled([4, 4, 4], [1.0; 3], 0.0).unwrap();
        v.set(0, 0, 0, 1.0);
        let s = fft3(&v).unwrap();
        assert!(s.data.iter().all(|c| (c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_power_of_two() {
        let v = Volume3D::filled([3, 4, 4], [1.0; 3], 0.0).unwrap();
        assert!(matches!(fft3(&v), Err(VolumeError::NonPowerOfTwoDims(_))));
    }
}
