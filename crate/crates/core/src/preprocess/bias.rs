//! Multiplicative bias-field correction in the log domain.
//!
//! The observed image is modelled as `V_obs = V_true * B` with a smooth `B`.
//! The log-field is estimated by normalized Gaussian smoothing of the masked
//! log-intensities on a shrunken grid, resampled back onto the native grid
//! and normalized to zero mean over the brain (unit geometric mean), so
//! overall brightness is preserved.

use super::PreprocessError;
use crate::exec::Exec;
use crate::volume::{smooth, BinaryMask, Dims, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BiasParams {
    /// Width of the smoothing kernel, mm.
    pub sigma_mm: f64,
    /// Integer shrink factor of the estimation grid.
    pub shrink: usize,
    /// Estimation passes; each re-estimates on the image corrected so far.
    pub iterations: usize,
}

impl Default for BiasParams {
    fn default() -> Self {
        Self {
            sigma_mm: 25.0,
            shrink: 4,
            iterations: 20,
        }
    }
}

pub fn correct_bias(vol: &Volume3D, brain: &BinaryMask) -> Result<Volume3D, PreprocessError> {
    correct_bias_with(vol, brain, &BiasParams::default())
}

/// Returns the estimated log-field on the native grid (zero mean over brain).
/// Passes stop early once an update changes no voxel by more than 1e-4.
pub fn estimate_log_field(
    vol: &Volume3D,
    brain: &BinaryMask,
    params: &BiasParams,
) -> Result<Vec<f64>, PreprocessError> {
    let mut total = single_pass(vol, brain, params)?;
    let mut cur = vol.clone();
    for _ in 1..params.iterations.max(1) {
        for ((c, v), f) in cur.data_mut().iter_mut().zip(vol.data()).zip(&total) {
            *c = (*v as f64 / f.exp()) as f32;
        }
        let step = single_pass(&cur, brain, params)?;
        let change = step.iter().zip(brain.data()).filter(|(_, &m)| m).fold(0.0f64, |a, (s, _)| a.max(s.abs()));
        total.iter_mut().zip(&step).for_each(|(t, s)| *t += s);
        if change < 1e-4 {
            break;
        }
    }
    Ok(total)
}

fn single_pass(vol: &Volume3D, brain: &BinaryMask, params: &BiasParams) -> Result<Vec<f64>, PreprocessError> {
    vol.same_grid(brain.dims())?;
    let dims = vol.dims();
    let data = vol.data();
    let mask = brain.data();
    let floor = data
        .iter()
        .zip(mask)
        .filter(|(v, &m)| m && v.is_finite() && **v > 0.0)
        .map(|(&v, _)| v)
        .fold(f32::INFINITY, f32::min);
    if brain.count() == 0 {
        return Err(PreprocessError::EmptyBrainMask);
    }
    if !floor.is_finite() {
        return Err(PreprocessError::NoPositiveIntensity);
    }

    let s = params.shrink.max(1);
    let cdims: Dims = std::array::from_fn(|a| dims[a].div_ceil(s));
    let clen = cdims.iter().product::<usize>();
    let mut num = vec![0.0f64; clen];
    let mut den = vec![0.0f64; clen];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let i = (z * dims[1] + y) * dims[2] + x;
                if !mask[i] {
                    continue;
                }
                let v = data[i];
                let v = if v.is_finite() && v > floor { v } else { floor };
                let c = ((z / s) * cdims[1] + y / s) * cdims[2] + x / s;
                num[c] += (v as f64).ln();
                den[c] += 1.0;
            }
        }
    }
    let total_num: f64 = num.iter().sum();
    let total_den: f64 = den.iter().sum();
    let sp = vol.spacing();
    let sigmas: [f64; 3] = std::array::from_fn(|a| params.sigma_mm / (sp[a] * s as f64));
    let exec = Exec::default();
    let num = smooth::smooth_f64(num, cdims, sigmas, exec);
    let den = smooth::smooth_f64(den, cdims, sigmas, exec);
    let peak = den.iter().cloned().fold(0.0, f64::max);
    let fallback = total_num / total_den;
    let coarse: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| if d > 1e-9 * peak { n / d } else { fallback })
        .collect();

    // coarse cell c covers fine indices [c*s, c*s + s); its centre sits at
    // c*s + (s-1)/2
    let pos = |axis: usize| -> Vec<(usize, usize, f64)> {
        let nc = cdims[axis];
        (0..dims[axis])
            .map(|i| {
                let src = ((i as f64 - (s as f64 - 1.0) / 2.0) / s as f64).clamp(0.0, (nc - 1) as f64);
                let i0 = src.floor() as usize;
                (i0, (i0 + 1).min(nc - 1), src - i0 as f64)
            })
            .collect()
    };
    let (pz, py, px) = (pos(0), pos(1), pos(2));
    let at = |z: usize, y: usize, x: usize| coarse[(z * cdims[1] + y) * cdims[2] + x];
    let mut field = Vec::with_capacity(vol.len());
    for &(z0, z1, tz) in &pz {
        for &(y0, y1, ty) in &py {
            for &(x0, x1, tx) in &px {
                let l = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let c0 = l(l(at(z0, y0, x0), at(z0, y0, x1), tx), l(at(z0, y1, x0), at(z0, y1, x1), tx), ty);
                let c1 = l(l(at(z1, y0, x0), at(z1, y0, x1), tx), l(at(z1, y1, x0), at(z1, y1, x1), tx), ty);
                field.push(l(c0, c1, tz));
            }
        }
    }
    let (sum, n) = field
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&f, _)| (s + f, n + 1));
    let mean = sum / n as f64;
    field.iter_mut().for_each(|f| *f -= mean);
    Ok(field)
}

/// `V_corr = V_obs / exp(log B)` on the native grid.
pub fn correct_bias_with(
    vol: &Volume3D,
    brain: &BinaryMask,
    params: &BiasParams,
) -> Result<Volume3D, PreprocessError> {
    let field = estimate_log_field(vol, brain, params)?;
    let mut out = vol.clone();
    for (v, f) in out.data_mut().iter_mut().zip(&field) {
        *v = (*v as f64 / f.exp()) as f32;
    }
    Ok(out)
}
