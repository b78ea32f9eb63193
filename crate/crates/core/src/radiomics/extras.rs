//! Gradient-orientation histogram, spectral statistics, histogram moments
//! and box-counting dimension.

use super::first_order::histogram;
use super::{roi_values, FeatureFamily, FeatureVector, RadiomicsError};
use crate::volume::{fft3, BinaryMask, Volume3D};
use std::f64::consts::PI;

pub const HOG_AZIMUTH_BINS: usize = 8;
pub const HOG_ELEVATION_BINS: usize = 4;
pub const HOG_BINS: usize = HOG_AZIMUTH_BINS * HOG_ELEVATION_BINS;
pub const MOMENT_BINS: usize = 64;
pub const BOX_SIZES: [usize; 4] = [1, 2, 4, 8];

pub fn extras_names() -> Vec<String> {
    let mut names: Vec<String> = (0..HOG_AZIMUTH_BINS)
        .flat_map(|a| (0..HOG_ELEVATION_BINS).map(move |e| format!("hog_a{a}_e{e}")))
        .collect();
    names.extend(
        [
            "fft_centroid",
            "fft_low",
            "fft_mid",
            "fft_high",
            "hist_mean",
            "hist_variance",
            "hist_skewness",
            "hist_kurtosis",
            "fractal_dimension",
        ]
        .map(String::from),
    );
    names
}

/// Central differences in physical units, one-sided at the grid edge.
fn gradient(vol: &Volume3D, p: [usize; 3]) -> [f64; 3] {
    let dims = vol.dims();
    let sp = vol.spacing();
    let mut g = [0.0; 3];
    for a in 0..3 {
        if dims[a] < 2 {
            continue;
        }
        let mut lo = p;
        let mut hi = p;
        lo[a] = p[a].saturating_sub(1);
        hi[a] = (p[a] + 1).min(dims[a] - 1);
        let dv = vol.get(hi[0], hi[1], hi[2]) as f64 - vol.get(lo[0], lo[1], lo[2]) as f64;
        g[a] = dv / ((hi[a] - lo[a]) as f64 * sp[a]);
    }
    g
}

/// Magnitude-weighted 8 azimuth x 4 elevation orientation histogram,
/// L1-normalized. Zero total gradient yields the uniform vector.
pub fn hog3d(vol: &Volume3D, roi: &BinaryMask) -> Vec<f64> {
    let mut h = vec![0.0; HOG_BINS];
    for p in roi.coords() {
        let [gz, gy, gx] = gradient(vol, p);
        let planar = gx.hypot(gy);
        let mag = (planar * planar + gz * gz).sqrt();
        if mag == 0.0 {
            continue;
        }
        let az = gy.atan2(gx);
        let el = gz.atan2(planar);
        let ab = (((az + PI) / (2.0 * PI)) * HOG_AZIMUTH_BINS as f64) as usize;
        let eb = (((el + PI / 2.0) / PI) * HOG_ELEVATION_BINS as f64) as usize;
        h[ab.min(HOG_AZIMUTH_BINS - 1) * HOG_ELEVATION_BINS + eb.min(HOG_ELEVATION_BINS - 1)] += mag;
    }
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    } else {
        h.fill(1.0 / HOG_BINS as f64);
    }
    h
}

/// Radial spectral centroid and low/mid/high energy fractions (thirds of
/// Nyquist) of the mean-subtracted region, zero-padded to powers of two.
pub fn spectral_stats(vol: &Volume3D, roi: &BinaryMask) -> Result<[f64; 4], RadiomicsError> {
    let bbox = roi.bounding_box().ok_or(RadiomicsError::EmptyRegion)?;
    let vals = roi_values(vol, roi)?;
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let bd = bbox.dims();
    let pd = bd.map(usize::next_power_of_two);
    let padded = Volume3D::from_fn(pd, vol.spacing(), |z, y, x| {
        let (sz, sy, sx) = (z + bbox.lo[0], y + bbox.lo[1], x + bbox.lo[2]);
        if z < bd[0] && y < bd[1] && x < bd[2] && roi.get(sz, sy, sx) {
            (vol.get(sz, sy, sx) as f64 - mean) as f32
        } else {
            0.0
        }
    })?;
    let spec = fft3(&padded)?;
    let freq = |k: usize, n: usize| {
        let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
        k / n as f64
    };
    let (mut total, mut centroid, mut bands) = (0.0, 0.0, [0.0; 3]);
    for (i, pw) in spec.power().enumerate() {
        let [z, y, x] = crate::volume::unravel(pd, i);
        let (fz, fy, fx) = (freq(z, pd[0]), freq(y, pd[1]), freq(x, pd[2]));
        let r = (fz * fz + fy * fy + fx * fx).sqrt() / 0.5;
        total += pw;
        centroid += r * pw;
        let b = if r < 1.0 / 3.0 {
            0
        } else if r < 2.0 / 3.0 {
            1
        } else {
            2
        };
        bands[b] += pw;
    }
    if total <= 0.0 {
        return Ok([0.0; 4]);
    }
    Ok([centroid / total, bands[0] / total, bands[1] / total, bands[2] / total])
}

/// Mean, variance, skewness and kurtosis of the 64-bin intensity histogram,
/// with bins represented by their centres.
pub fn histogram_moments(sorted: &[f64]) -> [f64; 4] {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let h = histogram(sorted, MOMENT_BINS);
    let w = (hi - lo) / MOMENT_BINS as f64;
    let n = sorted.len() as f64;
    let centre = |b: usize| lo + (b as f64 + 0.5) * w;
    let mean: f64 = h.iter().enumerate().map(|(b, &c)| centre(b) * c as f64 / n).sum();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (b, &c) in h.iter().enumerate() {
        let d = centre(b) - mean;
        let p = c as f64 / n;
        m2 += p * d * d;
        m3 += p * d * d * d;
        m4 += p * d * d * d * d;
    }
    if m2 > 0.0 {
        [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
    } else {
        [mean, 0.0, 0.0, 0.0]
    }
}

/// Box counts `N(s)` for boxes aligned to the region's bounding box.
pub fn box_counts(roi: &BinaryMask) -> Vec<(usize, u64)> {
    let Some(bbox) = roi.bounding_box() else {
        return BOX_SIZES.iter().map(|&s| (s, 0)).collect();
    };
    BOX_SIZES
        .iter()
        .map(|&s| {
            let bd = bbox.dims().map(|d| d.div_ceil(s));
            let mut hit = vec![false; bd.iter().product()];
            for p in roi.coords() {
                let b = [0, 1, 2].map(|a| (p[a] - bbox.lo[a]) / s);
                hit[(b[0] * bd[1] + b[1]) * bd[2] + b[2]] = true;
            }
            (s, hit.iter().filter(|&&h| h).count() as u64)
        })
        .collect()
}

/// Least-squares slope of `log N(s)` against `log(1/s)`, clamped to `[0, 3]`.
pub fn fractal_dimension(roi: &BinaryMask) -> f64 {
    let pts: Vec<(f64, f64)> = box_counts(roi)
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(s, n)| (-(s as f64).log2(), (n as f64).log2()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).clamp(0.0, 3.0)
}

pub fn extras_features(vol: &Volume3D, roi: &BinaryMask) -> Result<FeatureVector, RadiomicsError> {
    let vals = roi_values(vol, roi)?;
    let mut values = hog3d(vol, roi);
    values.extend(spectral_stats(vol, roi)?);
    values.extend(histogram_moments(&vals));
    values.push(fractal_dimension(roi));
    let mut fv = FeatureVector::default();
    for (name, v) in extras_names().iter().zip(values) {
        let family = if name.starts_with("hog") {
            FeatureFamily::Hog
        } else if name.starts_with("fft") {
            FeatureFamily::Spectral
        } else if name.starts_with("hist") {
            FeatureFamily::HistogramMoments
        } else {
            FeatureFamily::Fractal
        };
        fv.push(name, family, v);
    }
    Ok(fv)
}
