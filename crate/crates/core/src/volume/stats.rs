use super::{finite_min_max, BinaryMask, Result, Volume3D, VolumeError};

const OTSU_BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram of the finite voxels.
///
/// The returned value is the upper edge of the last bin assigned to the low
/// class, so `v > t` selects exactly the high class (up to values sitting on
/// the edge itself).
pub fn otsu_threshold(vol: &Volume3D) -> Result<f64> {
    let (lo, hi) = finite_min_max(vol.data().iter().copied()).ok_or(VolumeError::EmptyRegion)?;
    if lo == hi {
        return Err(VolumeError::DegenerateHistogram);
    }
    let (lo, hi) = (lo as f64, hi as f64);
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0u64; OTSU_BINS];
    for &v in vol.data().iter().filter(|v| v.is_finite()) {
        let b = (((v as f64 - lo) / width) as usize).min(OTSU_BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    let centre = |b: usize| lo + (b as f64 + 0.5) * width;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| c as f64 * centre(b)).sum();

    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for (k, &count) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += count;
        sum0 += count as f64 * centre(k);
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = (w0 as f64) * (w1 as f64) * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    Ok(lo + (best.1 + 1) as f64 * width)
}

/// Linear-interpolation percentile of an ascending slice, `p` in `[0, 100]`.
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let p = p.clamp(0.0, 100.0);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let i = rank.floor() as usize;
    let frac = rank - i as f64;
    if i + 1 >= sorted.len() || frac == 0.0 {
        return Some(sorted[i.min(sorted.len() - 1)]);
    }
    Some(sorted[i] + (sorted[i + 1] - sorted[i]) * frac)
}

/// Percentile of the finite voxels of `vol` inside `region`.
pub fn percentile(vol: &Volume3D, region: &BinaryMask, p: f64) -> Result<f64> {
    vol.same_grid(region.dims())?;
    let mut vals: Vec<f64> = vol
        .data()
        .iter()
        .zip(region.data())
        .filter(|(v, &m)| m && v.is_finite())
        .map(|(&v, _)| v as f64)
        .collect();
    vals.sort_by(f64::total_cmp);
    percentile_of_sorted(&vals, p).ok_or(VolumeError::EmptyRegion)
}
