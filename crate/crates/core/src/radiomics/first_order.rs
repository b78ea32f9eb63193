use super::{roi_values, FeatureFamily, FeatureVector, RadiomicsError};
use crate::volume::{percentile_of_sorted, BinaryMask, Volume3D};

pub const FIRST_ORDER_NAMES: [&str; 13] = [
    "fo_mean",
    "fo_variance",
    "fo_skewness",
    "fo_kurtosis",
    "fo_energy",
    "fo_entropy",
    "fo_minimum",
    "fo_maximum",
    "fo_median",
    "fo_p10",
    "fo_p90",
    "fo_rms",
    "fo_iqr",
];

pub const ENTROPY_BINS: usize = 32;

/// Population moments of sorted values: `(mean, m2, skewness, kurtosis)`.
/// Kurtosis is not excess; both shape moments are 0 when `m2 == 0`.
pub(crate) fn moments(sorted: &[f64]) -> (f64, f64, f64, f64) {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in sorted {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 > 0.0 {
        (mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (mean, 0.0, 0.0, 0.0)
    }
}

/// Histogram of sorted values over `[min, max]`; a constant input lands in
/// the first bin.
pub(crate) fn histogram(sorted: &[f64], bins: usize) -> Vec<u64> {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut h = vec![0u64; bins];
    let w = hi - lo;
    for &v in sorted {
        let b = if w > 0.0 { (((v - lo) / w) * bins as f64) as usize } else { 0 };
        h[b.min(bins - 1)] += 1;
    }
    h
}

pub fn first_order(vol: &Volume3D, roi: &BinaryMask) -> Result<FeatureVector, RadiomicsError> {
    let v = roi_values(vol, roi)?;
    Ok(first_order_sorted(&v))
}

pub(crate) fn first_order_sorted(v: &[f64]) -> FeatureVector {
    let n = v.len() as f64;
    let (mean, var, skew, kurt) = moments(v);
    let energy: f64 = v.iter().map(|x| x * x).sum();
    let entropy = histogram(v, ENTROPY_BINS)
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    let pct = |p| percentile_of_sorted(v, p).expect("non-empty");
    let vals = [
        mean,
        var,
        skew,
        kurt,
        energy,
        entropy,
        v[0],
        v[v.len() - 1],
        pct(50.0),
        pct(10.0),
        pct(90.0),
        (energy / n).sqrt(),
        pct(75.0) - pct(25.0),
    ];
    let mut fv = FeatureVector::default();
    for (name, val) in FIRST_ORDER_NAMES.iter().zip(vals) {
        fv.push(name, FeatureFamily::FirstOrder, val);
    }
    fv
}
