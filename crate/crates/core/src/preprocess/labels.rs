//! Tumor label volumes and their region maps.

use super::PreprocessError;
use crate::volume::{gaussian_smooth_vox, BinaryMask, Dims, Spacing, Volume3D};

/// Allowed tumor label codes: background, necrotic core, edema, enhancing.
pub const LABEL_VALUES: [u8; 4] = [0, 1, 2, 4];

/// Integer tumor labels `S` with values in `{0, 1, 2, 4}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if let Some(&bad) = data.iter().find(|v| !LABEL_VALUES.contains(v)) {
            return Err(PreprocessError::InvalidLabelValue(bad as f32));
        }
        // reuse the grid checks of BinaryMask
        BinaryMask::new(dims, spacing, vec![false; data.len()])?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Converts a float volume (as read from NIfTI) into labels.
    pub fn from_volume(vol: &Volume3D) -> Result<Self, PreprocessError> {
        let data = vol
            .data()
            .iter()
            .map(|&v| {
                let r = v.round();
                if r == v && r >= 0.0 && r <= 4.0 && LABEL_VALUES.contains(&(r as u8)) {
                    Ok(r as u8)
                } else {
                    Err(PreprocessError::InvalidLabelValue(v))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dims: vol.dims(),
            spacing: vol.spacing(),
            data,
        })
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D::new(
            self.dims,
            self.spacing,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("valid grid")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn mask_where<F: Fn(u8) -> bool>(&self, f: F) -> BinaryMask {
        BinaryMask::new(
            self.dims,
            self.spacing,
            self.data.iter().map(|&v| f(v)).collect(),
        )
        .expect("valid grid")
    }

    /// `R = 1{S > 0}`.
    pub fn tumor_mask(&self) -> BinaryMask {
        self.mask_where(|v| v > 0)
    }

    pub fn crop(&self, bbox: &crate::volume::BoundingBox) -> Self {
        let vol = self.to_volume().crop(bbox);
        Self::from_volume(&vol).expect("labels stay valid")
    }
}

/// Nested region maps derived from `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLabels {
    pub et: BinaryMask,
    pub tc: BinaryMask,
    pub wt: BinaryMask,
    pub bg: BinaryMask,
}

/// `ET = 1{S=4}`, `TC = 1{S in {1,4}}`, `WT = 1{S in {1,2,4}}`, `BG = 1{S=0}`.
pub fn canonicalize_labels(s: &LabelVolume) -> CanonicalLabels {
    CanonicalLabels {
        et: s.mask_where(|v| v == 4),
        tc: s.mask_where(|v| v == 1 || v == 4),
        wt: s.mask_where(|v| v == 1 || v == 2 || v == 4),
        bg: s.mask_where(|v| v == 0),
    }
}

/// Soft tumor-region channels on the label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaps {
    pub et: Volume3D,
    pub tc: Volume3D,
    pub wt: Volume3D,
}

/// Region channels from per-voxel class probabilities for classes
/// `0..=3` (background, necrotic core, edema, enhancing):
/// `ET = P3`, `TC = P1 + P3`, `WT = 1 - P0`.
pub fn probability_channels(probs: &[Volume3D; 4]) -> Result<SoftMaps, PreprocessError> {
    let dims = probs[0].dims();
    for p in &probs[1..] {
        p.same_grid(dims)?;
    }
    let n = probs[0].len();
    let mut et = Vec::with_capacity(n);
    let mut tc = Vec::with_capacity(n);
    let mut wt = Vec::with_capacity(n);
    for i in 0..n {
        let p: [f64; 4] = std::array::from_fn(|c| probs[c].data()[i] as f64);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-4 || p.iter().any(|&v| v < -1e-6) {
            return Err(PreprocessError::NotNormalized { voxel: i, sum });
        }
        let e = p[3].clamp(0.0, 1.0);
        let t = (p[1] + p[3]).clamp(e, 1.0);
        let w = (1.0 - p[0]).clamp(t, 1.0);
        et.push(e as f32);
        tc.push(t as f32);
        wt.push(w as f32);
    }
    let sp = probs[0].spacing();
    Ok(SoftMaps {
        et: Volume3D::new(dims, sp, et)?,
        tc: Volume3D::new(dims, sp, tc)?,
        wt: Volume3D::new(dims, sp, wt)?,
    })
}

/// Gaussian-smoothed nested probability maps from hard region masks.
/// Nesting `P_ET <= P_TC <= P_WT` is enforced after smoothing.
pub fn synthesize_soft_maps(labels: &CanonicalLabels, sigma_vox: f64) -> SoftMaps {
    let smooth = |m: &BinaryMask| gaussian_smooth_vox(&m.to_volume(), sigma_vox).map(|v| v.clamp(0.0, 1.0));
    let et = smooth(&labels.et);
    let mut tc = smooth(&labels.tc);
    let mut wt = smooth(&labels.wt);
    for (t, &e) in tc.data_mut().iter_mut().zip(et.data()) {
        *t = t.max(e);
    }
    for (w, &t) in wt.data_mut().iter_mut().zip(tc.data()) {
        *w = w.max(t);
    }
    SoftMaps { et, tc, wt }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(vals: &[f32]) -> Volume3D {
        Volume3D::new([1, 1, vals.len()], [1.0; 3], vals.to_vec()).unwrap()
    }

    #[test]
    fn canonical_maps_per_label() {
        let s = LabelVolume::new([1, 1, 4], [1.0; 3], vec![4, 2, 0, 1]).unwrap();
        let c = canonicalize_labels(&s);
        assert_eq!(c.et.data(), &[true, false, false, false]);
        assert_eq!(c.tc.data(), &[true, false, false, true]);
        assert_eq!(c.wt.data(), &[true, true, false, true]);
        assert_eq!(c.bg.data(), &[false, false, true, false]);
    }

    #[test]
    fn invalid_label_rejected() {
        assert!(matches!(
            LabelVolume::new([1, 1, 2], [1.0; 3], vec![0, 3]),
            Err(PreprocessError::InvalidLabelValue(v)) if v == 3.0
        ));
        assert!(LabelVolume::from_volume(&vol(&[0.0, 1.5])).is_err());
        assert!(LabelVolume::from_volume(&vol(&[0.0, 4.0, 2.0])).is_ok());
    }

    #[test]
    fn channel_formulas() {
        let probs = [vol(&[0.1, 1.0, 0.0]), vol(&[0.2, 0.0, 0.0]), vol(&[0.3, 0.0, 0.0]), vol(&[0.4, 0.0, 1.0])];
        let m = probability_channels(&probs).unwrap();
        assert!((m.et.data()[0] - 0.4).abs() < 1e-6);
        assert!((m.tc.data()[0] - 0.6).abs() < 1e-6);
        assert!((m.wt.data()[0] - 0.9).abs() < 1e-6);
        assert_eq!([m.et.data()[1], m.tc.data()[1], m.wt.data()[1]], [0.0; 3]);
        assert_eq!([m.et.data()[2], m.tc.data()[2], m.wt.data()[2]], [1.0; 3]);
    }

    #[test]
    fn unnormalized_probabilities_rejected() {
        let probs = [vol(&[0.5]), vol(&[0.5]), vol(&[0.5]), vol(&[0.0])];
        assert!(matches!(
            probability_channels(&probs),
            Err(PreprocessError::NotNormalized { .. })
        ));
    }

    #[test]
    fn soft_maps_nest_and_saturate() {
        let s = LabelVolume::new(
            [21, 21, 21],
            [1.0; 3],
            (0..21 * 21 * 21)
                .map(|i| {
                    let p = crate::volume::unravel([21, 21, 21], i);
                    let r2: usize = p.iter().map(|&c| (c as isize - 10).pow(2) as usize).sum();
                    match r2 {
                        0..=4 => 4,
                        5..=16 => 1,
                        17..=64 => 2,
                        _ => 0,
                    }
                })
                .collect(),
        )
        .unwrap();
        let soft = synthesize_soft_maps(&canonicalize_labels(&s), 2.0);
        for i in 0..s.data().len() {
            let (e, t, w) = (soft.et.data()[i], soft.tc.data()[i], soft.wt.data()[i]);
            assert!(e <= t && t <= w);
        }
        // centre is well inside WT; shell at radius 10 is 2 voxels past WT
        assert!(soft.wt.get(10, 10, 10) > 1.0 - 1e-3);
        assert!(soft.wt.get(0, 0, 0) < 1e-3);
    }
}
