//! Size-safe preprocessing of a subject's four MRI modalities and tumor
//! labels.
//!
//! Stage order per subject: bias correction, brain extraction and masking,
//! ROI crop around the tumor, ROI-restricted intensity standardization, grid
//! harmonization and label canonicalization.

mod bias;
mod clahe;
mod labels;

pub use bias::{correct_bias, correct_bias_with, estimate_log_field, BiasParams};
pub use clahe::{clahe_slice, ClaheParams};
pub use labels::{
    canonicalize_labels, probability_channels, synthesize_soft_maps, CanonicalLabels,
    LabelVolume, SoftMaps, LABEL_VALUES,
};

use crate::volume::{
    fill_holes_and_close, otsu_threshold, percentile_of_sorted, resample, BinaryMask,
    BoundingBox, Dims, Interpolation, Volume3D, VolumeError,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("brain mask is empty")]
    EmptyBrainMask,
    #[error("no positive intensity inside the brain mask")]
    NoPositiveIntensity,
    #[error("no tumor voxels (S > 0)")]
    EmptyTumor,
    #[error("standardization region is empty")]
    EmptyRegion,
    #[error("invalid label value {0}")]
    InvalidLabelValue(f32),
    #[error("class probabilities at voxel {voxel} sum to {sum}")]
    NotNormalized { voxel: usize, sum: f64 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Flair,
    T1,
    T1ce,
    T2,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Flair, Modality::T1, Modality::T1ce, Modality::T2];

    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::Flair => "flair",
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
        }
    }
}

/// Four co-registered modalities plus tumor labels for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBundle {
    pub subject_id: String,
    pub flair: Volume3D,
    pub t1: Volume3D,
    pub t1ce: Volume3D,
    pub t2: Volume3D,
    pub labels: LabelVolume,
}

impl SubjectBundle {
    pub fn modality(&self, m: Modality) -> &Volume3D {
        match m {
            Modality::Flair => &self.flair,
            Modality::T1 => &self.t1,
            Modality::T1ce => &self.t1ce,
            Modality::T2 => &self.t2,
        }
    }

    fn map_modalities<F>(&self, f: F) -> Result<[Volume3D; 4]>
    where
        F: Fn(&Volume3D) -> Result<Volume3D>,
    {
        Ok([f(&self.flair)?, f(&self.t1)?, f(&self.t1ce)?, f(&self.t2)?])
    }

    fn with_modalities(&self, [flair, t1, t1ce, t2]: [Volume3D; 4], labels: LabelVolume) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            flair,
            t1,
            t1ce,
            t2,
            labels,
        }
    }

    /// Checks that every modality and the labels share dims and spacing.
    pub fn validate(&self) -> Result<()> {
        let dims = self.labels.dims();
        let sp = self.labels.spacing();
        for m in Modality::ALL {
            let v = self.modality(m);
            v.same_grid(dims)?;
            if v.spacing().iter().zip(&sp).any(|(a, b)| (a - b).abs() > 1e-6 * b.abs().max(1.0)) {
                return Err(VolumeError::GridMismatch(v.dims(), dims).into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    /// ROI padding per side, voxels.
    pub pad: usize,
    pub grid: Dims,
    pub clip_low: f64,
    pub clip_high: f64,
    /// Below this many tumor voxels statistics use all finite voxels.
    pub n_min: usize,
    pub clahe: ClaheParams,
    pub bias: BiasParams,
    /// Smoothing of the synthesized soft region maps, voxels.
    pub soft_sigma_vox: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            pad: 12,
            grid: [160, 160, 160],
            clip_low: 1.0,
            clip_high: 99.0,
            n_min: 64,
            clahe: ClaheParams::default(),
            bias: BiasParams::default(),
            soft_sigma_vox: 2.0,
        }
    }
}

/// `M_brain`: Otsu foreground with holes filled and one closing.
pub fn extract_brain(vol: &Volume3D) -> Result<BinaryMask> {
    let t = otsu_threshold(vol)?;
    let fg = BinaryMask::from_volume(vol, |v| v as f64 > t);
    Ok(fill_holes_and_close(&fg))
}

/// Bounding box of `S > 0`, padded by `pad` voxels per side and clamped.
pub fn roi_box(labels: &LabelVolume, pad: usize) -> Result<BoundingBox> {
    let b = labels
        .tumor_mask()
        .bounding_box()
        .ok_or(PreprocessError::EmptyTumor)?;
    Ok(b.padded(pad, labels.dims()))
}

/// The effective standardization region: the tumor when it has at least
/// `n_min` voxels, otherwise every finite voxel.
pub fn effective_roi(vol: &Volume3D, roi: &BinaryMask, n_min: usize) -> Result<BinaryMask> {
    vol.same_grid(roi.dims())?;
    let use_roi = roi.count() >= n_min;
    let data = vol
        .data()
        .iter()
        .zip(roi.data())
        .map(|(v, &r)| v.is_finite() && (!use_roi || r))
        .collect();
    Ok(BinaryMask::new(vol.dims(), vol.spacing(), data)?)
}

/// Percentile clipping, min-max scaling to `[0, 1]`, then slice-wise CLAHE,
/// all computed over the effective ROI.
pub fn standardize_intensity(
    vol: &Volume3D,
    roi: &BinaryMask,
    params: &PreprocessParams,
) -> Result<Volume3D> {
    let region = effective_roi(vol, roi, params.n_min)?;
    let mut vals: Vec<f64> = vol
        .data()
        .iter()
        .zip(region.data())
        .filter(|(_, &r)| r)
        .map(|(&v, _)| v as f64)
        .collect();
    if vals.is_empty() {
        return Err(PreprocessError::EmptyRegion);
    }
    vals.sort_by(f64::total_cmp);
    let p_lo = percentile_of_sorted(&vals, params.clip_low).expect("non-empty");
    let p_hi = percentile_of_sorted(&vals, params.clip_high).expect("non-empty");
    let scale = (p_hi - p_lo).max(1e-8);
    let mut out = vol.map(|v| {
        if !v.is_finite() {
            return 0.0;
        }
        let c = (v as f64).clamp(p_lo, p_hi);
        ((c - p_lo) / scale).clamp(0.0, 1.0) as f32
    });
    let [d, h, w] = out.dims();
    let plane = h * w;
    let reg = region.data();
    for z in 0..d {
        let range = z * plane..(z + 1) * plane;
        clahe::clahe_slice(&mut out.data_mut()[range.clone()], &reg[range], h, w, &params.clahe);
    }
    Ok(out)
}

/// Resamples modalities (trilinear) and labels (nearest) onto `grid`.
pub fn harmonize_grid(bundle: &SubjectBundle, grid: Dims) -> Result<SubjectBundle> {
    let mods = bundle.map_modalities(|v| Ok(resample(v, grid, Interpolation::Trilinear)?))?;
    let lab = resample(&bundle.labels.to_volume(), grid, Interpolation::Nearest)?;
    Ok(bundle.with_modalities(mods, LabelVolume::from_volume(&lab)?))
}

/// Output of [`preprocess_subject`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSubject {
    pub bundle: SubjectBundle,
    pub soft: SoftMaps,
    /// ROI box on the native grid.
    pub roi: BoundingBox,
    pub brain_voxels: usize,
}

/// Runs the full preprocessing chain on a native-grid subject.
pub fn preprocess_subject(raw: &SubjectBundle, params: &PreprocessParams) -> Result<PreprocessedSubject> {
    raw.validate()?;
    let mut brain = extract_brain(&raw.flair)?;
    for m in [Modality::T1, Modality::T1ce, Modality::T2] {
        brain = brain.union(&extract_brain(raw.modality(m))?)?;
    }
    let corrected = raw.map_modalities(|v| Ok(correct_bias_with(v, &brain, &params.bias)?.masked(&brain)?))?;
    let bbox = roi_box(&raw.labels, params.pad)?;
    let labels = raw.labels.crop(&bbox);
    let roi = labels.tumor_mask();
    let cropped = raw.with_modalities(corrected, raw.labels.clone());
    let standardized = cropped.map_modalities(|v| standardize_intensity(&v.crop(&bbox), &roi, params))?;
    let cropped = raw.with_modalities(standardized, labels);
    let bundle = harmonize_grid(&cropped, params.grid)?;
    let soft = synthesize_soft_maps(&canonicalize_labels(&bundle.labels), params.soft_sigma_vox);
    Ok(PreprocessedSubject {
        bundle,
        soft,
        roi: bbox,
        brain_voxels: brain.count(),
    })
}

/// Classifier input channels in the fixed order
/// `[T1, T1CE, T2, FLAIR, WT, P(ET), P(TC), P(WT)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EightChannelInput {
    pub channels: [Volume3D; 8],
}

impl EightChannelInput {
    pub const NAMES: [&'static str; 8] = ["t1", "t1ce", "t2", "flair", "wt", "p_et", "p_tc", "p_wt"];
}

pub fn assemble_eight_channel(bundle: &SubjectBundle, soft: &SoftMaps) -> Result<EightChannelInput> {
    bundle.validate()?;
    let dims = bundle.labels.dims();
    for s in [&soft.et, &soft.tc, &soft.wt] {
        s.same_grid(dims)?;
    }
    let wt = canonicalize_labels(&bundle.labels).wt.to_volume();
    Ok(EightChannelInput {
        channels: [
            bundle.t1.clone(),
            bundle.t1ce.clone(),
            bundle.t2.clone(),
            bundle.flair.clone(),
            wt,
            soft.et.clone(),
            soft.tc.clone(),
            soft.wt.clone(),
        ],
    })
}
