//! Handcrafted features inside the tumor region.
//!
//! The driver [`extract_features`] resamples to 2 mm, rescales intensities
//! to 0..255 and discretizes with a fixed bin width before computing the
//! texture families. Extras (HOG3D, spectral, histogram moments, fractal
//! dimension) use the same resampled, rescaled copy.

mod extras;
mod first_order;
mod shape;
mod texture;

pub use extras::{
    box_counts, extras_features, extras_names, fractal_dimension, histogram_moments, hog3d,
    spectral_stats, BOX_SIZES, HOG_BINS, MOMENT_BINS,
};
pub use first_order::{first_order, ENTROPY_BINS, FIRST_ORDER_NAMES};
pub use shape::{shape_features, SHAPE_NAMES};
pub use texture::{
    gldm_features, gldm_matrix, glcm_features, glcm_matrix, glrlm_features, glrlm_matrix,
    glszm_features, glszm_matrix, ngtdm_features, ngtdm_table, CountMatrix, Ngtdm,
    COARSENESS_CAP, DIRECTIONS, GLCM_NAMES, GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, NGTDM_NAMES,
};

use crate::exec::Exec;
use crate::volume::{resample, BinaryMask, Dims, Interpolation, Spacing, Volume3D, VolumeError};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadiomicsError {
    #[error("region of interest is empty")]
    EmptyRegion,
    #[error("non-finite intensity inside the region")]
    NonFinite,
    #[error("feature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least two training vectors, got {0}")]
    TooFewSamples(usize),
    #[error("invalid bin width {0}")]
    InvalidBinWidth(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("feature csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature csv: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RadiomicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    FirstOrder,
    Shape,
    Glcm,
    Glrlm,
    Glszm,
    Gldm,
    Ngtdm,
    Hog,
    Spectral,
    HistogramMoments,
    Fractal,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub family: FeatureFamily,
    pub value: f64,
}

/// Ordered named features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub features: Vec<Feature>,
}

impl FeatureVector {
    pub fn push(&mut self, name: &str, family: FeatureFamily, value: f64) {
        debug_assert!(self.get(name).is_none(), "duplicate feature {name}");
        self.features.push(Feature { name: name.to_string(), family, value });
    }

    pub fn extend(&mut self, other: FeatureVector) {
        for f in other.features {
            self.push(&f.name, f.family, f.value);
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.value)
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.value).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|f| f.value.is_finite())
    }
}

/// Mean of values summed in sorted order, independent of input order.
pub(crate) fn exact_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sorted region intensities.
pub(crate) fn roi_values(vol: &Volume3D, roi: &BinaryMask) -> Result<Vec<f64>> {
    vol.same_grid(roi.dims())?;
    let mut v = Vec::with_capacity(roi.count());
    for (&x, &r) in vol.data().iter().zip(roi.data()) {
        if r {
            if !x.is_finite() {
                return Err(RadiomicsError::NonFinite);
            }
            v.push(x as f64);
        }
    }
    if v.is_empty() {
        return Err(RadiomicsError::EmptyRegion);
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Gray levels `1..=n_g` inside the region, 0 outside.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedRoi {
    dims: Dims,
    spacing: Spacing,
    levels: Vec<u32>,
    pub n_g: u32,
    count: usize,
}

impl DiscretizedRoi {
    pub fn from_levels(dims: Dims, spacing: Spacing, levels: Vec<u32>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if levels.len() != want {
            return Err(VolumeError::ShapeMismatch { dims, actual: levels.len() }.into());
        }
        let count = levels.iter().filter(|&&l| l > 0).count();
        if count == 0 {
            return Err(RadiomicsError::EmptyRegion);
        }
        let n_g = *levels.iter().max().unwrap();
        Ok(Self { dims, spacing, levels, n_g, count })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn voxel_count(&self) -> usize {
        self.count
    }

    pub fn roi(&self) -> BinaryMask {
        BinaryMask::new(self.dims, self.spacing, self.levels.iter().map(|&l| l > 0).collect())
            .expect("dims checked at construction")
    }
}

/// Fixed-bin-width quantization: `floor((x - min_roi) / bin_width) + 1`.
pub fn discretize(vol: &Volume3D, roi: &BinaryMask, bin_width: f64) -> Result<DiscretizedRoi> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(RadiomicsError::InvalidBinWidth(bin_width));
    }
    let vals = roi_values(vol, roi)?;
    let lo = vals[0];
    let levels = vol
        .data()
        .iter()
        .zip(roi.data())
        .map(|(&x, &r)| if r { ((x as f64 - lo) / bin_width).floor() as u32 + 1 } else { 0 })
        .collect();
    DiscretizedRoi::from_levels(vol.dims(), vol.spacing(), levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsParams {
    pub bin_width: f64,
    pub resample_mm: [f64; 3],
    /// Input intensities in `[0, 1]` are multiplied by this before
    /// discretization.
    pub intensity_scale: f64,
}

impl Default for RadiomicsParams {
    fn default() -> Self {
        Self { bin_width: 5.0, resample_mm: [2.0; 3], intensity_scale: 255.0 }
    }
}

/// Grid with spacing close to `target_mm`: `round(N * spacing / target)`
/// voxels per axis.
pub fn target_dims(dims: Dims, spacing: Spacing, target_mm: [f64; 3]) -> Dims {
    [0, 1, 2].map(|a| ((dims[a] as f64 * spacing[a] / target_mm[a]).round() as usize).max(1))
}

/// Resamples volume (trilinear) and mask (nearest) to the feature grid,
/// crops to the region's bounding box plus one voxel and rescales the
/// intensities. Already-matching grids are not resampled.
pub fn prepare_roi(vol: &Volume3D, roi: &BinaryMask, params: &RadiomicsParams) -> Result<(Volume3D, BinaryMask)> {
    vol.same_grid(roi.dims())?;
    let target = target_dims(vol.dims(), vol.spacing(), params.resample_mm);
    let (v, m) = if target == vol.dims() {
        (vol.clone(), roi.clone())
    } else {
        let v = resample(vol, target, Interpolation::Trilinear)?;
        let m = resample(&roi.to_volume(), target, Interpolation::Nearest)?;
        let m = BinaryMask::from_volume(&m, |x| x > 0.5);
        (v, m)
    };
    let bbox = m.bounding_box().ok_or(RadiomicsError::EmptyRegion)?.padded(1, m.dims());
    let scale = params.intensity_scale;
    let v = v.crop(&bbox).map(|x| (x as f64 * scale) as f32);
    Ok((v, m.crop(&bbox)))
}

/// The radiomic block (first-order, shape, five texture families) and the
/// extras block for one region.
pub fn extract_features(
    vol: &Volume3D,
    roi: &BinaryMask,
    params: &RadiomicsParams,
) -> Result<(FeatureVector, FeatureVector)> {
    let (v, m) = prepare_roi(vol, roi, params)?;
    let d = discretize(&v, &m, params.bin_width)?;
    let mut rad = first_order(&v, &m)?;
    rad.extend(shape_features(&m)?);
    rad.extend(glcm_features(&d));
    rad.extend(glrlm_features(&d));
    rad.extend(glszm_features(&d));
    rad.extend(gldm_features(&d));
    rad.extend(ngtdm_features(&d));
    let extras = extras_features(&v, &m)?;
    debug_assert!(rad.is_finite() && extras.is_finite());
    Ok((rad, extras))
}

/// Runs [`extract_features`] over many subjects; results keep input order.
pub fn extract_batch(
    items: &[(&Volume3D, &BinaryMask)],
    params: &RadiomicsParams,
    exec: Exec,
) -> Vec<Result<(FeatureVector, FeatureVector)>> {
    exec.map(items.len(), |i| extract_features(items[i].0, items[i].1, params))
}

pub fn radiomic_names() -> Vec<String> {
    FIRST_ORDER_NAMES
        .iter()
        .chain(&SHAPE_NAMES)
        .chain(&GLCM_NAMES)
        .chain(&GLRLM_NAMES)
        .chain(&GLSZM_NAMES)
        .chain(&GLDM_NAMES)
        .chain(&NGTDM_NAMES)
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-feature training mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandardizationStats {
    pub stats: IndexMap<String, FeatureStat>,
}

pub const MIN_STD: f64 = 1e-12;

impl StandardizationStats {
    pub fn fit(train: &[FeatureVector]) -> Result<Self> {
        if train.len() < 2 {
            return Err(RadiomicsError::TooFewSamples(train.len()));
        }
        let names = train[0].names();
        for fv in &train[1..] {
            if fv.names() != names {
                return Err(RadiomicsError::DimensionMismatch("training vectors disagree on feature names".into()));
            }
        }
        let n = train.len() as f64;
        let mut stats = IndexMap::new();
        for (k, name) in names.iter().enumerate() {
            let col: Vec<f64> = train.iter().map(|fv| fv.features[k].value).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let std = if std < MIN_STD { 1.0 } else { std };
            stats.insert(name.to_string(), FeatureStat { mean, std });
        }
        Ok(Self { stats })
    }

    pub fn apply(&self, fv: &FeatureVector) -> Result<FeatureVector> {
        if fv.len() != self.stats.len() {
            return Err(RadiomicsError::DimensionMismatch(format!(
                "expected {} features, got {}",
                self.stats.len(),
                fv.len()
            )));
        }
        let mut out = FeatureVector::default();
        for (f, (name, st)) in fv.features.iter().zip(&self.stats) {
            if &f.name != name {
                return Err(RadiomicsError::DimensionMismatch(format!("unexpected feature {}", f.name)));
            }
            out.push(name, f.family, (f.value - st.mean) / st.std);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Formats with 9 significant digits and the shortest round-trip text.
pub fn format_value(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float text");
    format!("{rounded}")
}

/// One row per subject: `subject_id,<feature names...>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn push(&mut self, subject_id: &str, fv: &FeatureVector) -> Result<()> {
        let names = fv.names();
        if self.rows.is_empty() && self.names.is_empty() {
            self.names = names.iter().map(|s| s.to_string()).collect();
        } else if names != self.names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(RadiomicsError::DimensionMismatch(format!("subject {subject_id} has a different feature set")));
        }
        self.rows.push((subject_id.to_string(), fv.values()));
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("subject_id").chain(self.names.iter().map(String::as_str)))?;
        for (id, vals) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(vals.iter().map(|&v| format_value(v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| RadiomicsError::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("subject_id") {
            return Err(RadiomicsError::Parse("first column must be subject_id".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| RadiomicsError::Parse(format!("{id}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != names.len() {
                return Err(RadiomicsError::DimensionMismatch(format!("row {id} has {} values", vals.len())));
            }
            rows.push((id, vals));
        }
        Ok(Self { names, rows })
    }

    pub fn vector(&self, row: usize) -> FeatureVector {
        let mut fv = FeatureVector::default();
        for (n, &v) in self.names.iter().zip(&self.rows[row].1) {
            fv.push(n, family_of(n), v);
        }
        fv
    }
}

/// Family implied by a feature-name prefix.
pub fn family_of(name: &str) -> FeatureFamily {
    let prefix = name.split('_').next().unwrap_or_default();
    match prefix {
        "fo" => FeatureFamily::FirstOrder,
        "shape" => FeatureFamily::Shape,
        "glcm" => FeatureFamily::Glcm,
        "glrlm" => FeatureFamily::Glrlm,
        "glszm" => FeatureFamily::Glszm,
        "gldm" => FeatureFamily::Gldm,
        "ngtdm" => FeatureFamily::Ngtdm,
        "hog" => FeatureFamily::Hog,
        "fft" => FeatureFamily::Spectral,
        "hist" => FeatureFamily::HistogramMoments,
        "fractal" => FeatureFamily::Fractal,
        _ => FeatureFamily::Cnn,
    }
}
