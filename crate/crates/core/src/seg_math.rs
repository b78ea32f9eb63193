//! Segmentation objective and evaluation: cross-entropy, soft Dice, the
//! morphological boundary regularizer with its cosine ramp, the head
//! ensemble loss, Dice and HD95.
//!
//! Class channels are ordered `[BG, ET, TC_only, WT_only]`.

use crate::preprocess::{canonicalize_labels, LabelVolume};
use crate::volume::{
    dilate, erode, offset, percentile_of_sorted, squared_distance_transform, surface_voxels,
    unravel, BinaryMask, Dims, Spacing, VolumeError, FACE_OFFSETS,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 4;
pub const DICE_EPS: f64 = 1e-6;
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SegError {
    #[error("tensor has {actual} voxels, grid {dims:?} needs {expected}")]
    ShapeMismatch { dims: Dims, expected: usize, actual: usize },
    #[error("class index {0} out of range")]
    InvalidClass(u8),
    #[error("probabilities at voxel {voxel} sum to {sum}")]
    NotNormalized { voxel: usize, sum: f64 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, SegError>;

fn check_len(dims: Dims, len: usize) -> Result<()> {
    let expected: usize = dims.iter().product();
    if len != expected {
        return Err(SegError::ShapeMismatch { dims, expected, actual: len });
    }
    Ok(())
}

/// Per-class voxel values on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTensor {
    dims: Dims,
    channels: [Vec<f64>; NUM_CLASSES],
}

impl ClassTensor {
    pub fn new(dims: Dims, channels: [Vec<f64>; NUM_CLASSES]) -> Result<Self> {
        for c in &channels {
            check_len(dims, c.len())?;
        }
        Ok(Self { dims, channels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.channels[c][i]
    }
}

/// Pre-softmax network outputs.
pub type Logits = ClassTensor;

/// Per-voxel class probabilities on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTensor(ClassTensor);

impl ProbTensor {
    pub fn new(t: ClassTensor) -> Result<Self> {
        for i in 0..t.len() {
            let sum: f64 = (0..NUM_CLASSES).map(|c| t.at(c, i)).sum();
            if (sum - 1.0).abs() > 1e-4 || (0..NUM_CLASSES).any(|c| t.at(c, i) < 0.0) {
                return Err(SegError::NotNormalized { voxel: i, sum });
            }
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &ClassTensor {
        &self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.0.at(c, i)
    }

    /// `argmax_c P_c` per voxel, first maximum on ties.
    pub fn argmax(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| {
                let mut best = 0;
                for c in 1..NUM_CLASSES {
                    if self.at(c, i) > self.at(best, i) {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// One class index per voxel; `Y_c(i) = 1{class(i) = c}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotTarget {
    dims: Dims,
    classes: Vec<u8>,
}

impl OneHotTarget {
    pub fn new(dims: Dims, classes: Vec<u8>) -> Result<Self> {
        check_len(dims, classes.len())?;
        if let Some(&c) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(SegError::InvalidClass(c));
        }
        Ok(Self { dims, classes })
    }

    /// BraTS labels to classes: `4 -> ET`, `1 -> TC_only`, `2 -> WT_only`.
    pub fn from_labels(s: &LabelVolume) -> Self {
        let classes = s
            .data()
            .iter()
            .map(|&v| match v {
                4 => 1,
                1 => 2,
                2 => 3,
                _ => 0,
            })
            .collect();
        Self { dims: s.dims(), classes }
    }

    /// Inverse of [`OneHotTarget::from_labels`].
    pub fn to_labels(&self, spacing: Spacing) -> LabelVolume {
        let data = self.classes.iter().map(|&c| [0, 4, 1, 2][c as usize]).collect();
        LabelVolume::new(self.dims, spacing, data).expect("class map yields valid labels")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    #[inline]
    pub fn y(&self, c: usize, i: usize) -> f64 {
        if self.classes[i] as usize == c { 1.0 } else { 0.0 }
    }

    /// `Y_fg = 1{sum_{c>=1} Y_c > 0}`.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::new(self.dims, [1.0; 3], self.classes.iter().map(|&c| c > 0).collect())
            .expect("dims checked")
    }
}

/// Max-subtracted softmax over the class axis.
pub fn softmax_logits(z: &Logits) -> ProbTensor {
    let n = z.len();
    let mut out: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|_| Vec::with_capacity(n));
    for i in 0..n {
        let m = (0..NUM_CLASSES).map(|c| z.at(c, i)).fold(f64::NEG_INFINITY, f64::max);
        let e: [f64; NUM_CLASSES] = std::array::from_fn(|c| (z.at(c, i) - m).exp());
        let s: f64 = e.iter().sum();
        for c in 0..NUM_CLASSES {
            out[c].push(e[c] / s);
        }
    }
    ProbTensor(ClassTensor { dims: z.dims, channels: out })
}

fn same_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(VolumeError::GridMismatch(a, b).into());
    }
    Ok(())
}

/// Mean voxel-wise `-ln max(P_y, 1e-12)` with `P = softmax(Z)`.
pub fn cross_entropy(z: &Logits, y: &OneHotTarget) -> Result<f64> {
    same_dims(z.dims, y.dims)?;
    Ok(cross_entropy_probs(&softmax_logits(z), y))
}

fn cross_entropy_probs(p: &ProbTensor, y: &OneHotTarget) -> f64 {
    let n = p.len();
    let s: f64 = (0..n)
        .map(|i| -p.at(y.classes[i] as usize, i).max(PROB_FLOOR).ln())
        .sum();
    s / n as f64
}

/// `1 - 1/3 sum_{c=1..3} (2 sum P_c Y_c + eps) / (sum P_c + sum Y_c + eps)`.
pub fn soft_dice_loss(p: &ProbTensor, y: &OneHotTarget) -> Result<f64> {
    same_dims(p.dims(), y.dims)?;
    let mut acc = 0.0;
    for c in 1..NUM_CLASSES {
        let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
        for i in 0..p.len() {
            let (pc, yc) = (p.at(c, i), y.y(c, i));
            inter += pc * yc;
            sp += pc;
            sy += yc;
        }
        acc += (2.0 * inter + DICE_EPS) / (sp + sy + DICE_EPS);
    }
    Ok(1.0 - acc / 3.0)
}

/// Mean of the morphological gradient `dilate(Y_fg) - erode(Y_fg)`.
pub fn boundary_regularizer(y: &OneHotTarget) -> f64 {
    let fg = y.foreground();
    let g = dilate(&fg).difference(&erode(&fg)).expect("same grid");
    g.count() as f64 / fg.len() as f64
}

/// Soft counterpart on `P_fg = 1 - P_BG`: mean of the 6-neighbourhood max
/// minus min, with out-of-grid neighbours treated as 0 for the min.
/// Equals [`boundary_regularizer`] when `P` is one-hot.
pub fn boundary_regularizer_soft(p: &ProbTensor) -> f64 {
    let dims = p.dims();
    let n = p.len();
    let fg: Vec<f64> = (0..n).map(|i| 1.0 - p.at(0, i)).collect();
    let mut total = 0.0;
    for i in 0..n {
        let q = unravel(dims, i);
        let (mut hi, mut lo) = (fg[i], fg[i]);
        for d in FACE_OFFSETS {
            match offset(dims, q, d) {
                Some([z, y, x]) => {
                    let v = fg[(z * dims[1] + y) * dims[2] + x];
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
                None => lo = lo.min(0.0),
            }
        }
        total += hi - lo;
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub lambda_max: f64,
    pub epochs: f64,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self { lambda_max: 0.3, epochs: 100.0 }
    }
}

/// `lambda(e) = lambda_max (1 - cos(pi e / E)) / 2`, with `e` clamped to
/// `[0, E]`.
pub fn ramp(e: f64, sched: &RampSchedule) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    if e >= sched.epochs {
        return sched.lambda_max;
    }
    sched.lambda_max * (1.0 - (std::f64::consts::PI * e / sched.epochs).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTerm {
    /// The regularizer on the ground truth, constant in the prediction.
    #[default]
    Target,
    /// [`boundary_regularizer_soft`] on the prediction.
    Prediction,
}

/// `CE + Dice + lambda(e) R` with the target-based regularizer.
pub fn seg_loss(z: &Logits, y: &OneHotTarget, e: f64, sched: &RampSchedule) -> Result<f64> {
    seg_loss_with(z, y, e, sched, BoundaryTerm::Target)
}

pub fn seg_loss_with(
    z: &Logits,
    y: &OneHotTarget,
    e: f64,
    sched: &RampSchedule,
    term: BoundaryTerm,
) -> Result<f64> {
    same_dims(z.dims, y.dims)?;
    let p = softmax_logits(z);
    let r = match term {
        BoundaryTerm::Target => boundary_regularizer(y),
        BoundaryTerm::Prediction => boundary_regularizer_soft(&p),
    };
    Ok(cross_entropy_probs(&p, y) + soft_dice_loss(&p, y)? + ramp(e, sched) * r)
}

fn bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
}

fn bernoulli_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Jensen-Shannon divergence of Bernoulli distributions from their
/// equal-weight mixture (natural log, so bounded by `ln 2`).
pub fn jensen_shannon(heads: &[f64]) -> f64 {
    if heads.is_empty() {
        return 0.0;
    }
    let k = heads.len() as f64;
    let mean = heads.iter().sum::<f64>() / k;
    let avg_h = heads.iter().map(|&p| bernoulli_entropy(p)).sum::<f64>() / k;
    (bernoulli_entropy(mean) - avg_h).max(0.0)
}

/// Population variance of the head probabilities.
pub fn head_variance(heads: &[f64]) -> f64 {
    if heads.is_empty() {
        return 0.0;
    }
    let k = heads.len() as f64;
    let mean = heads.iter().sum::<f64>() / k;
    heads.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / k
}

/// `sum_h BCE(p_h, y) + lambda_var Var(p_h) + lambda_jsd JSD(p_h)`.
pub fn ensemble_loss(heads: &[f64], y: u8, lambda_var: f64, lambda_jsd: f64) -> f64 {
    heads.iter().map(|&p| bce(p, y)).sum::<f64>()
        + lambda_var * head_variance(heads)
        + lambda_jsd * jensen_shannon(heads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Et,
    Tc,
    Wt,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Et, Region::Tc, Region::Wt];

    pub fn mask(self, s: &LabelVolume) -> BinaryMask {
        let c = canonicalize_labels(s);
        match self {
            Region::Et => c.et,
            Region::Tc => c.tc,
            Region::Wt => c.wt,
        }
    }
}

/// `2 |A n B| / (|A| + |B| + eps)`; 1 when both are empty.
pub fn dice_masks(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    same_dims(pred.dims(), truth.dims())?;
    let (a, b) = (pred.count(), truth.count());
    if a == 0 && b == 0 {
        return Ok(1.0);
    }
    if a == 0 || b == 0 {
        return Ok(0.0);
    }
    let inter = pred.data().iter().zip(truth.data()).filter(|(&p, &t)| p && t).count();
    Ok(2.0 * inter as f64 / (a as f64 + b as f64 + DICE_EPS))
}

pub fn dice_eval(pred: &LabelVolume, truth: &LabelVolume, region: Region) -> Result<f64> {
    dice_masks(&region.mask(pred), &region.mask(truth))
}

/// Mean Dice over ET, TC and WT.
pub fn macro_dice(pred: &LabelVolume, truth: &LabelVolume) -> Result<f64> {
    let mut s = 0.0;
    for r in Region::ALL {
        s += dice_eval(pred, truth, r)?;
    }
    Ok(s / 3.0)
}

/// Distances (mm) from each surface voxel of `from` to the nearest surface
/// voxel of `to`.
pub fn directed_surface_distances(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
    let dt = squared_distance_transform(&surface_voxels(to));
    let src = surface_voxels(from);
    src.data()
        .iter()
        .zip(&dt)
        .filter(|(&s, _)| s)
        .map(|(_, d)| d.sqrt())
        .collect()
}

/// Max of the two directed 95th-percentile surface distances; `None` when
/// either mask is empty.
pub fn hd95(pred: &BinaryMask, truth: &BinaryMask) -> Result<Option<f64>> {
    same_dims(pred.dims(), truth.dims())?;
    if pred.count() == 0 || truth.count() == 0 {
        return Ok(None);
    }
    let q = |mut d: Vec<f64>| {
        d.sort_by(f64::total_cmp);
        percentile_of_sorted(&d, 95.0).expect("non-empty surface")
    };
    let a = q(directed_surface_distances(pred, truth));
    let b = q(directed_surface_distances(truth, pred));
    Ok(Some(a.max(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hd95Report {
    pub et: Option<f64>,
    pub tc: Option<f64>,
    pub wt: Option<f64>,
    pub average: Option<f64>,
    pub undefined_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub subject_id: String,
    pub dice: DiceJson,
    pub hd95: Hd95Report,
}

/// Dice block with the `macro` key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceJson {
    pub et: f64,
    pub tc: f64,
    pub wt: f64,
    #[serde(rename = "macro")]
    pub macro_dice: f64,
}

/// Dice and HD95 for all three regions of one subject.
pub fn evaluate_subject(subject_id: &str, pred: &LabelVolume, truth: &LabelVolume) -> Result<SegReport> {
    let mut dice = [0.0; 3];
    let mut hd = [None; 3];
    for (k, r) in Region::ALL.iter().enumerate() {
        let spacing = truth.spacing();
        let a = r.mask(pred).with_spacing(spacing)?;
        let b = r.mask(truth).with_spacing(spacing)?;
        dice[k] = dice_masks(&a, &b)?;
        hd[k] = hd95(&a, &b)?;
    }
    let defined: Vec<f64> = hd.iter().flatten().copied().collect();
    let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(SegReport {
        subject_id: subject_id.to_string(),
        dice: DiceJson {
            et: dice[0],
            tc: dice[1],
            wt: dice[2],
            macro_dice: (dice[0] + dice[1] + dice[2]) / 3.0,
        },
        hd95: Hd95Report {
            et: hd[0],
            tc: hd[1],
            wt: hd[2],
            average,
            undefined_count: 3 - defined.len(),
        },
    })
}
