//! Numerical core for non-invasive MGMT promoter methylation prediction from
//! multi-parametric brain MRI.
//!
//! The crate is organized bottom-up:
//!
//! - [`volume`]: the 3D grid type and shared kernels (resampling, smoothing,
//!   morphology, Otsu, percentiles, FFT, distance transforms).
//! - [`nifti`] and [`cohort`]: NIfTI-1 volumes and label CSVs.
//! - [`preprocess`]: bias correction, brain extraction, ROI crop, intensity
//!   standardization, grid harmonization and tumor-label canonicalization.
//! - [`radiomics`]: first-order, shape, texture-matrix and auxiliary features
//!   plus train-split standardization.
//! - [`seg_math`]: segmentation losses and Dice / HD95 evaluation.
//! - [`cls_metrics`]: ROC-AUC, confusion rates, macro-F1, Brier, temperature
//!   scaling and threshold selection.
//! - [`fusion`]: feature fusion and the gradient-boosted tree classifier.
//!
//! Data-parallel inner loops go through [`exec::Exec`]; with the `parallel`
//! feature disabled everything runs sequentially and produces identical
//! results.

pub mod cls_metrics;
pub mod cohort;
pub mod exec;
pub mod fusion;
pub mod nifti;
pub mod preprocess;
pub mod radiomics;
pub mod seg_math;
pub mod volume;

pub use cohort::{read_cohort_csv, CohortColumns, CohortRow, CohortTable, SplitTag};
pub use exec::Exec;
pub use nifti::{read_nifti, write_nifti, NiftiHeader};
pub use volume::{BinaryMask, BoundingBox, Volume3D};
