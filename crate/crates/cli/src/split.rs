use mgmt_core::{CohortTable, SplitTag};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("need 2 <= k <= cohort size, got k = {k} for {n} subjects")]
    InvalidFolds { k: usize, n: usize },
    #[error("empty cohort")]
    EmptyCohort,
}

/// Per-subject train/val tag and, when folds were requested, fold index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub tags: BTreeMap<String, SplitTag>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub folds: BTreeMap<String, usize>,
}

impl SplitAssignment {
    /// Subject ids with `tag`, in cohort order.
    pub fn ids_with<'a>(&self, cohort: &'a CohortTable, tag: SplitTag) -> Vec<&'a str> {
        cohort
            .rows
            .iter()
            .filter(|r| self.tags.get(&r.subject_id) == Some(&tag))
            .map(|r| r.subject_id.as_str())
            .collect()
    }
}

/// Class-wise seeded shuffle; positives first, then negatives.
fn shuffled_by_class(cohort: &CohortTable, seed: u64) -> [Vec<String>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [1u8, 0].map(|c| {
        let mut ids: Vec<String> = cohort
            .rows
            .iter()
            .filter(|r| r.label == c)
            .map(|r| r.subject_id.clone())
            .collect();
        ids.shuffle(&mut rng);
        ids
    })
}

/// Shuffles each class and takes the first `round(ratio · n_c)` of it as
/// training data.
pub fn stratified_split(cohort: &CohortTable, ratio: f64, seed: u64) -> Result<SplitAssignment, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::InvalidRatio(ratio));
    }
    if cohort.is_empty() {
        return Err(SplitError::EmptyCohort);
    }
    let mut tags = BTreeMap::new();
    for ids in shuffled_by_class(cohort, seed) {
        let cut = (ratio * ids.len() as f64).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            tags.insert(id, if i < cut { SplitTag::Train } else { SplitTag::Val });
        }
    }
    Ok(SplitAssignment { seed, tags, folds: BTreeMap::new() })
}

/// Deals the class-wise shuffled subjects round-robin over `k` folds,
/// continuing the rotation across classes so fold sizes differ by at most one.
pub fn kfold(cohort: &CohortTable, k: usize, seed: u64) -> Result<SplitAssignment, SplitError> {
    if cohort.is_empty() {
        return Err(SplitError::EmptyCohort);
    }
    if k < 2 || k > cohort.len() {
        return Err(SplitError::InvalidFolds { k, n: cohort.len() });
    }
    let mut folds = BTreeMap::new();
    let mut next = 0;
    for ids in shuffled_by_class(cohort, seed) {
        for id in ids {
            folds.insert(id, next);
            next = (next + 1) % k;
        }
    }
    let tags = folds.keys().map(|id| (id.clone(), SplitTag::Train)).collect();
    Ok(SplitAssignment { seed, tags, folds })
}

/// Uses the cohort's own split column when every row has one, otherwise a
/// seeded stratified split.
pub fn resolve_split(cohort: &CohortTable, ratio: f64, seed: u64) -> Result<SplitAssignment, SplitError> {
    if !cohort.is_empty() && cohort.rows.iter().all(|r| r.split.is_some()) {
        let tags = cohort.rows.iter().map(|r| (r.subject_id.clone(), r.split.unwrap())).collect();
        return Ok(SplitAssignment { seed, tags, folds: BTreeMap::new() });
    }
    stratified_split(cohort, ratio, seed)
}
