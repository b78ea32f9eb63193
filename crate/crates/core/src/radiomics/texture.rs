//! Gray-level texture matrices and their summary features.
//!
//! Matrices hold integer counts so they are bit-identical under translation
//! and axis permutation of the region. Direction averages sum the sorted
//! per-direction values for the same reason.

use super::{exact_mean, DiscretizedRoi, FeatureFamily, FeatureVector};
use crate::volume::{offset, offsets26, unravel, Dims};

/// The 13 unique displacement vectors of the 26-neighbourhood (first nonzero
/// component positive).
pub const DIRECTIONS: [[isize; 3]; 13] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Dense row-major count matrix. Row `i` holds gray level `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl CountMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn bump(&mut self, r: usize, c: usize) {
        self.data[r * self.cols + c] += 1;
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }

    fn row_sums(&self) -> Vec<u64> {
        self.data.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.cols];
        for r in self.data.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// Drops trailing all-zero columns.
    fn trimmed(mut self) -> Self {
        let used = self.col_sums().iter().rposition(|&c| c > 0).map_or(0, |c| c + 1);
        if used < self.cols {
            let data = self.data.chunks(self.cols).flat_map(|r| r[..used].iter().copied()).collect();
            self = Self { rows: self.rows, cols: used, data };
        }
        self
    }
}

#[inline]
fn step(dims: Dims, i: usize, d: [isize; 3]) -> Option<usize> {
    offset(dims, unravel(dims, i), d).map(|[z, y, x]| (z * dims[1] + y) * dims[2] + x)
}

fn entropy_of(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

fn averaged(family: FeatureFamily, names: &[&str], per_dir: Vec<Vec<f64>>, fallback: &[f64]) -> FeatureVector {
    let mut fv = FeatureVector::default();
    for (k, name) in names.iter().enumerate() {
        let v = if per_dir.is_empty() {
            fallback[k]
        } else {
            exact_mean(per_dir.iter().map(|d| d[k]).collect())
        };
        fv.push(name, family, v);
    }
    fv
}

/// Symmetric co-occurrence counts for neighbour pairs at displacement
/// `dir`, both voxels inside the region.
pub fn glcm_matrix(d: &DiscretizedRoi, dir: [isize; 3]) -> CountMatrix {
    let ng = d.n_g as usize;
    let mut m = CountMatrix::zeros(ng, ng);
    let lv = d.levels();
    for (i, &a) in lv.iter().enumerate() {
        if a == 0 {
            continue;
        }
        if let Some(j) = step(d.dims(), i, dir) {
            let b = lv[j];
            if b > 0 {
                m.bump(a as usize - 1, b as usize - 1);
                m.bump(b as usize - 1, a as usize - 1);
            }
        }
    }
    m
}

pub const GLCM_NAMES: [&str; 6] = [
    "glcm_contrast",
    "glcm_dissimilarity",
    "glcm_homogeneity",
    "glcm_energy",
    "glcm_entropy",
    "glcm_correlation",
];

fn glcm_single(m: &CountMatrix) -> Option<Vec<f64>> {
    let total = m.total();
    if total == 0 {
        return None;
    }
    let t = total as f64;
    let ng = m.rows;
    let marg = m.row_sums();
    let mu: f64 = marg.iter().enumerate().map(|(i, &c)| (i + 1) as f64 * c as f64 / t).sum();
    let var: f64 = marg
        .iter()
        .enumerate()
        .map(|(i, &c)| ((i + 1) as f64 - mu).powi(2) * c as f64 / t)
        .sum();
    let (mut con, mut dis, mut hom, mut en, mut cov) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..ng {
        for j in 0..ng {
            let c = m.get(i, j);
            if c == 0 {
                continue;
            }
            let p = c as f64 / t;
            let diff = (i as f64 - j as f64).abs();
            con += diff * diff * p;
            dis += diff * p;
            hom += p / (1.0 + diff);
            en += p * p;
            cov += ((i + 1) as f64 - mu) * ((j + 1) as f64 - mu) * p;
        }
    }
    let ent = entropy_of(m.data.iter().copied(), t);
    let corr = if var > 0.0 { cov / var } else { 0.0 };
    Some(vec![con, dis, hom, en, ent, corr])
}

pub fn glcm_features(d: &DiscretizedRoi) -> FeatureVector {
    let per_dir = DIRECTIONS.iter().filter_map(|&dir| glcm_single(&glcm_matrix(d, dir))).collect();
    averaged(FeatureFamily::Glcm, &GLCM_NAMES, per_dir, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0])
}

/// Run-length counts along `dir`: rows are gray levels, column `l - 1`
/// counts maximal runs of length `l`.
pub fn glrlm_matrix(d: &DiscretizedRoi, dir: [isize; 3]) -> CountMatrix {
    let dims = d.dims();
    let ng = d.n_g as usize;
    let max_len = *dims.iter().max().unwrap();
    let mut m = CountMatrix::zeros(ng, max_len);
    let lv = d.levels();
    let back = [-dir[0], -dir[1], -dir[2]];
    for (i, &a) in lv.iter().enumerate() {
        if a == 0 {
            continue;
        }
        if step(dims, i, back).is_some_and(|j| lv[j] == a) {
            continue;
        }
        let mut len = 1;
        let mut cur = i;
        while let Some(j) = step(dims, cur, dir) {
            if lv[j] != a {
                break;
            }
            len += 1;
            cur = j;
        }
        m.bump(a as usize - 1, len - 1);
    }
    m.trimmed()
}

pub const GLRLM_NAMES: [&str; 5] = [
    "glrlm_short_run_emphasis",
    "glrlm_long_run_emphasis",
    "glrlm_gray_level_nonuniformity",
    "glrlm_run_length_nonuniformity",
    "glrlm_run_percentage",
];

/// Short/large emphasis, gray-level and size non-uniformity over a
/// level-by-size count matrix (column `k` has size `k + 1`).
fn size_emphasis(m: &CountMatrix) -> [f64; 4] {
    let n = m.total() as f64;
    let mut small = 0.0;
    let mut large = 0.0;
    for i in 0..m.rows {
        for k in 0..m.cols {
            let c = m.get(i, k) as f64;
            if c > 0.0 {
                let s = (k + 1) as f64;
                small += c / (s * s);
                large += c * s * s;
            }
        }
    }
    let gln: f64 = m.row_sums().iter().map(|&r| (r as f64).powi(2)).sum();
    let sn: f64 = m.col_sums().iter().map(|&c| (c as f64).powi(2)).sum();
    [small / n, large / n, gln / n, sn / n]
}

pub fn glrlm_features(d: &DiscretizedRoi) -> FeatureVector {
    let np = d.voxel_count() as f64;
    let per_dir = DIRECTIONS
        .iter()
        .map(|&dir| {
            let m = glrlm_matrix(d, dir);
            let [sre, lre, gln, rln] = size_emphasis(&m);
            vec![sre, lre, gln, rln, m.total() as f64 / np]
        })
        .collect();
    averaged(FeatureFamily::Glrlm, &GLRLM_NAMES, per_dir, &[0.0; 5])
}

/// Zone-size counts: 26-connected components of equal gray level.
pub fn glszm_matrix(d: &DiscretizedRoi) -> CountMatrix {
    let dims = d.dims();
    let lv = d.levels();
    let mut m = CountMatrix::zeros(d.n_g as usize, d.voxel_count().max(1));
    let mut seen = vec![false; lv.len()];
    let offs: Vec<[isize; 3]> = offsets26().collect();
    let mut stack = Vec::new();
    for start in 0..lv.len() {
        let a = lv[start];
        if a == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for &o in &offs {
                if let Some(j) = step(dims, i, o) {
                    if !seen[j] && lv[j] == a {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        m.bump(a as usize - 1, size - 1);
    }
    m.trimmed()
}

pub const GLSZM_NAMES: [&str; 4] = [
    "glszm_small_zone_emphasis",
    "glszm_large_zone_emphasis",
    "glszm_zone_percentage",
    "glszm_gray_level_nonuniformity",
];

pub fn glszm_features(d: &DiscretizedRoi) -> FeatureVector {
    let m = glszm_matrix(d);
    let [sze, lze, gln, _] = size_emphasis(&m);
    let zp = m.total() as f64 / d.voxel_count() as f64;
    averaged(FeatureFamily::Glszm, &GLSZM_NAMES, vec![vec![sze, lze, zp, gln]], &[])
}

/// Dependence counts: column `k` counts voxels with `k` equal-level
/// neighbours among their 26 in-region neighbours (`k` in `0..=26`).
pub fn gldm_matrix(d: &DiscretizedRoi) -> CountMatrix {
    let dims = d.dims();
    let lv = d.levels();
    let mut m = CountMatrix::zeros(d.n_g as usize, 27);
    let offs: Vec<[isize; 3]> = offsets26().collect();
    for (i, &a) in lv.iter().enumerate() {
        if a == 0 {
            continue;
        }
        let k = offs
            .iter()
            .filter(|&&o| step(dims, i, o).is_some_and(|j| lv[j] == a))
            .count();
        m.bump(a as usize - 1, k);
    }
    m
}

pub const GLDM_NAMES: [&str; 4] = [
    "gldm_small_dependence_emphasis",
    "gldm_large_dependence_emphasis",
    "gldm_dependence_nonuniformity",
    "gldm_dependence_entropy",
];

pub fn gldm_features(d: &DiscretizedRoi) -> FeatureVector {
    // A voxel's dependence size counts itself, so emphasis weights use k + 1.
    let m = gldm_matrix(d);
    let [sde, lde, _, dn] = size_emphasis(&m);
    let de = entropy_of(m.data.iter().copied(), m.total() as f64);
    averaged(FeatureFamily::Gldm, &GLDM_NAMES, vec![vec![sde, lde, dn, de]], &[])
}

/// Neighbourhood gray-tone difference table.
#[derive(Debug, Clone, PartialEq)]
pub struct Ngtdm {
    /// Voxels of level `i + 1` with at least one in-region neighbour.
    pub n: Vec<u64>,
    /// `s_i`: summed absolute difference to the neighbourhood mean.
    pub s: Vec<f64>,
}

pub fn ngtdm_table(d: &DiscretizedRoi) -> Ngtdm {
    let dims = d.dims();
    let lv = d.levels();
    let ng = d.n_g as usize;
    let offs: Vec<[isize; 3]> = offsets26().collect();
    let mut n = vec![0u64; ng];
    // |i * c - sum| accumulated per neighbour count c keeps s exact.
    let mut num = vec![[0u64; 27]; ng];
    for (i, &a) in lv.iter().enumerate() {
        if a == 0 {
            continue;
        }
        let (mut cnt, mut sum) = (0u64, 0u64);
        for &o in &offs {
            if let Some(j) = step(dims, i, o) {
                if lv[j] > 0 {
                    cnt += 1;
                    sum += lv[j] as u64;
                }
            }
        }
        if cnt > 0 {
            n[a as usize - 1] += 1;
            num[a as usize - 1][cnt as usize] += (a as u64 * cnt).abs_diff(sum);
        }
    }
    let s = num
        .iter()
        .map(|row| (1..27).map(|c| row[c] as f64 / c as f64).sum())
        .collect();
    Ngtdm { n, s }
}

pub const NGTDM_NAMES: [&str; 5] = [
    "ngtdm_coarseness",
    "ngtdm_contrast",
    "ngtdm_busyness",
    "ngtdm_complexity",
    "ngtdm_strength",
];

pub const COARSENESS_CAP: f64 = 1e6;

pub fn ngtdm_features(d: &DiscretizedRoi) -> FeatureVector {
    let t = ngtdm_table(d);
    averaged(FeatureFamily::Ngtdm, &NGTDM_NAMES, vec![ngtdm_from_table(&t).to_vec()], &[])
}

pub(crate) fn ngtdm_from_table(t: &Ngtdm) -> [f64; 5] {
    let nvp: u64 = t.n.iter().sum();
    if nvp == 0 {
        return [COARSENESS_CAP, 0.0, 0.0, 0.0, 0.0];
    }
    let nvp = nvp as f64;
    let lv: Vec<(f64, f64, f64)> = t
        .n
        .iter()
        .zip(&t.s)
        .enumerate()
        .filter(|(_, (&n, _))| n > 0)
        .map(|(i, (&n, &s))| ((i + 1) as f64, n as f64 / nvp, s))
        .collect();
    let ngp = lv.len() as f64;
    let ps: f64 = lv.iter().map(|&(_, p, s)| p * s).sum();
    let s_sum: f64 = lv.iter().map(|&(_, _, s)| s).sum();
    let coarse = if ps > 0.0 { (1.0 / ps).min(COARSENESS_CAP) } else { COARSENESS_CAP };
    let (mut pair_sq, mut busy_den, mut complexity, mut strength_num) = (0.0, 0.0, 0.0, 0.0);
    for &(i, pi, si) in &lv {
        for &(j, pj, sj) in &lv {
            let d = i - j;
            pair_sq += pi * pj * d * d;
            busy_den += (i * pi - j * pj).abs();
            complexity += d.abs() * (pi * si + pj * sj) / (pi + pj);
            strength_num += (pi + pj) * d * d;
        }
    }
    let contrast = if ngp > 1.0 { pair_sq / (ngp * (ngp - 1.0)) * s_sum / nvp } else { 0.0 };
    let busyness = if busy_den > 0.0 { ps / busy_den } else { 0.0 };
    let strength = if s_sum > 0.0 { strength_num / s_sum } else { 0.0 };
    [coarse, contrast, busyness, complexity / nvp, strength]
}
