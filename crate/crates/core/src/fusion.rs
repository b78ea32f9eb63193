//! Feature fusion and a second-order gradient-boosted tree classifier.
//!
//! Boosting minimizes logistic loss with depth-limited regression trees fit
//! to gradient/hessian statistics by exact greedy split search. Split search
//! and leaf sums visit rows in a canonical order (feature value, then
//! gradient, then hessian), so the model does not depend on row order.

use crate::exec::Exec;
use crate::radiomics::FeatureVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite feature at row {row}, column {col}")]
    NaNFeature { row: usize, col: usize },
    #[error("label at row {0} is not 0 or 1")]
    InvalidLabel(usize),
    #[error("empty training set")]
    EmptyDataset,
    #[error("model payload does not start with GBMF")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedModelVersion(u32),
    #[error("model payload truncated")]
    Truncated,
    #[error("corrupt model payload: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// `f = [f_cnn ⊕ f_rad ⊕ f_extras]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FusedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Concatenates the optional CNN block, the radiomic block and the extras
/// block, in that order. Without an embedding the result is the
/// radiomics-plus-extras vector.
pub fn fuse(rad: &FeatureVector, extras: &FeatureVector, cnn: Option<&[f64]>) -> Result<FusedVector> {
    if rad.is_empty() || extras.is_empty() {
        return Err(FusionError::DimensionMismatch("radiomic and extras blocks must be non-empty".into()));
    }
    let mut names = Vec::new();
    let mut values = Vec::new();
    if let Some(e) = cnn {
        if e.is_empty() {
            return Err(FusionError::DimensionMismatch("empty embedding".into()));
        }
        names.extend((0..e.len()).map(|i| format!("cnn_{i}")));
        values.extend_from_slice(e);
    }
    for fv in [rad, extras] {
        names.extend(fv.names().into_iter().map(String::from));
        values.extend(fv.values());
    }
    Ok(FusedVector { names, values })
}

/// Checks that every vector of a cohort has the same feature names.
pub fn check_cohort(vectors: &[FusedVector]) -> Result<()> {
    if let Some(first) = vectors.first() {
        for (i, v) in vectors.iter().enumerate() {
            if v.names != first.names {
                return Err(FusionError::DimensionMismatch(format!(
                    "vector {i} has {} features, expected {}",
                    v.len(),
                    first.len()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
        }
    }
}

/// Margins are clamped to this magnitude so probabilities stay inside (0, 1).
pub const MARGIN_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature as usize] < *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }

    fn max_feature(&self) -> Option<u32> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { feature, left, right, .. } => {
                [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max()
            }
        }
    }

    fn scale_leaves(&mut self, s: f64) {
        match self {
            Node::Leaf(v) => *v *= s,
            Node::Split { left, right, .. } => {
                left.scale_leaves(s);
                right.scale_leaves(s);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Feature indices used by splits, in preorder.
    pub fn features(&self, out: &mut Vec<u32>) {
        if let Node::Split { feature, left, right, .. } = self {
            out.push(*feature);
            left.features(out);
            right.features(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Node>,
}

impl BoostedModel {
    /// A tree-free model predicting the prior `pi`.
    pub fn prior(pi: f64, learning_rate: f64) -> Self {
        Self { base_score: (pi / (1.0 - pi)).ln(), learning_rate, trees: Vec::new() }
    }

    /// Number of input features the model needs.
    pub fn min_features(&self) -> usize {
        self.trees.iter().filter_map(Node::max_feature).max().map_or(0, |f| f as usize + 1)
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.min_features() {
            return Err(FusionError::DimensionMismatch(format!(
                "model uses {} features, input has {}",
                self.min_features(),
                x.len()
            )));
        }
        Ok(self.margin_unchecked(x))
    }

    fn margin_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// `sigmoid(base + eta * sum of tree outputs)`, strictly inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(prob_of_margin(self.predict_margin(x)?))
    }
}

pub fn prob_of_margin(m: f64) -> f64 {
    crate::cls_metrics::sigmoid(m.clamp(-MARGIN_CLAMP, MARGIN_CLAMP))
}

fn logistic_loss(margins: &[f64], y: &[u8]) -> f64 {
    let s: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            let p = prob_of_margin(m);
            if t == 1 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    s / margins.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Training loss before the first round and after every round.
    pub losses: Vec<f64>,
    /// Leaf scale applied to each round's tree (1 unless it was damped).
    pub step_scale: Vec<f64>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    /// Rows sorted by each feature's value.
    order: Vec<Vec<u32>>,
    cfg: GbmConfig,
    exec: Exec,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    /// `(x, g, h)` of the node's rows along feature `f` in canonical order.
    fn node_column(&self, f: usize, member: &[bool], g: &[f64], h: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut col: Vec<(f64, f64, f64)> = self.order[f]
            .iter()
            .filter(|&&r| member[r as usize])
            .map(|&r| (self.x[r as usize][f], g[r as usize], h[r as usize]))
            .collect();
        let mut i = 0;
        while i < col.len() {
            let mut j = i + 1;
            while j < col.len() && col[j].0 == col[i].0 {
                j += 1;
            }
            if j - i > 1 {
                col[i..j].sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)));
            }
            i = j;
        }
        col
    }

    fn best_split(&self, col: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
        let lambda = self.cfg.lambda;
        let gt: f64 = col.iter().map(|c| c.1).sum();
        let ht: f64 = col.iter().map(|c| c.2).sum();
        let parent = gt * gt / (ht + lambda);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<(f64, f64)> = None;
        for k in 0..col.len().saturating_sub(1) {
            gl += col[k].1;
            hl += col[k].2;
            let (a, b) = (col[k].0, col[k + 1].0);
            if a == b {
                continue;
            }
            let (gr, hr) = (gt - gl, ht - hl);
            if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
            if best.is_none_or(|(bg, _)| gain > bg) {
                let mid = a + (b - a) / 2.0;
                let thr = if mid > a { mid } else { b };
                best = Some((gain, thr));
            }
        }
        best
    }

    fn build(&self, member: &[bool], g: &[f64], h: &[f64], depth: usize) -> Node {
        let leaf = || {
            let col = self.node_column(0, member, g, h);
            let gs: f64 = col.iter().map(|c| c.1).sum();
            let hs: f64 = col.iter().map(|c| c.2).sum();
            Node::Leaf(-gs / (hs + self.cfg.lambda))
        };
        if depth >= self.cfg.max_depth {
            return leaf();
        }
        let nf = self.x[0].len();
        let scans = self.exec.map(nf, |f| self.best_split(&self.node_column(f, member, g, h)));
        let mut best: Option<Candidate> = None;
        for (f, s) in scans.into_iter().enumerate() {
            if let Some((gain, threshold)) = s {
                if gain > self.cfg.gamma && best.is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate { gain, feature: f, threshold });
                }
            }
        }
        let Some(c) = best else {
            return leaf();
        };
        let mut left = vec![false; member.len()];
        let mut right = vec![false; member.len()];
        for (r, &m) in member.iter().enumerate() {
            if m {
                if self.x[r][c.feature] < c.threshold {
                    left[r] = true;
                } else {
                    right[r] = true;
                }
            }
        }
        Node::Split {
            feature: c.feature as u32,
            threshold: c.threshold,
            left: Box::new(self.build(&left, g, h, depth + 1)),
            right: Box::new(self.build(&right, g, h, depth + 1)),
        }
    }
}

fn validate(x: &[Vec<f64>], y: &[u8]) -> Result<()> {
    if x.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(FusionError::DimensionMismatch(format!("{} rows, {} labels", x.len(), y.len())));
    }
    let nf = x[0].len();
    if nf == 0 {
        return Err(FusionError::DimensionMismatch("zero features".into()));
    }
    for (r, row) in x.iter().enumerate() {
        if row.len() != nf {
            return Err(FusionError::DimensionMismatch(format!("row {r} has {} features, expected {nf}", row.len())));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(FusionError::NaNFeature { row: r, col: c });
        }
    }
    if let Some(r) = y.iter().position(|&v| v > 1) {
        return Err(FusionError::InvalidLabel(r));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(FusionError::SingleClass);
    }
    Ok(())
}

/// Fits the boosted model. A round whose tree would raise the training loss
/// has its leaves halved until it does not (at most 40 times, then zeroed),
/// so the logged loss is nonincreasing.
pub fn train_gbm(x: &[Vec<f64>], y: &[u8], cfg: &GbmConfig, exec: Exec) -> Result<(BoostedModel, TrainLog)> {
    validate(x, y)?;
    let n = x.len();
    let nf = x[0].len();
    let pi = y.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
    let mut model = BoostedModel::prior(pi, cfg.learning_rate);
    let order = exec.map(nf, |f| {
        let mut o: Vec<u32> = (0..n as u32).collect();
        o.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]));
        o
    });
    let builder = Builder { x, order, cfg: *cfg, exec };
    let mut margins = vec![model.base_score; n];
    let mut loss = logistic_loss(&margins, y);
    let mut log = TrainLog { losses: vec![loss], step_scale: Vec::new() };
    let all = vec![true; n];
    for _ in 0..cfg.n_rounds {
        let (g, h): (Vec<f64>, Vec<f64>) = margins
            .iter()
            .zip(y)
            .map(|(&m, &t)| {
                let p = prob_of_margin(m);
                (p - t as f64, (p * (1.0 - p)).max(1e-16))
            })
            .unzip();
        let mut tree = builder.build(&all, &g, &h, 0);
        let mut scale = 1.0;
        let mut trial: Vec<f64>;
        let mut attempts = 0;
        loop {
            trial = margins.iter().zip(x).map(|(&m, row)| m + cfg.learning_rate * tree.eval(row)).collect();
            let l = logistic_loss(&trial, y);
            if l <= loss {
                loss = l;
                break;
            }
            attempts += 1;
            if attempts > 40 {
                tree.scale_leaves(0.0);
                scale = 0.0;
                trial = margins.clone();
                break;
            }
            tree.scale_leaves(0.5);
            scale *= 0.5;
        }
        assert!(loss <= *log.losses.last().unwrap(), "training loss increased");
        margins = trial;
        model.trees.push(tree);
        log.losses.push(loss);
        log.step_scale.push(scale);
    }
    Ok((model, log))
}

pub const MAGIC: &[u8; 4] = b"GBMF";
pub const VERSION: u32 = 1;
const LEAF_TAG: u32 = u32::MAX;
const MAX_PARSE_DEPTH: usize = 64;

fn write_node(n: &Node, out: &mut Vec<u8>) {
    match n {
        Node::Leaf(v) => {
            out.extend_from_slice(&LEAF_TAG.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        Node::Split { feature, threshold, left, right } => {
            out.extend_from_slice(&feature.to_le_bytes());
            out.extend_from_slice(&threshold.to_le_bytes());
            write_node(left, out);
            write_node(right, out);
        }
    }
}

/// Little-endian `GBMF` payload: magic, version, base score, learning rate,
/// tree count, then each tree in preorder. A node is a `u32` feature index
/// followed by an `f64` threshold and its two subtrees, or `u32::MAX`
/// followed by the leaf value.
pub fn serialize(model: &BoostedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.base_score.to_le_bytes());
    out.extend_from_slice(&model.learning_rate.to_le_bytes());
    out.extend_from_slice(&(model.trees.len() as u32).to_le_bytes());
    for t in &model.trees {
        write_node(t, &mut out);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len()).ok_or(FusionError::Truncated)?;
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take()?);
        if !v.is_finite() {
            return Err(FusionError::Corrupt(format!("non-finite value at byte {}", self.pos - 8)));
        }
        Ok(v)
    }

    fn node(&mut self, depth: usize) -> Result<Node> {
        if depth > MAX_PARSE_DEPTH {
            return Err(FusionError::Corrupt("tree too deep".into()));
        }
        let tag = self.u32()?;
        if tag == LEAF_TAG {
            return Ok(Node::Leaf(self.f64()?));
        }
        let threshold = self.f64()?;
        let left = Box::new(self.node(depth + 1)?);
        let right = Box::new(self.node(depth + 1)?);
        Ok(Node::Split { feature: tag, threshold, left, right })
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<BoostedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take::<4>().map_err(|_| FusionError::BadMagic)? != *MAGIC {
        return Err(FusionError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FusionError::UnsupportedModelVersion(version));
    }
    let base_score = r.f64()?;
    let learning_rate = r.f64()?;
    let count = r.u32()? as usize;
    // every tree needs at least one 12-byte leaf
    if count > (bytes.len() - r.pos) / 12 {
        return Err(FusionError::Truncated);
    }
    let trees = (0..count).map(|_| r.node(0)).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(FusionError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(BoostedModel { base_score, learning_rate, trees })
}
