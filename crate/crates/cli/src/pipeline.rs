//! Pipeline stages behind the subcommands.

use crate::cache::{
    build_entry, discover, failed_entry, hash_inputs, is_fresh, load_cached, params_hash, save_manifest, Manifest,
};
use crate::config::PipelineConfig;
use crate::io::{read_json, sha256_file, write_bytes, write_json};
use crate::pool::{exec, map_bounded};
use crate::split::{kfold, resolve_split, SplitAssignment};
use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use mgmt_core::cls_metrics::{
    confusion, macro_f1, basic_rates, brier, report, roc_auc, roc_curve, select_threshold, sigmoid, temperature_scale,
    ClsReport, Scored, ScoredCohort,
};
use mgmt_core::fusion::{self, fuse, train_gbm, BoostedModel};
use mgmt_core::preprocess::PreprocessParams;
use mgmt_core::radiomics::{
    extract_features, format_value, FeatureTable, FeatureVector, RadiomicsParams, StandardizationStats,
};
use mgmt_core::{read_cohort_csv, BinaryMask, CohortTable, SplitTag};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Failure classes that map to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.into()))
    }
    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

/// Subjects that failed in a stage; a non-empty list means exit code 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub computed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl StageSummary {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

pub fn load_cohort(cfg: &PipelineConfig) -> CliResult<CohortTable> {
    let path = cfg.cohort_path();
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading cohort {}", path.display()))
        .config()?;
    let table = read_cohort_csv(&text, &cfg.cohort_columns)
        .with_context(|| format!("parsing cohort {}", path.display()))
        .config()?;
    if table.excluded > 0 {
        warn!("{} cohort rows excluded for missing or invalid labels", table.excluded);
    }
    if table.is_empty() {
        return Err(CliError::Config(anyhow!("cohort {} has no labelled subjects", path.display())));
    }
    Ok(table)
}

// ---------------------------------------------------------------- preprocess

pub fn run_preprocess(cfg: &PipelineConfig) -> CliResult<StageSummary> {
    let cohort = load_cohort(cfg)?;
    preprocess_cohort(cfg, &cohort, &cfg.preprocess)
}

fn preprocess_cohort(cfg: &PipelineConfig, cohort: &CohortTable, params: &PreprocessParams) -> CliResult<StageSummary> {
    std::fs::create_dir_all(&cfg.cache_dir).runtime()?;
    let phash = params_hash(params);
    let old = Manifest::load(&cfg.cache_dir).filter(|m| m.params_sha256 == phash).unwrap_or_default();
    let ids: Vec<&str> = cohort.rows.iter().map(|r| r.subject_id.as_str()).collect();
    let entries = map_bounded(cfg.jobs, ids.len(), |i| {
        let id = ids[i];
        let found = discover(&cfg.data_dir, id).and_then(|f| Ok((hash_inputs(&f)?, f)));
        match found {
            Err(e) => (failed_entry(BTreeMap::new(), &e), true),
            Ok((inputs, files)) => match old.subjects.get(id) {
                Some(prev) if is_fresh(&cfg.cache_dir, id, prev, &inputs) => (prev.clone(), false),
                _ => (build_entry(&cfg.cache_dir, id, &files, inputs, params), true),
            },
        }
    });
    let mut manifest = Manifest { params_sha256: phash, subjects: BTreeMap::new() };
    let mut summary = StageSummary::default();
    for (id, (entry, computed)) in ids.iter().zip(entries) {
        if let Some(err) = &entry.error {
            warn!("{id}: {err}");
            summary.failed.push((id.to_string(), err.clone()));
        } else if computed {
            summary.computed.push(id.to_string());
        } else {
            summary.skipped.push(id.to_string());
        }
        manifest.subjects.insert(id.to_string(), entry);
    }
    save_manifest(&cfg.cache_dir, &manifest).runtime()?;
    info!(
        "preprocess: {} computed, {} cached, {} failed",
        summary.computed.len(),
        summary.skipped.len(),
        summary.failed.len()
    );
    Ok(summary)
}

// ------------------------------------------------------------------ features

pub const FEATURES_RAW: &str = "features_raw.csv";
pub const FEATURES: &str = "features.csv";
pub const STATS: &str = "standardization.json";
pub const SPLIT: &str = "split.json";

/// Reads `subject_id,<values...>`; all rows must have the same length.
pub fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    let mut width = None;
    for rec in r.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let v = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
        if *width.get_or_insert(v.len()) != v.len() || v.is_empty() {
            bail!("{}: embedding rows must have equal, non-zero length", path.display());
        }
        out.insert(id, v);
    }
    Ok(out)
}

fn fused_vector(rad: &FeatureVector, extras: &FeatureVector, cnn: Option<&[f64]>) -> Result<FeatureVector> {
    let f = fuse(rad, extras, cnn)?;
    let mut fv = FeatureVector::default();
    for (n, &v) in f.names.iter().zip(&f.values) {
        fv.push(n, mgmt_core::radiomics::family_of(n), v);
    }
    Ok(fv)
}

/// Radiomic features of the cached enhanced-T1 volume over the whole-tumor
/// mask, fused with the optional embedding.
fn subject_features(
    cache_dir: &Path,
    id: &str,
    params: &RadiomicsParams,
    emb: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<FeatureVector> {
    let vol = load_cached(cache_dir, id, "t1ce")?;
    let labels = load_cached(cache_dir, id, "labels")?;
    let roi = BinaryMask::from_volume(&labels, |v| v != 0.0);
    let (rad, extras) = extract_features(&vol, &roi, params).with_context(|| format!("{id}: radiomics"))?;
    let cnn = match emb {
        Some(m) => Some(m.get(id).ok_or_else(|| anyhow!("{id}: no embedding row"))?.as_slice()),
        None => None,
    };
    fused_vector(&rad, &extras, cnn)
}

/// Raw fused features for every cohort subject with a valid cache entry.
fn extract_cohort(
    cfg: &PipelineConfig,
    cohort: &CohortTable,
    params: &RadiomicsParams,
    summary: &mut StageSummary,
) -> CliResult<FeatureTable> {
    let manifest = Manifest::load(&cfg.cache_dir)
        .ok_or_else(|| anyhow!("no cache manifest in {}; run preprocess first", cfg.cache_dir.display()))
        .runtime()?;
    let emb = cfg.embeddings_csv.as_deref().map(read_embeddings).transpose().config()?;
    let ok: Vec<&str> = manifest.ok_subjects().collect();
    let ids: Vec<&str> = cohort.rows.iter().map(|r| r.subject_id.as_str()).collect();
    let results = map_bounded(cfg.jobs, ids.len(), |i| {
        if !ok.contains(&ids[i]) {
            return Err(anyhow!("{}: no valid cache entry", ids[i]));
        }
        subject_features(&cfg.cache_dir, ids[i], params, emb.as_ref())
    });
    let mut table = FeatureTable::default();
    for (id, r) in ids.iter().zip(results) {
        match r.and_then(|fv| Ok(table.push(id, &fv)?)) {
            Ok(()) => summary.computed.push(id.to_string()),
            Err(e) => {
                warn!("{e:#}");
                summary.failed.push((id.to_string(), format!("{e:#}")));
            }
        }
    }
    if table.rows.is_empty() {
        return Err(CliError::Runtime(anyhow!("no subject produced features")));
    }
    Ok(table)
}

fn standardize_table(table: &FeatureTable, stats: &StandardizationStats) -> Result<FeatureTable> {
    let mut out = FeatureTable::default();
    for (i, (id, _)) in table.rows.iter().enumerate() {
        out.push(id, &stats.apply(&table.vector(i))?)?;
    }
    Ok(out)
}

pub fn split_for(cfg: &PipelineConfig, cohort: &CohortTable) -> CliResult<SplitAssignment> {
    resolve_split(cohort, cfg.split.ratio, cfg.split.seed).config()
}

pub fn run_split(cfg: &PipelineConfig) -> CliResult<SplitAssignment> {
    let cohort = load_cohort(cfg)?;
    let mut s = split_for(cfg, &cohort)?;
    s.folds = kfold(&cohort, cfg.split.folds, cfg.split.seed).config()?.folds;
    write_json(&cfg.output_dir.join(SPLIT), &s).runtime()?;
    Ok(s)
}

pub fn run_features(cfg: &PipelineConfig) -> CliResult<StageSummary> {
    let cohort = load_cohort(cfg)?;
    let split = split_for(cfg, &cohort)?;
    let mut summary = StageSummary::default();
    let raw = extract_cohort(cfg, &cohort, &cfg.radiomics, &mut summary)?;
    let train: Vec<FeatureVector> = (0..raw.rows.len())
        .filter(|&i| split.tags.get(&raw.rows[i].0) == Some(&SplitTag::Train))
        .map(|i| raw.vector(i))
        .collect();
    let stats = StandardizationStats::fit(&train).context("fitting standardization on the train split").runtime()?;
    let std_table = standardize_table(&raw, &stats).runtime()?;
    let out = &cfg.output_dir;
    write_bytes(&out.join(FEATURES_RAW), raw.to_csv().runtime()?.as_bytes(), false).runtime()?;
    write_bytes(&out.join(FEATURES), std_table.to_csv().runtime()?.as_bytes(), false).runtime()?;
    write_bytes(&out.join(STATS), stats.to_json().runtime()?.as_bytes(), false).runtime()?;
    write_json(&out.join(SPLIT), &split).runtime()?;
    info!("features: {} subjects, {} features", raw.rows.len(), raw.names.len());
    Ok(summary)
}

// --------------------------------------------------------------------- train

pub const MODEL_FILE: &str = "model.gbm";
pub const CALIBRATION: &str = "calibration.json";
pub const PIPELINE: &str = "pipeline.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub temperature: f64,
    pub threshold: f64,
}

/// Everything `external` needs to reproduce the feature pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPipeline {
    pub preprocess: PreprocessParams,
    pub radiomics: RadiomicsParams,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub label: u8,
    pub margin: f64,
    pub prob: f64,
    pub pred: u8,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "label", "margin", "prob", "pred"])?;
    for p in preds {
        w.write_record([
            p.subject_id.clone(),
            p.label.to_string(),
            format!("{}", p.margin),
            format!("{}", p.prob),
            p.pred.to_string(),
        ])?;
    }
    write_bytes(path, &w.into_inner().map_err(|e| anyhow!("{e}"))?, false)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let f = |i: usize| rec.get(i).ok_or_else(|| anyhow!("{}: short row", path.display()));
            Ok(Prediction {
                subject_id: f(0)?.to_string(),
                label: f(1)?.parse()?,
                margin: f(2)?.parse()?,
                prob: f(3)?.parse()?,
                pred: f(4)?.parse()?,
            })
        })
        .collect()
}

fn rows_for<'a>(table: &'a FeatureTable, cohort: &CohortTable, keep: impl Fn(&str) -> bool) -> (Vec<&'a str>, Vec<Vec<f64>>, Vec<u8>) {
    let (mut ids, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (id, vals) in &table.rows {
        if let (true, Some(l)) = (keep(id), cohort.label_of(id)) {
            ids.push(id.as_str());
            x.push(vals.clone());
            y.push(l);
        }
    }
    (ids, x, y)
}

fn predict(model: &BoostedModel, ids: &[&str], x: &[Vec<f64>], y: &[u8], cal: Calibration) -> Result<Vec<Prediction>> {
    ids.iter()
        .zip(x)
        .zip(y)
        .map(|((id, row), &label)| {
            let margin = model.predict_margin(row)?;
            let prob = sigmoid(margin / cal.temperature);
            Ok(Prediction { subject_id: id.to_string(), label, margin, prob, pred: u8::from(prob >= cal.threshold) })
        })
        .collect()
}

fn scored(preds: &[Prediction]) -> ScoredCohort {
    ScoredCohort::new(preds.iter().map(|p| Scored { y: p.label, score: p.margin, prob: p.prob }).collect())
}

fn read_table(path: &Path) -> CliResult<FeatureTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}; run features first", path.display()))
        .runtime()?;
    FeatureTable::from_csv(&text).runtime()
}

pub fn run_train(cfg: &PipelineConfig) -> CliResult<ClsReport> {
    let cohort = load_cohort(cfg)?;
    let split = split_for(cfg, &cohort)?;
    let table = read_table(&cfg.output_dir.join(FEATURES))?;
    let tag = |id: &str| split.tags.get(id).copied();
    let (_, xt, yt) = rows_for(&table, &cohort, |id| tag(id) == Some(SplitTag::Train));
    let (vid, xv, yv) = rows_for(&table, &cohort, |id| tag(id) == Some(SplitTag::Val));
    if xv.is_empty() {
        return Err(CliError::Runtime(anyhow!("validation split is empty")));
    }
    let (model, _) = train_gbm(&xt, &yt, &cfg.gbm, exec()).runtime()?;
    let margins: Vec<f64> = xv.iter().map(|r| model.predict_margin(r)).collect::<Result<_, _>>().runtime()?;
    let temperature = temperature_scale(&margins, &yv).unwrap_or_else(|e| {
        warn!("temperature scaling skipped: {e}");
        1.0
    });
    let threshold = select_threshold(&ScoredCohort::from_logits(&margins, &yv, temperature));
    let cal = Calibration { temperature, threshold };
    let preds = predict(&model, &vid, &xv, &yv, cal).runtime()?;
    let rep = report(&scored(&preds), threshold, temperature).runtime()?;

    let mdir = cfg.model_path();
    write_bytes(&mdir.join(MODEL_FILE), &fusion::serialize(&model), false).runtime()?;
    std::fs::copy(cfg.output_dir.join(STATS), mdir.join(STATS)).context("copying standardization stats").runtime()?;
    write_json(&mdir.join(CALIBRATION), &cal).runtime()?;
    let frozen = FrozenPipeline {
        preprocess: cfg.preprocess.clone(),
        radiomics: cfg.radiomics.clone(),
        feature_names: table.names.clone(),
    };
    write_json(&mdir.join(PIPELINE), &frozen).runtime()?;
    write_json(&cfg.output_dir.join("train_report.json"), &rep).runtime()?;
    write_predictions(&cfg.output_dir.join("val_predictions.csv"), &preds).runtime()?;
    info!("train: validation AUC {:?}, T = {temperature}, threshold = {threshold}", rep.roc_auc);
    Ok(rep)
}

// ------------------------------------------------------------------ crossval

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub brier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub seed: u64,
    pub threshold: f64,
    pub folds: Vec<FoldMetrics>,
    pub mean: MetricSummary,
    /// Sample standard deviation across folds.
    pub std: MetricSummary,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, s)
}

/// Per-fold standardization and training; metrics at the uncalibrated 0.5
/// threshold. Returns the report and out-of-fold predictions in row order.
pub fn crossval_table(
    table: &FeatureTable,
    y: &[u8],
    folds: &[usize],
    k: usize,
    gbm: &fusion::GbmConfig,
    seed: u64,
) -> Result<(CrossvalReport, Vec<Prediction>)> {
    let n = table.rows.len();
    let mut oof: Vec<Option<Prediction>> = vec![None; n];
    let mut metrics = Vec::with_capacity(k);
    for f in 0..k {
        let tr: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let va: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let stats = StandardizationStats::fit(&tr.iter().map(|&i| table.vector(i)).collect::<Vec<_>>())?;
        let prep = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
            idx.iter().map(|&i| Ok(stats.apply(&table.vector(i))?.values())).collect()
        };
        let (xt, xv) = (prep(&tr)?, prep(&va)?);
        let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
        let yv: Vec<u8> = va.iter().map(|&i| y[i]).collect();
        let (model, _) = train_gbm(&xt, &yt, gbm, exec())?;
        let ids: Vec<&str> = va.iter().map(|&i| table.rows[i].0.as_str()).collect();
        let preds = predict(&model, &ids, &xv, &yv, Calibration { temperature: 1.0, threshold: 0.5 })?;
        let sc = scored(&preds);
        let cm = confusion(&sc, 0.5);
        metrics.push(FoldMetrics {
            fold: f,
            n_train: tr.len(),
            n_val: va.len(),
            roc_auc: roc_auc(&sc).ok(),
            accuracy: basic_rates(&cm).accuracy,
            macro_f1: macro_f1(&cm),
            brier: brier(&sc)?,
        });
        for (&i, p) in va.iter().zip(preds) {
            oof[i] = Some(p);
        }
    }
    let col = |g: fn(&FoldMetrics) -> f64| mean_std(&metrics.iter().map(g).collect::<Vec<_>>());
    let aucs: Option<Vec<f64>> = metrics.iter().map(|m| m.roc_auc).collect();
    let auc = aucs.map(|a| mean_std(&a));
    let (acc, f1) = (col(|m| m.accuracy), col(|m| m.macro_f1));
    let rep = CrossvalReport {
        seed,
        threshold: 0.5,
        folds: metrics,
        mean: MetricSummary { roc_auc: auc.map(|a| a.0), accuracy: acc.0, macro_f1: f1.0 },
        std: MetricSummary { roc_auc: auc.map(|a| a.1), accuracy: acc.1, macro_f1: f1.1 },
    };
    Ok((rep, oof.into_iter().map(|p| p.expect("every row is in one fold")).collect()))
}

pub fn run_crossval(cfg: &PipelineConfig) -> CliResult<CrossvalReport> {
    let cohort = load_cohort(cfg)?;
    let all = read_table(&cfg.output_dir.join(FEATURES_RAW))?;
    let mut table = FeatureTable { names: all.names.clone(), rows: Vec::new() };
    let mut y = Vec::new();
    for (id, v) in &all.rows {
        if let Some(l) = cohort.label_of(id) {
            table.rows.push((id.clone(), v.clone()));
            y.push(l);
        }
    }
    let present = CohortTable {
        rows: cohort.rows.iter().filter(|r| table.rows.iter().any(|(id, _)| id == &r.subject_id)).cloned().collect(),
        excluded: 0,
    };
    let assign = kfold(&present, cfg.split.folds, cfg.split.seed).config()?;
    let folds: Vec<usize> = table.rows.iter().map(|(id, _)| assign.folds[id]).collect();
    let (rep, oof) = crossval_table(&table, &y, &folds, cfg.split.folds, &cfg.gbm, cfg.split.seed).runtime()?;
    write_json(&cfg.output_dir.join("crossval_report.json"), &rep).runtime()?;
    write_predictions(&cfg.output_dir.join("oof_predictions.csv"), &oof).runtime()?;
    info!("crossval: AUC {:?} +/- {:?}", rep.mean.roc_auc, rep.std.roc_auc);
    Ok(rep)
}

// ------------------------------------------------------------------ external

/// Scores an external cohort with a frozen model directory. Preprocessing
/// and radiomics parameters, standardization stats, temperature and
/// threshold all come from the model; nothing is refitted.
pub fn run_external(cfg: &PipelineConfig, model_dir: &Path) -> CliResult<(ClsReport, StageSummary)> {
    let frozen: FrozenPipeline = read_json(&model_dir.join(PIPELINE)).config()?;
    let cal: Calibration = read_json(&model_dir.join(CALIBRATION)).config()?;
    let stats_path = model_dir.join(STATS);
    let stats_hash = sha256_file(&stats_path).config()?;
    let stats = StandardizationStats::from_json(&std::fs::read_to_string(&stats_path).runtime()?).config()?;
    let model = fusion::deserialize(&std::fs::read(model_dir.join(MODEL_FILE)).config()?).config()?;

    let cohort = load_cohort(cfg)?;
    let mut summary = preprocess_cohort(cfg, &cohort, &frozen.preprocess)?;
    summary.computed.clear();
    summary.skipped.clear();
    let raw = extract_cohort(cfg, &cohort, &frozen.radiomics, &mut summary)?;
    if raw.names != frozen.feature_names {
        return Err(CliError::Config(anyhow!(
            "external features ({}) do not match the model's ({})",
            raw.names.len(),
            frozen.feature_names.len()
        )));
    }
    let table = standardize_table(&raw, &stats).runtime()?;
    let (ids, x, y) = rows_for(&table, &cohort, |_| true);
    let preds = predict(&model, &ids, &x, &y, cal).runtime()?;
    let rep = report(&scored(&preds), cal.threshold, cal.temperature).runtime()?;
    assert_eq!(
        sha256_file(&stats_path).runtime()?,
        stats_hash,
        "external mode must not modify the stored standardization stats"
    );
    let out = &cfg.output_dir;
    write_bytes(&out.join("external_features.csv"), table.to_csv().runtime()?.as_bytes(), false).runtime()?;
    write_json(&out.join("external_report.json"), &rep).runtime()?;
    write_predictions(&out.join("external_predictions.csv"), &preds).runtime()?;
    info!("external: AUC {:?} on {} subjects", rep.roc_auc, preds.len());
    Ok((rep, summary))
}

// -------------------------------------------------------------------- report

pub const REPORT_SETS: [&str; 3] = ["val", "oof", "external"];

/// `threshold,fpr,tpr` rows; the first threshold is written as `inf`.
pub fn roc_csv(preds: &[Prediction]) -> Result<String> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in roc_curve(&scored(preds))? {
        let t = if p.threshold.is_infinite() { "inf".to_string() } else { format_value(p.threshold) };
        out.push_str(&format!("{t},{},{}\n", format_value(p.fpr), format_value(p.tpr)));
    }
    Ok(out)
}

/// 2x2 matrix of the stored hard predictions.
pub fn confusion_csv(preds: &[Prediction]) -> String {
    let mut m = [[0u64; 2]; 2];
    for p in preds {
        m[p.label as usize][p.pred as usize] += 1;
    }
    format!(
        "actual,predicted_0,predicted_1\n0,{},{}\n1,{},{}\n",
        m[0][0], m[0][1], m[1][0], m[1][1]
    )
}

/// Writes ROC and confusion CSVs for every prediction set present and a
/// plain-text summary of the JSON reports. Returns the sets processed.
pub fn run_report(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let out = &cfg.output_dir;
    let mut done = Vec::new();
    let mut text = String::new();
    for name in REPORT_SETS {
        let path = out.join(format!("{name}_predictions.csv"));
        if !path.is_file() {
            continue;
        }
        let preds = read_predictions(&path).runtime()?;
        match roc_csv(&preds) {
            Ok(csv) => write_bytes(&out.join(format!("{name}_roc.csv")), csv.as_bytes(), false).runtime()?,
            Err(e) => warn!("{name}: no ROC curve ({e})"),
        }
        write_bytes(&out.join(format!("{name}_confusion.csv")), confusion_csv(&preds).as_bytes(), false).runtime()?;
        done.push(name.to_string());
    }
    for (name, file) in [("validation", "train_report.json"), ("external", "external_report.json")] {
        if let Ok(r) = read_json::<ClsReport>(&out.join(file)) {
            let auc = r.roc_auc.map_or("undefined".to_string(), |a| format!("{a:.4}"));
            text.push_str(&format!(
                "{name}: AUC {auc}, accuracy {:.4}, macro-F1 {:.4}, Brier {:.4}, T {:.4}, threshold {:.4}\n",
                r.accuracy, r.macro_f1, r.brier, r.temperature, r.threshold
            ));
        }
    }
    if let Ok(r) = read_json::<CrossvalReport>(&out.join("crossval_report.json")) {
        let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.4} +/- {s:.4}"),
            _ => "undefined".to_string(),
        };
        text.push_str(&format!(
            "crossval ({} folds): AUC {}, accuracy {:.4} +/- {:.4}, macro-F1 {:.4} +/- {:.4}\n",
            r.folds.len(),
            fmt(r.mean.roc_auc, r.std.roc_auc),
            r.mean.accuracy,
            r.std.accuracy,
            r.mean.macro_f1,
            r.std.macro_f1
        ));
    }
    if done.is_empty() && text.is_empty() {
        return Err(CliError::Runtime(anyhow!("nothing to report in {}", out.display())));
    }
    write_bytes(&out.join("summary.txt"), text.as_bytes(), false).runtime()?;
    print!("{text}");
    Ok(done)
}
