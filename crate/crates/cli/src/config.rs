use anyhow::{bail, Context, Result};
use mgmt_core::fusion::GbmConfig;
use mgmt_core::preprocess::PreprocessParams;
use mgmt_core::radiomics::RadiomicsParams;
use mgmt_core::CohortColumns;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    pub ratio: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self { ratio: 0.8, folds: 5, seed: 42 }
    }
}

/// Pipeline configuration. Every field has a default, so `{}` is a valid
/// file. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Labels per subject; defaults to `<data_dir>/cohort.csv`.
    pub cohort_csv: Option<PathBuf>,
    pub cohort_columns: CohortColumns,
    /// Optional `subject_id,<values...>` CSV of external CNN embeddings.
    pub embeddings_csv: Option<PathBuf>,
    /// Frozen model directory for `external`; defaults to
    /// `<output_dir>/model`.
    pub model_dir: Option<PathBuf>,
    pub preprocess: PreprocessParams,
    pub radiomics: RadiomicsParams,
    pub gbm: GbmConfig,
    pub split: SplitParams,
    /// Worker threads for subject-level parallelism; 0 means all cores.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("output"),
            cohort_csv: None,
            cohort_columns: CohortColumns::default(),
            embeddings_csv: None,
            model_dir: None,
            preprocess: PreprocessParams::default(),
            radiomics: RadiomicsParams::default(),
            gbm: GbmConfig::default(),
            split: SplitParams::default(),
            jobs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.cache_dir);
        fix(&mut self.output_dir);
        for p in [&mut self.cohort_csv, &mut self.embeddings_csv, &mut self.model_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.split.ratio;
        if !(r > 0.0 && r < 1.0) {
            bail!("split ratio must lie in (0, 1), got {r}");
        }
        if self.split.folds < 2 {
            bail!("need at least 2 folds, got {}", self.split.folds);
        }
        if self.preprocess.grid.contains(&0) {
            bail!("grid dimensions must be positive");
        }
        if !(self.radiomics.bin_width > 0.0) {
            bail!("bin width must be positive");
        }
        if self.gbm.max_depth == 0 || !(self.gbm.learning_rate > 0.0) {
            bail!("gbm needs max_depth >= 1 and a positive learning rate");
        }
        Ok(())
    }

    pub fn cohort_path(&self) -> PathBuf {
        self.cohort_csv.clone().unwrap_or_else(|| self.data_dir.join("cohort.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| self.output_dir.join("model"))
    }
}
