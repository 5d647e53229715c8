//! Run configuration: JSON checked against the published schema, then
//! deserialized with unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chivi::model::CsvSchema;
use chivi::oracle::{HmcConfig, OracleMethod, Quadrature};
use chivi::{KernelParams, OptimizerConfig};
use serde::{Deserialize, Serialize};

/// The published JSON Schema for run configs.
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sandwich,
    ProbitBench,
    GpBench,
    Cox,
    PropertySuite,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sandwich => "sandwich",
            Self::ProbitBench => "probit_bench",
            Self::GpBench => "gp_bench",
            Self::Cox => "cox",
            Self::PropertySuite => "property_suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Used when `--out` is not given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// The run seed (or one derived from it) replaces `optimizer.seed`.
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Settings for the KLVI fits; `optimizer` when absent.
    #[serde(default)]
    pub klvi_optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub gp_grid: GpGrid,
    #[serde(default)]
    pub cox: CoxSettings,
    #[serde(default)]
    pub property_suite: SuiteSettings,
    #[serde(default)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    ConjugateGaussian {
        prior_mean: Vec<f64>,
        prior_var: Vec<f64>,
        noise_var: f64,
        /// One row of length `D` per observation.
        #[serde(default)]
        data: Vec<Vec<f64>>,
    },
    Probit {
        data: DataSource,
        #[serde(default = "one")]
        prior_var: f64,
        #[serde(default = "yes")]
        intercept: bool,
        #[serde(default = "yes")]
        standardize: bool,
    },
    GpClassification {
        data: DataSource,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Cox {
        source: CoxSource,
        kernel: KernelParams,
    },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        /// Name used in result tables; defaults to the file stem.
        #[serde(default)]
        name: Option<String>,
        label_column: String,
        #[serde(default)]
        feature_columns: Option<Vec<String>>,
        label_map: BTreeMap<String, f64>,
    },
    Synthetic(SyntheticData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub generator: SyntheticKind,
    pub points: usize,
    pub features: usize,
    /// Half-gap between classes along the separating direction.
    #[serde(default = "one")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Linearly separable with an empty slab of width `2·margin`.
    Separable,
    /// Two Gaussian clusters at `±margin` along every axis.
    TwoClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CoxSource {
    Synthetic {
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
        /// `(x0, x1, y0, y1)` region whose counts are thinned.
        #[serde(default)]
        scarce_region: Option<(f64, f64, f64, f64)>,
        /// Keep probability inside `scarce_region`.
        #[serde(default = "tenth")]
        keep: f64,
    },
    Shots {
        path: PathBuf,
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
    },
}

fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub method: OracleMethod,
    pub quadrature: Quadrature,
    pub hmc: HmcConfig,
    /// Directory for cached oracle results; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            method: OracleMethod::Quadrature,
            quadrature: Quadrature::default(),
            hmc: HmcConfig::default(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Splits {
    pub train_fraction: f64,
    pub num_repeats: usize,
    /// Cross-validation folds for the GP benchmark.
    pub folds: usize,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            num_repeats: 10,
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpGrid {
    pub signal_variance: Vec<f64>,
    pub lengthscale: Vec<f64>,
    /// Share of each training fold held out to score grid points.
    pub holdout_fraction: f64,
    /// Kernel jitter as a multiple of the signal variance.
    pub jitter_ratio: f64,
    /// Start CHIVI from the KLVI fit instead of the optimizer's init.
    pub chivi_warm_start: bool,
}

impl Default for GpGrid {
    fn default() -> Self {
        Self {
            signal_variance: vec![1.0, 4.0],
            lengthscale: vec![1.0, 3.0],
            holdout_fraction: 0.2,
            jitter_ratio: 1e-6,
            chivi_warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoxSettings {
    /// Start CHIVI from the KLVI fit instead of the optimizer's init.
    pub chivi_warm_start: bool,
    /// Halve the HMC step and rerun when acceptance falls below this.
    pub min_acceptance: f64,
    pub max_hmc_retries: usize,
}

impl Default for CoxSettings {
    fn default() -> Self {
        Self {
            chivi_warm_start: true,
            min_acceptance: 0.4,
            max_hmc_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSettings {
    /// Random 1-D models for the tightness check.
    pub tightness_models: usize,
    /// Random (model, q) pairs for the sandwich and monotonicity checks.
    pub sandwich_pairs: usize,
    pub orders: Vec<f64>,
    /// Draws for the importance-sampling variance check.
    pub is_samples: usize,
    /// Independent estimates per importance-sampling configuration.
    pub is_replicates: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            tightness_models: 3,
            sandwich_pairs: 10,
            orders: vec![1.5, 2.0, 3.0, 4.0],
            is_samples: 2000,
            is_replicates: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negate every quadrature CUBO value seen by the property suite.
    CuboSignFlip,
}

/// Checks `value` against [`SCHEMA`], reporting every violation with its
/// JSON path.
pub fn check_schema(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).context("parsing the bundled schema")?;
    let validator = jsonschema::validator_for(&schema).context("compiling the bundled schema")?;
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| {
            let at = e.instance_path().to_string();
            if at.is_empty() {
                e.to_string()
            } else {
                format!("{at}: {e}")
            }
        })
        .collect();
    if !errors.is_empty() {
        bail!("config does not match the schema:\n  {}", errors.join("\n  "));
    }
    Ok(())
}

impl RunConfig {
    pub fn klvi_settings(&self) -> &OptimizerConfig {
        self.klvi_optimizer.as_ref().unwrap_or(&self.optimizer)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
        check_schema(&value)?;
        let cfg: RunConfig = serde_json::from_value(value).context("config does not match RunConfig")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, schema-checks and validates a config, resolving relative data
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.model {
            Some(ModelSpec::Probit { data, .. } | ModelSpec::GpClassification { data, .. }) => {
                if let DataSource::Csv { path, .. } = data {
                    fix(path);
                }
            }
            Some(ModelSpec::Cox {
                source: CoxSource::Shots { path, .. },
                ..
            }) => fix(path),
            _ => {}
        }
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if let Some(k) = &self.klvi_optimizer {
            k.validate()?;
        }
        self.oracle.hmc.validate()?;
        let s = &self.splits;
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            bail!("splits.train_fraction must lie in (0, 1), got {}", s.train_fraction);
        }
        if s.num_repeats == 0 {
            bail!("splits.num_repeats must be at least 1");
        }
        let needs = |what: &str| -> Result<()> {
            bail!("experiment `{}` needs a `{what}` model section", self.experiment.name())
        };
        match (self.experiment, &self.model) {
            (ExperimentKind::Sandwich, None) => needs("model")?,
            (ExperimentKind::ProbitBench, m) if !matches!(m, Some(ModelSpec::Probit { .. })) => needs("probit")?,
            (ExperimentKind::GpBench, m) if !matches!(m, Some(ModelSpec::GpClassification { .. })) => {
                needs("gp_classification")?
            }
            (ExperimentKind::Cox, m) if !matches!(m, Some(ModelSpec::Cox { .. })) => needs("cox")?,
            _ => {}
        }
        if self.experiment == ExperimentKind::GpBench {
            if s.folds < 2 {
                bail!("splits.folds must be at least 2");
            }
            let g = &self.gp_grid;
            if g.signal_variance.is_empty() || g.lengthscale.is_empty() {
                bail!("gp_grid needs at least one signal_variance and one lengthscale");
            }
            for &sv in &g.signal_variance {
                for &ls in &g.lengthscale {
                    KernelParams::new(sv, ls)?;
                }
            }
            if !(g.holdout_fraction > 0.0 && g.holdout_fraction < 1.0) {
                bail!("gp_grid.holdout_fraction must lie in (0, 1)");
            }
            if !(g.jitter_ratio >= 0.0 && g.jitter_ratio.is_finite()) {
                bail!("gp_grid.jitter_ratio must be a finite non-negative number");
            }
        }
        if let Some(ModelSpec::Cox { kernel, source }) = &self.model {
            kernel.validate()?;
            if let CoxSource::Synthetic { keep, .. } = source {
                if !(0.0..=1.0).contains(keep) {
                    bail!("cox keep probability must lie in [0, 1], got {keep}");
                }
            }
        }
        if let Some(ModelSpec::Probit {
            data: DataSource::Synthetic(s),
            ..
        }
        | ModelSpec::GpClassification {
            data: DataSource::Synthetic(s),
            ..
        }) = &self.model
        {
            if s.points < 2 || s.features == 0 {
                bail!("synthetic data needs at least 2 points and 1 feature");
            }
        }
        Ok(())
    }

    /// Files the run will read.
    pub fn input_files(&self) -> Vec<PathBuf> {
        match &self.model {
            Some(ModelSpec::Probit {
                data: DataSource::Csv { path, .. },
                ..
            })
            | Some(ModelSpec::GpClassification {
                data: DataSource::Csv { path, .. },
                ..
            }) => vec![path.clone()],
            Some(ModelSpec::Cox {
                source: CoxSource::Shots { path, .. },
                ..
            }) => vec![path.clone()],
            _ => Vec::new(),
        }
    }

    pub fn check_inputs(&self) -> Result<()> {
        for path in self.input_files() {
            if !path.is_file() {
                bail!("input file {} does not exist", path.display());
            }
        }
        Ok(())
    }

    /// Applies the paper-scale overrides and returns a warning per change.
    pub fn apply_paper_scale(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        match self.experiment {
            ExperimentKind::ProbitBench => {
                self.splits.num_repeats = 50;
                notes.push("paper scale: 50 random splits per dataset; expect roughly 5x the desk runtime".into());
            }
            ExperimentKind::GpBench => {
                self.splits.folds = 10;
                notes.push("paper scale: full 10-fold CV with grid search; dense GP cost grows as N³".into());
            }
            ExperimentKind::Cox => {
                if let Some(ModelSpec::Cox { source, .. }) = &mut self.model {
                    let (nx, ny) = match source {
                        CoxSource::Synthetic { nx, ny, .. } | CoxSource::Shots { nx, ny, .. } => (nx, ny),
                    };
                    *nx = 25;
                    *ny = 20;
                }
                notes.push("paper scale: 25x20 Cox grid (500 latents); HMC and CHIVI take several times longer".into());
            }
            ExperimentKind::Sandwich | ExperimentKind::PropertySuite => {}
        }
        notes
    }
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            Self::Csv { name: Some(n), .. } => n.clone(),
            Self::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()),
            Self::Synthetic(s) => match s.generator {
                SyntheticKind::Separable => "synthetic_separable".into(),
                SyntheticKind::TwoClusters => "synthetic_clusters".into(),
            },
        }
    }

    pub fn csv_schema(&self) -> Option<CsvSchema> {
        match self {
            Self::Csv {
                label_column,
                feature_columns,
                label_map,
                ..
            } => Some(CsvSchema {
                label_column: label_column.clone(),
                feature_columns: feature_columns.clone(),
                label_map: label_map.clone(),
            }),
            Self::Synthetic(_) => None,
        }
    }
}
