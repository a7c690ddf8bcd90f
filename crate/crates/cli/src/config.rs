//! Run configuration: a TOML file with sections, overridable per key from the
//! command line.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sigdim::boruta::BorutaParams;
use sigdim::embedding::TrainParams;
use sigdim::explain::KeywordRanking;
use sigdim::forest::ForestParams;
use sigdim::ingest::DocFormat;
use sigdim::predict::{FeatureTransform, Grid, TargetTransform};
use sigdim::select::{BoundRule, CcfSelectParams, CombineMode};
use sigdim::series::{LagRule, LeadCriterion, Sidedness};
use sigdim::synth::SynthSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stochastic stage; section-level seeds are overwritten.
    pub seed: u64,
    /// Embedding training, transforms and selection only see data up to
    /// `predict.train_end`.
    pub strict_prospective: bool,
    pub paths: Paths,
    pub window: Window,
    pub ingest: IngestConfig,
    pub preprocess: PreprocessConfig,
    pub embedding: TrainParams,
    pub transform: TransformConfig,
    pub selection: SelectionConfig,
    pub predict: PredictConfig,
    pub explain: ExplainConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            strict_prospective: true,
            paths: Paths::default(),
            window: Window::default(),
            ingest: IngestConfig::default(),
            preprocess: PreprocessConfig::default(),
            embedding: TrainParams::default(),
            transform: TransformConfig::default(),
            selection: SelectionConfig::default(),
            predict: PredictConfig::default(),
            explain: ExplainConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub documents: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
    /// A precomputed `date,filled,d0,...` matrix; text stages are skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub day_matrix: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            documents: None,
            counts: None,
            day_matrix: None,
            lemma_table: None,
            stopwords: None,
            run_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Window {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub strict: bool,
    pub allow_corrections: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<DocFormat>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub keep_hashtag_words: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub rolling_window: usize,
    /// Regression features.
    pub features: FeatureTransform,
    /// Regression target.
    pub target: TargetTransform,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            rolling_window: 3,
            features: FeatureTransform::Raw,
            target: TargetTransform::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorutaFeatures {
    #[default]
    RollingVariance,
    Diff1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub max_lag: usize,
    pub alpha: f64,
    pub bound: BoundRule,
    pub lag_rule: LagRule,
    pub sided: Sidedness,
    pub run_boruta: bool,
    pub boruta_features: BorutaFeatures,
    pub keep_tentative: bool,
    pub combine: CombineMode,
    pub boruta: BorutaParams,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        let ccf = CcfSelectParams::default();
        SelectionConfig {
            max_lag: ccf.max_lag,
            alpha: ccf.alpha,
            bound: ccf.bound,
            lag_rule: ccf.criterion.lag_rule,
            sided: ccf.criterion.sided,
            run_boruta: true,
            boruta_features: BorutaFeatures::default(),
            keep_tentative: false,
            combine: CombineMode::Intersection,
            boruta: BorutaParams::default(),
        }
    }
}

impl SelectionConfig {
    pub fn ccf_params(&self) -> CcfSelectParams {
        CcfSelectParams {
            max_lag: self.max_lag,
            alpha: self.alpha,
            bound: self.bound,
            criterion: LeadCriterion {
                lag_rule: self.lag_rule,
                sided: self.sided,
            },
        }
    }
}

/// Which selected set a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Ccf,
    Boruta,
    Combined,
}

impl SetKind {
    pub fn name(self) -> &'static str {
        match self {
            SetKind::Ccf => "ccf",
            SetKind::Boruta => "boruta",
            SetKind::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub leads: Vec<usize>,
    pub train_end: NaiveDate,
    pub n_trees: Vec<usize>,
    /// 0 means unlimited.
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: usize,
    /// Features per split; 0 means a third of the columns.
    pub mtry: usize,
    pub sets: Vec<SetKind>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        let grid = Grid::default();
        PredictConfig {
            leads: vec![15, 30],
            train_end: NaiveDate::from_ymd_opt(2021, 4, 15).expect("valid date"),
            n_trees: grid.n_trees,
            max_depth: grid.max_depth.iter().map(|d| d.unwrap_or(0)).collect(),
            min_samples_leaf: 1,
            mtry: 0,
            sets: vec![SetKind::Ccf, SetKind::Boruta, SetKind::Combined],
        }
    }
}

impl PredictConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            n_trees: self.n_trees.clone(),
            max_depth: self.max_depth.iter().map(|&d| (d > 0).then_some(d)).collect(),
        }
    }

    pub fn forest_base(&self) -> ForestParams {
        ForestParams {
            min_samples_leaf: self.min_samples_leaf,
            mtry: (self.mtry > 0).then_some(self.mtry),
            ..ForestParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub k: usize,
    pub top_m: usize,
    pub ranking: KeywordRanking,
    /// Set whose dimensions are explained; sets other than `ccf` use the
    /// first lead.
    pub set: SetKind,
    /// Sample documents shown per dimension in the Markdown table.
    pub samples: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            k: 30,
            top_m: 20,
            ranking: KeywordRanking::Frequency,
            set: SetKind::Combined,
            samples: 3,
        }
    }
}

/// Parse `section.key=value`; the value is read as a TOML literal when it is
/// one and as a string otherwise.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not of the form key=value"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut value = value;
    dates_to_strings(&mut value);
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} is malformed"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override key {key:?}: {part} is not a section"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// TOML date literals become strings, the form dates deserialize from.
fn dates_to_strings(v: &mut toml::Value) {
    match v {
        toml::Value::Datetime(d) => *v = toml::Value::String(d.to_string()),
        toml::Value::Array(a) => a.iter_mut().for_each(dates_to_strings),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| dates_to_strings(v)),
        _ => {}
    }
}

impl RunConfig {
    /// Load the optional config file and apply overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut root = match path {
            Some(p) => {
                let body = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", p.display())]))?;
                toml::from_str::<toml::Table>(&body)
                    .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?
            }
            None => toml::Table::new(),
        };
        root.iter_mut().for_each(|(_, v)| dates_to_strings(v));
        let mut errors = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut root, o) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    pub fn propagate_seed(&mut self) {
        self.embedding.seed = self.seed;
        self.selection.boruta.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn uses_day_matrix(&self) -> bool {
        self.paths.day_matrix.is_some()
    }

    /// Every violation, for stages that read the input files.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        let mut need_file = |name: &str, p: &Option<PathBuf>, required: bool| match p {
            Some(p) if !p.is_file() => errors.push(format!("paths.{name}: {} does not exist", p.display())),
            None if required => errors.push(format!("paths.{name} is required")),
            _ => {}
        };
        need_file("counts", &self.paths.counts, true);
        need_file("documents", &self.paths.documents, !self.uses_day_matrix());
        need_file("day_matrix", &self.paths.day_matrix, false);
        need_file("lemma_table", &self.paths.lemma_table, false);
        need_file("stopwords", &self.paths.stopwords, false);
        self.validate_params(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors))
        }
    }

    fn validate_params(&self, errors: &mut Vec<String>) {
        if let (Some(s), Some(e)) = (self.window.start, self.window.end) {
            if e < s {
                errors.push(format!("window.end {e} precedes window.start {s}"));
            }
        }
        if let Some(s) = self.window.start {
            if self.predict.train_end < s {
                errors.push(format!("predict.train_end {} precedes window.start {s}", self.predict.train_end));
            }
        }
        if let Some(e) = self.window.end {
            if self.predict.train_end >= e {
                errors.push(format!("predict.train_end {} leaves no holdout before window.end {e}", self.predict.train_end));
            }
        }
        if !self.uses_day_matrix() {
            if let Err(e) = self.embedding.validate() {
                errors.push(format!("embedding: {e}"));
            }
        }
        if self.transform.rolling_window < 2 {
            errors.push("transform.rolling_window must be >= 2".into());
        }
        if let Err(e) = self.selection.ccf_params().validate() {
            errors.push(format!("selection: {e}"));
        }
        if self.selection.run_boruta {
            if let Err(e) = self.selection.boruta.validate() {
                errors.push(format!("selection.boruta: {e}"));
            }
        }
        if self.predict.leads.is_empty() {
            errors.push("predict.leads must not be empty".into());
        }
        if self.predict.leads.contains(&0) {
            errors.push("predict.leads must all be >= 1".into());
        }
        if self.predict.n_trees.is_empty() || self.predict.max_depth.is_empty() {
            errors.push("predict.n_trees and predict.max_depth must not be empty".into());
        }
        if self.predict.n_trees.contains(&0) {
            errors.push("predict.n_trees must all be >= 1".into());
        }
        if self.predict.min_samples_leaf == 0 {
            errors.push("predict.min_samples_leaf must be >= 1".into());
        }
        if self.predict.sets.is_empty() {
            errors.push("predict.sets must not be empty".into());
        }
        if !self.selection.run_boruta && self.predict.sets.iter().any(|&s| s != SetKind::Ccf) {
            errors.push("predict.sets names boruta or combined sets but selection.run_boruta is false".into());
        }
        if self.explain.k == 0 {
            errors.push("explain.k must be >= 1".into());
        }
    }

    /// Parameters only, for stages that read run-directory artifacts.
    pub fn validate_params_only(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        self.validate_params(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors))
        }
    }
}
