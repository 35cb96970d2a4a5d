use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{ChatTemplate, CurationConfig};
use crate::dedup::{DedupConfig, Stages};
use crate::document::Extraction;
use crate::filters::{FilterConfig, Rule};
use crate::fluency::LmTrainConfig;
use crate::parallel::ParallelFilterConfig;
use crate::schedule::{builtin_plans, Plans};
use crate::tokenizer::BpeTrainConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInput {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub pre_deduplicated: bool,
    #[serde(default)]
    pub extraction: Extraction,
    /// Filled into documents that carry no language code.
    #[serde(default)]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub enabled: bool,
    pub bad_words_path: Option<PathBuf>,
    pub url_blacklist_path: Option<PathBuf>,
    #[serde(flatten)]
    pub rules: FilterConfig,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { enabled: true, bad_words_path: None, url_blacklist_path: None, rules: FilterConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluencySettings {
    pub enabled: bool,
    /// Pretrained model; when absent the model is trained on `train_datasets`.
    pub lm_path: Option<PathBuf>,
    pub train_datasets: Vec<String>,
    pub train: LmTrainConfig,
}

impl Default for FluencySettings {
    fn default() -> Self {
        Self { enabled: true, lm_path: None, train_datasets: Vec::new(), train: LmTrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupSettings {
    pub enabled: bool,
    pub stages: Stages,
    #[serde(flatten)]
    pub config: DedupConfig,
}

impl Default for DedupSettings {
    fn default() -> Self {
        Self { enabled: true, stages: Stages::Both, config: DedupConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelOrder {
    #[default]
    FilterThenDedup,
    DedupThenFilter,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelSettings {
    pub enabled: bool,
    pub inputs: Vec<PathBuf>,
    pub order: ParallelOrder,
    #[serde(flatten)]
    pub filter: ParallelFilterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSettings {
    pub enabled: bool,
    /// Base vocabulary file. Without one, a base is trained on
    /// `base_train_path`, or the plain byte-level vocabulary is used.
    pub base_vocab_path: Option<PathBuf>,
    pub base_train_path: Option<PathBuf>,
    pub base_merges: usize,
    /// Documents in these languages train the new merges and are used for
    /// the fertility report.
    pub languages: BTreeSet<String>,
    #[serde(flatten)]
    pub train: BpeTrainConfig,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            base_vocab_path: None,
            base_train_path: None,
            base_merges: 8000,
            languages: BTreeSet::from(["el".to_string()]),
            train: BpeTrainConfig { target_new_tokens: 8000, ..BpeTrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub enabled: bool,
    /// Base input-embedding and output-head matrices. Missing matrices are
    /// synthesized from the seed with `dims` columns.
    pub input_matrix_path: Option<PathBuf>,
    pub lm_head_path: Option<PathBuf>,
    pub dims: usize,
    pub pad_multiple: usize,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self { enabled: true, input_matrix_path: None, lm_head_path: None, dims: 64, pad_multiple: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSettings {
    pub enabled: bool,
    pub plans: Plans,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { enabled: true, plans: builtin_plans() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentSettings {
    pub enabled: bool,
    pub input: Option<PathBuf>,
    /// JSON object mapping category to a list of system messages.
    pub system_pool_path: Option<PathBuf>,
    pub curation: CurationConfig,
    pub template: ChatTemplate,
}

impl Default for AlignmentSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            input: None,
            system_pool_path: None,
            curation: CurationConfig::default(),
            template: ChatTemplate::default(),
        }
    }
}

/// Everything a run needs. Relative input paths are resolved against the
/// config file's directory by [`PipelineConfig::load`]; `output_dir` is
/// taken as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetInput>,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub fluency: FluencySettings,
    #[serde(default)]
    pub dedup: DedupSettings,
    #[serde(default)]
    pub parallel: ParallelSettings,
    #[serde(default)]
    pub tokenizer: TokenizerSettings,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub plan: PlanSettings,
    #[serde(default)]
    pub alignment: AlignmentSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(json).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&json)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Joins every relative input path onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.path);
        }
        fix_opt(&mut self.filter.bad_words_path);
        fix_opt(&mut self.filter.url_blacklist_path);
        fix_opt(&mut self.fluency.lm_path);
        self.parallel.inputs.iter_mut().for_each(fix);
        fix_opt(&mut self.tokenizer.base_vocab_path);
        fix_opt(&mut self.tokenizer.base_train_path);
        fix_opt(&mut self.embedding.input_matrix_path);
        fix_opt(&mut self.embedding.lm_head_path);
        fix_opt(&mut self.alignment.input);
        fix_opt(&mut self.alignment.system_pool_path);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetInput> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Dedup settings with the run seed and the pre-deduplicated datasets applied.
    pub fn effective_dedup(&self) -> DedupConfig {
        let mut cfg = self.dedup.config.clone();
        cfg.seed = super::derive_seed(self.seed, "dedup");
        cfg.skip_intra.extend(self.datasets.iter().filter(|d| d.pre_deduplicated).map(|d| d.name.clone()));
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{s}: {}: {}", self.field, self.message)
    }
}

pub fn has_errors(issues: &[Issue]) -> bool {
    issues.iter().any(|i| i.severity == Severity::Error)
}

struct Issues(Vec<Issue>);

impl Issues {
    fn error(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Issue { severity: Severity::Error, field: field.into(), message: message.into() });
    }

    fn warn(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Issue { severity: Severity::Warning, field: field.into(), message: message.into() });
    }

    fn file(&mut self, field: &str, path: &Path) {
        if !path.is_file() {
            self.error(field, format!("file {} does not exist", path.display()));
        }
    }
}

/// Structural and cross-field checks. Any issue of [`Severity::Error`]
/// blocks a run.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<Issue> {
    let mut out = Issues(Vec::new());
    if cfg.threads == Some(0) {
        out.error("threads", "must be at least 1");
    }
    if cfg.datasets.is_empty() {
        out.error("datasets", "at least one input dataset is required");
    }
    let mut names = BTreeSet::new();
    for (i, d) in cfg.datasets.iter().enumerate() {
        let field = format!("datasets[{i}]");
        if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.starts_with('.') {
            out.error(&field, format!("dataset name {:?} is not usable as a file name", d.name));
        }
        if !names.insert(d.name.as_str()) {
            out.error(&field, format!("dataset name {:?} is used twice", d.name));
        }
        out.file(&format!("{field}.path"), &d.path);
    }

    let f = &cfg.filter;
    if f.enabled {
        if let Err(e) = f.rules.validate() {
            out.error("filter", e.to_string());
        }
        match &f.bad_words_path {
            Some(p) if f.rules.enabled(Rule::BadWords) => out.file("filter.bad_words_path", p),
            None if f.rules.enabled(Rule::BadWords) && f.rules.bad_words.is_empty() => {
                out.warn("filter.bad_words_path", "bad-word rule is on but no word list is given")
            }
            _ => {}
        }
        match &f.url_blacklist_path {
            Some(p) if f.rules.enabled(Rule::UrlBlacklist) => out.file("filter.url_blacklist_path", p),
            None if f.rules.enabled(Rule::UrlBlacklist) && f.rules.url_blacklist.is_empty() => {
                out.warn("filter.url_blacklist_path", "URL blacklist rule is on but no blacklist is given")
            }
            _ => {}
        }
    }

    let fl = &cfg.fluency;
    if fl.enabled {
        if !(0.0..=1.0).contains(&f.rules.fluency_threshold) {
            out.error("filter.fluency_threshold", "must be in [0, 1]");
        }
        if !f.rules.enabled(Rule::Fluency) {
            out.warn("fluency", "fluency stage is enabled but the fluency rule is disabled");
        }
        match &fl.lm_path {
            Some(p) => out.file("fluency.lm_path", p),
            None if fl.train_datasets.is_empty() => {
                out.error("fluency", "fluency is enabled but there is neither lm_path nor train_datasets")
            }
            None => {}
        }
        for name in &fl.train_datasets {
            if cfg.dataset(name).is_none() {
                out.error("fluency.train_datasets", format!("unknown dataset {name:?}"));
            }
        }
        if fl.train.order < 2 || fl.train.order > 8 {
            out.error("fluency.train.order", format!("order must be in 2..=8, got {}", fl.train.order));
        }
    }

    if cfg.dedup.enabled {
        if let Err(e) = cfg.dedup.config.validate() {
            out.error("dedup", e.to_string());
        }
        for name in &cfg.dedup.config.skip_intra {
            if cfg.dataset(name).is_none() {
                out.error("dedup.skip_intra", format!("unknown dataset {name:?}"));
            }
        }
    }

    let p = &cfg.parallel;
    if p.enabled {
        if p.inputs.is_empty() {
            out.error("parallel.inputs", "parallel stage is enabled but has no inputs");
        }
        for (i, path) in p.inputs.iter().enumerate() {
            out.file(&format!("parallel.inputs[{i}]"), path);
        }
    }

    let t = &cfg.tokenizer;
    if t.enabled {
        if let Some(path) = &t.base_vocab_path {
            out.file("tokenizer.base_vocab_path", path);
            if t.base_train_path.is_some() {
                out.warn("tokenizer.base_train_path", "ignored because base_vocab_path is set");
            }
        } else if let Some(path) = &t.base_train_path {
            out.file("tokenizer.base_train_path", path);
        }
        if t.train.target_new_tokens == 0 {
            out.warn("tokenizer.target_new_tokens", "no new tokens will be learned");
        }
        if t.languages.is_empty() {
            out.error("tokenizer.languages", "at least one language is needed to train merges");
        }
    }

    let e = &cfg.embedding;
    if e.enabled {
        if !t.enabled {
            out.error("embedding", "embedding surgery needs the tokenizer stage");
        }
        if e.dims == 0 {
            out.error("embedding.dims", "must be positive");
        }
        if e.pad_multiple == 0 {
            out.error("embedding.pad_multiple", "must be positive");
        }
        if let Some(p) = &e.input_matrix_path {
            out.file("embedding.input_matrix_path", p);
        }
        if let Some(p) = &e.lm_head_path {
            out.file("embedding.lm_head_path", p);
        }
    }

    if cfg.plan.enabled {
        for (name, plan) in [("plan.stage1", &cfg.plan.plans.stage1), ("plan.stage2", &cfg.plan.plans.stage2)] {
            if let Err(err) = plan.validate() {
                out.error(name, err.to_string());
            }
        }
    }

    let a = &cfg.alignment;
    if a.enabled {
        match &a.input {
            Some(p) => out.file("alignment.input", p),
            None => out.error("alignment.input", "alignment is enabled but has no input"),
        }
        match &a.system_pool_path {
            Some(p) => out.file("alignment.system_pool_path", p),
            None => out.warn("alignment.system_pool_path", "examples without a system message keep an empty one"),
        }
        if let Err(err) = a.template.validate() {
            out.error("alignment.template", err.to_string());
        }
        if !(0.0..=1.0).contains(&a.curation.max_foreign_ratio) {
            out.error("alignment.curation.max_foreign_ratio", "must be in [0, 1]");
        }
    }
    out.0
}
