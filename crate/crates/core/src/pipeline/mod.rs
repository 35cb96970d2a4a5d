//! Declarative end-to-end runs.
//!
//! A run is a fixed sequence of stages. Each stage reads the persisted
//! output of the stages before it and writes its own files under
//! `<output_dir>/<stage>/`, so any stage can be rerun on its own. Files are
//! written as `<name>.partial` and renamed only when the whole stage
//! succeeds.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub use config::*;

use crate::alignment::{
    assign_system_message, curate_preferences, read_preferences, render_chat, write_jsonl, SystemPool,
};
use crate::dedup::{dedup_corpus, DocKey, Stages};
use crate::document::{read_documents, write_documents, Document, DocumentReader};
use crate::embedding::{init_new_embeddings, pad_to_multiple, EmbeddingMatrix, Role};
use crate::filters::{load_blacklist, load_word_list, write_drop_report, QualityFilter, Rule, FLUENCY_SCORE_KEY};
use crate::fluency::{train_ngram_lm, NGramLM};
use crate::io::{write_atomic, PartialFile};
use crate::parallel::{dedup_parallel, read_pairs, threshold_filter, write_pairs};
use crate::schedule::token_budget;
use crate::stats::corpus_stats;
use crate::tokenizer::{extend_vocab, fertility_counts, train_bpe, BpeTrainConfig, ExtendedVocab, Vocab};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config has {} error(s): {}", .0.iter().filter(|i| i.severity == Severity::Error).count(), first_error(.0))]
    Invalid(Vec<Issue>),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: StageName, message: String },
}

fn first_error(issues: &[Issue]) -> String {
    issues.iter().find(|i| i.severity == Severity::Error).map(|i| i.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    Filter,
    Fluency,
    DedupIntra,
    DedupCross,
    Parallel,
    Tokenizer,
    Fertility,
    Embedding,
    Plan,
    Alignment,
}

impl StageName {
    pub const ALL: [StageName; 11] = [
        StageName::Ingest,
        StageName::Filter,
        StageName::Fluency,
        StageName::DedupIntra,
        StageName::DedupCross,
        StageName::Parallel,
        StageName::Tokenizer,
        StageName::Fertility,
        StageName::Embedding,
        StageName::Plan,
        StageName::Alignment,
    ];

    /// Stages whose outputs are per-dataset document files.
    const DOCUMENT_STAGES: [StageName; 5] =
        [StageName::Ingest, StageName::Filter, StageName::Fluency, StageName::DedupIntra, StageName::DedupCross];

    /// Also the name of the stage's output directory.
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Filter => "filter",
            StageName::Fluency => "fluency",
            StageName::DedupIntra => "dedup_intra",
            StageName::DedupCross => "dedup_cross",
            StageName::Parallel => "parallel",
            StageName::Tokenizer => "tokenizer",
            StageName::Fertility => "fertility",
            StageName::Embedding => "embedding",
            StageName::Plan => "plan",
            StageName::Alignment => "alignment",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        StageName::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Per-purpose seed derived from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    xxh3_64_with_seed(label.as_bytes(), seed)
}

/// Counts are in the stage's own unit: documents, sentence pairs,
/// preference examples, embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageName,
    pub input: u64,
    pub kept: u64,
    pub dropped: u64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    pub fn stage(&self, stage: StageName) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Checks `input = kept + dropped` for every stage.
    pub fn check_conservation(&self) -> Result<(), String> {
        for s in &self.stages {
            if s.input != s.kept + s.dropped {
                return Err(format!("stage {}: input {} != kept {} + dropped {}", s.stage, s.input, s.kept, s.dropped));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub const RUN_REPORT_FILE: &str = "run_report.json";

impl PipelineConfig {
    pub fn stage_enabled(&self, stage: StageName) -> bool {
        match stage {
            StageName::Ingest => true,
            StageName::Filter => self.filter.enabled,
            StageName::Fluency => self.fluency.enabled,
            StageName::DedupIntra => self.dedup.enabled && self.dedup.stages != Stages::Cross,
            StageName::DedupCross => self.dedup.enabled && self.dedup.stages != Stages::Intra,
            StageName::Parallel => self.parallel.enabled,
            StageName::Tokenizer | StageName::Fertility => self.tokenizer.enabled,
            StageName::Embedding => self.embedding.enabled,
            StageName::Plan => self.plan.enabled,
            StageName::Alignment => self.alignment.enabled,
        }
    }

    pub fn enabled_stages(&self) -> Vec<StageName> {
        StageName::ALL.into_iter().filter(|s| self.stage_enabled(*s)).collect()
    }

    /// The document stage whose output feeds `stage`.
    fn document_source(&self, stage: StageName) -> StageName {
        StageName::DOCUMENT_STAGES
            .into_iter()
            .rfind(|s| *s < stage && self.stage_enabled(*s))
            .unwrap_or(StageName::Ingest)
    }

    fn final_documents(&self) -> StageName {
        self.document_source(StageName::Parallel)
    }
}

/// Validates, then runs every enabled stage in order and writes
/// `run_report.json` into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let report = run_stages(cfg, &cfg.enabled_stages())?;
    write_atomic(cfg.output_dir.join(RUN_REPORT_FILE), report.to_json().as_bytes())
        .map_err(|e| PipelineError::Config(format!("writing the run report: {e}")))?;
    Ok(report)
}

/// Validates, then runs the given stages from their persisted inputs.
pub fn run_stages(cfg: &PipelineConfig, stages: &[StageName]) -> Result<RunReport, PipelineError> {
    let issues = validate_config(cfg);
    for issue in &issues {
        match issue.severity {
            Severity::Warning => log::warn!("{issue}"),
            Severity::Error => log::error!("{issue}"),
        }
    }
    if has_errors(&issues) {
        return Err(PipelineError::Invalid(issues));
    }
    let run = || {
        let mut reports = Vec::new();
        for &stage in stages {
            let started = Instant::now();
            let report = run_stage(cfg, stage)?;
            log::info!(
                "{stage}: input {} kept {} dropped {} in {:.2?}",
                report.input,
                report.kept,
                report.dropped,
                started.elapsed()
            );
            reports.push(report);
        }
        Ok(RunReport { seed: cfg.seed, stages: reports })
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Runs one stage without validating the config.
pub fn run_stage(cfg: &PipelineConfig, stage: StageName) -> Result<StageReport, PipelineError> {
    let ctx = Ctx { cfg, out: &cfg.output_dir };
    let result = match stage {
        StageName::Ingest => ctx.ingest(),
        StageName::Filter => ctx.filter(),
        StageName::Fluency => ctx.fluency(),
        StageName::DedupIntra => ctx.dedup(StageName::DedupIntra, Stages::Intra),
        StageName::DedupCross => ctx.dedup(StageName::DedupCross, Stages::Cross),
        StageName::Parallel => ctx.parallel(),
        StageName::Tokenizer => ctx.tokenizer(),
        StageName::Fertility => ctx.fertility(),
        StageName::Embedding => ctx.embedding(),
        StageName::Plan => ctx.plan(),
        StageName::Alignment => ctx.alignment(),
    };
    result.map_err(|e| PipelineError::Stage { stage, message: format!("{e:#}") })
}

/// Files of one stage, staged under `.partial` names until [`Outputs::commit`].
struct Outputs {
    root: PathBuf,
    stage: StageName,
    files: Vec<(String, PartialFile)>,
}

impl Outputs {
    fn new(root: &Path, stage: StageName) -> anyhow::Result<Self> {
        let dir = root.join(stage.as_str());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { root: root.to_path_buf(), stage, files: Vec::new() })
    }

    fn file(&mut self, name: &str) -> anyhow::Result<&mut PartialFile> {
        let rel = format!("{}/{name}", self.stage.as_str());
        let f = PartialFile::create(self.root.join(&rel)).with_context(|| format!("creating {rel}"))?;
        self.files.push((rel, f));
        Ok(&mut self.files.last_mut().expect("just pushed").1)
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        self.file(name)?.write_all(bytes)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.bytes(name, s.as_bytes())
    }

    fn documents(&mut self, name: &str, docs: &[Document]) -> anyhow::Result<()> {
        write_documents(self.file(name)?, docs)?;
        Ok(())
    }

    fn commit(self) -> anyhow::Result<Vec<String>> {
        let mut names = Vec::with_capacity(self.files.len());
        for (rel, f) in self.files {
            f.commit().with_context(|| format!("committing {rel}"))?;
            names.push(rel);
        }
        Ok(names)
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
}

type Datasets = Vec<(String, Vec<Document>)>;

fn report(stage: StageName, input: usize, kept: usize, outputs: Vec<String>, details: Value) -> StageReport {
    StageReport { stage, input: input as u64, kept: kept as u64, dropped: (input - kept) as u64, outputs, details }
}

impl Ctx<'_> {
    fn dataset_file(&self, stage: StageName, name: &str) -> PathBuf {
        self.out.join(stage.as_str()).join(format!("{name}.jsonl"))
    }

    fn load_documents(&self, stage: StageName) -> anyhow::Result<Datasets> {
        self.cfg
            .datasets
            .par_iter()
            .map(|d| {
                let path = self.dataset_file(stage, &d.name);
                let docs = read_documents(&path).with_context(|| format!("reading {}", path.display()))?;
                Ok((d.name.clone(), docs))
            })
            .collect()
    }

    fn final_documents(&self) -> anyhow::Result<Vec<Document>> {
        Ok(self.load_documents(self.cfg.final_documents())?.into_iter().flat_map(|(_, d)| d).collect())
    }

    fn ingest(&self) -> anyhow::Result<StageReport> {
        let mut out = Outputs::new(self.out, StageName::Ingest)?;
        let mut total = 0;
        let mut per_dataset = BTreeMap::new();
        for d in &self.cfg.datasets {
            let reader = DocumentReader::open(&d.path).with_context(|| format!("opening {}", d.path.display()))?;
            let mut seen = HashSet::new();
            let mut docs = Vec::new();
            for doc in reader {
                let mut doc = doc.with_context(|| format!("reading {}", d.path.display()))?;
                if !seen.insert(doc.id.clone()) {
                    bail!("dataset {}: duplicate document id {:?}", d.name, doc.id);
                }
                doc.dataset = d.name.clone();
                doc.extraction = d.extraction;
                if doc.language.is_empty() {
                    if let Some(lang) = &d.language {
                        doc.language = lang.clone();
                    }
                }
                docs.push(doc);
            }
            total += docs.len();
            per_dataset.insert(d.name.clone(), docs.len());
            out.documents(&format!("{}.jsonl", d.name), &docs)?;
        }
        Ok(report(StageName::Ingest, total, total, out.commit()?, json!({ "documents": per_dataset })))
    }

    fn filter(&self) -> anyhow::Result<StageReport> {
        let settings = &self.cfg.filter;
        let mut rules = settings.rules.clone();
        rules.disabled_rules.insert(Rule::Fluency);
        if let Some(p) = &settings.bad_words_path {
            rules.bad_words.extend(load_word_list(p).with_context(|| format!("reading {}", p.display()))?);
        }
        if let Some(p) = &settings.url_blacklist_path {
            rules.url_blacklist.extend(load_blacklist(p).with_context(|| format!("reading {}", p.display()))?);
        }
        let filter = QualityFilter::new(rules)?;
        self.apply_filter(StageName::Filter, &filter, None)
    }

    fn fluency(&self) -> anyhow::Result<StageReport> {
        let source = self.cfg.document_source(StageName::Fluency);
        let mut extra = Vec::new();
        let lm = match &self.cfg.fluency.lm_path {
            Some(p) => NGramLM::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => {
                let datasets = self.load_documents(source)?;
                let train: Vec<Document> = datasets
                    .into_iter()
                    .filter(|(name, _)| self.cfg.fluency.train_datasets.contains(name))
                    .flat_map(|(_, d)| d)
                    .collect();
                let mut train_cfg = self.cfg.fluency.train.clone();
                train_cfg.seed = derive_seed(self.cfg.seed, "fluency");
                let lm = train_ngram_lm(&train, &train_cfg)?;
                extra.push(lm.to_bytes());
                lm
            }
        };
        log::info!("fluency model: order {}, reference entropy {:.4} bits", lm.order(), lm.h_ref());
        let mut rules = self.cfg.filter.rules.clone();
        rules.disabled_rules = Rule::ALL.into_iter().filter(|r| *r != Rule::Fluency).collect();
        rules.clean_pdf = false;
        let filter = QualityFilter::new(rules)?;
        let mut rep = self.apply_filter_with(StageName::Fluency, &filter, Some(&lm), |out| {
            if let Some(bytes) = extra.first() {
                out.bytes("model.nglm", bytes)?;
            }
            Ok(())
        })?;
        if let Value::Object(m) = &mut rep.details {
            m.insert("h_ref".into(), json!(lm.h_ref()));
        }
        Ok(rep)
    }

    fn apply_filter(&self, stage: StageName, filter: &QualityFilter, lm: Option<&NGramLM>) -> anyhow::Result<StageReport> {
        self.apply_filter_with(stage, filter, lm, |_| Ok(()))
    }

    fn apply_filter_with(
        &self,
        stage: StageName,
        filter: &QualityFilter,
        lm: Option<&NGramLM>,
        extra: impl FnOnce(&mut Outputs) -> anyhow::Result<()>,
    ) -> anyhow::Result<StageReport> {
        let datasets = self.load_documents(self.cfg.document_source(stage))?;
        let mut out = Outputs::new(self.out, stage)?;
        extra(&mut out)?;
        let (mut input, mut kept_total) = (0, 0);
        let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
        let mut per_dataset = BTreeMap::new();
        for (name, docs) in &datasets {
            let verdicts = filter.check_all(docs, lm);
            let kept: Vec<Document> = docs
                .par_iter()
                .zip(&verdicts)
                .filter(|(_, v)| v.keep)
                .map(|(d, v)| {
                    let mut d = d.clone();
                    if let Some(text) = &v.cleaned_text {
                        d.set_text(text);
                    }
                    if let (Some(f), false) = (v.fluency, d.scores.contains_key(FLUENCY_SCORE_KEY)) {
                        d.scores.insert(FLUENCY_SCORE_KEY.into(), f);
                    }
                    d
                })
                .collect();
            for v in verdicts.iter().filter(|v| !v.keep) {
                for r in &v.reasons {
                    *reasons.entry(r.as_str()).or_default() += 1;
                }
            }
            out.documents(&format!("{name}.jsonl"), &kept)?;
            write_drop_report(out.file(&format!("{name}.dropped.jsonl"))?, docs.iter().zip(&verdicts))?;
            input += docs.len();
            kept_total += kept.len();
            per_dataset.insert(name.clone(), json!({ "input": docs.len(), "kept": kept.len() }));
        }
        let details = json!({ "datasets": per_dataset, "drop_reasons": reasons });
        Ok(report(stage, input, kept_total, out.commit()?, details))
    }

    fn dedup(&self, stage: StageName, which: Stages) -> anyhow::Result<StageReport> {
        let datasets = self.load_documents(self.cfg.document_source(stage))?;
        let dcfg = self.cfg.effective_dedup();
        let outcome = dedup_corpus(&datasets, &dcfg, which)?;
        let rep = outcome.reports.first().ok_or_else(|| anyhow!("dedup produced no report"))?;
        let keys: Vec<DocKey> =
            datasets.iter().flat_map(|(n, docs)| docs.iter().map(|d| DocKey::new(n.clone(), d.id.clone()))).collect();
        rep.check_partition(&keys).map_err(|e| anyhow!("dedup report is not a partition: {e}"))?;
        let mut out = Outputs::new(self.out, stage)?;
        let mut per_dataset = BTreeMap::new();
        for ((name, docs), keep) in datasets.iter().zip(&outcome.keep) {
            let kept: Vec<Document> = docs.iter().zip(keep).filter(|(_, k)| **k).map(|(d, _)| d.clone()).collect();
            per_dataset.insert(name.clone(), json!({ "input": docs.len(), "kept": kept.len() }));
            out.documents(&format!("{name}.jsonl"), &kept)?;
        }
        out.bytes("clusters.jsonl", rep.clusters_jsonl().as_bytes())?;
        let (bands, rows) = dcfg.banding();
        let details = json!({
            "datasets": per_dataset,
            "clusters": rep.clusters.len(),
            "bands": bands,
            "rows": rows,
            "skip_intra": dcfg.skip_intra,
        });
        Ok(report(stage, keys.len(), rep.kept.len(), out.commit()?, details))
    }

    fn parallel(&self) -> anyhow::Result<StageReport> {
        let p = &self.cfg.parallel;
        let mut pairs = Vec::new();
        for path in &p.inputs {
            pairs.extend(read_pairs(path).with_context(|| format!("reading {}", path.display()))?);
        }
        let input = pairs.len();
        let (kept, dedup_report, below_threshold) = match p.order {
            ParallelOrder::FilterThenDedup => {
                let filtered = threshold_filter(&pairs, &p.filter);
                let below = input - filtered.len();
                let (kept, rep) = dedup_parallel(&filtered);
                (kept, rep, below)
            }
            ParallelOrder::DedupThenFilter => {
                let (unique, rep) = dedup_parallel(&pairs);
                let kept = threshold_filter(&unique, &p.filter);
                let below = unique.len() - kept.len();
                (kept, rep, below)
            }
        };
        let mut out = Outputs::new(self.out, StageName::Parallel)?;
        write_pairs(out.file("pairs.jsonl")?, &kept)?;
        let details = json!({ "order": p.order, "below_threshold": below_threshold, "dedup": dedup_report });
        out.json("report.json", &details)?;
        Ok(report(StageName::Parallel, input, kept.len(), out.commit()?, details))
    }

    fn in_languages(&self, docs: Vec<Document>) -> Vec<Document> {
        docs.into_iter().filter(|d| self.cfg.tokenizer.languages.contains(&d.language)).collect()
    }

    fn tokenizer(&self) -> anyhow::Result<StageReport> {
        let t = &self.cfg.tokenizer;
        let base = match (&t.base_vocab_path, &t.base_train_path) {
            (Some(p), _) => ExtendedVocab::load(p).with_context(|| format!("loading {}", p.display()))?.base,
            (None, Some(p)) => {
                let docs = read_documents(p).with_context(|| format!("reading {}", p.display()))?;
                let cfg = BpeTrainConfig {
                    target_new_tokens: t.base_merges,
                    seed: derive_seed(self.cfg.seed, "tokenizer.base"),
                    ..t.train.clone()
                };
                train_bpe(&docs, &cfg)
            }
            (None, None) => Vocab::byte_level(),
        };
        let docs = self.in_languages(self.final_documents()?);
        if docs.is_empty() {
            bail!("no documents in languages {:?} to train on", t.languages);
        }
        let cfg = BpeTrainConfig { seed: derive_seed(self.cfg.seed, "tokenizer"), ..t.train.clone() };
        let learned = train_bpe(&docs, &cfg);
        let ext = extend_vocab(&base, &learned);
        let mut out = Outputs::new(self.out, StageName::Tokenizer)?;
        out.bytes("base.json", base.to_json().as_bytes())?;
        out.bytes("learned.json", learned.to_json().as_bytes())?;
        out.bytes("extended.json", ext.to_json().as_bytes())?;
        let details = json!({
            "base_size": base.len(),
            "learned_merges": learned.merges.len(),
            "added_tokens": ext.added_tokens.len(),
            "total_size": ext.total_size(),
        });
        Ok(report(StageName::Tokenizer, docs.len(), docs.len(), out.commit()?, details))
    }

    fn extended_vocab(&self) -> anyhow::Result<ExtendedVocab> {
        let path = self.out.join(StageName::Tokenizer.as_str()).join("extended.json");
        ExtendedVocab::load(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn fertility(&self) -> anyhow::Result<StageReport> {
        let ext = self.extended_vocab()?;
        let docs = self.in_languages(self.final_documents()?);
        let base_counts = fertility_counts(ext.base.encoder(), &docs);
        let ext_counts = fertility_counts(ext.encoder(), &docs);
        let details = json!({
            "languages": self.cfg.tokenizer.languages,
            "documents": docs.len(),
            "words": base_counts.words,
            "base_tokens": base_counts.tokens,
            "extended_tokens": ext_counts.tokens,
            "base_fertility": base_counts.ratio()?,
            "extended_fertility": ext_counts.ratio()?,
        });
        let mut out = Outputs::new(self.out, StageName::Fertility)?;
        out.json("report.json", &details)?;
        Ok(report(StageName::Fertility, docs.len(), docs.len(), out.commit()?, details))
    }

    fn embedding(&self) -> anyhow::Result<StageReport> {
        let e = &self.cfg.embedding;
        let ext = self.extended_vocab()?;
        let mut out = Outputs::new(self.out, StageName::Embedding)?;
        let mut details = serde_json::Map::new();
        let mut rows = 0;
        for (role, path, name) in [
            (Role::InputEmbeddings, &e.input_matrix_path, "input_embeddings"),
            (Role::LmHead, &e.lm_head_path, "lm_head"),
        ] {
            let base = match path {
                Some(p) => EmbeddingMatrix::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => synthetic_matrix(ext.base.len(), e.dims, role, derive_seed(self.cfg.seed, name)),
            };
            let grown = init_new_embeddings(&base, &ext)?;
            let padded = pad_to_multiple(&grown, e.pad_multiple);
            padded.write_to(out.file(&format!("{name}.emb"))?)?;
            rows = grown.rows;
            details.insert(
                name.into(),
                json!({ "base_rows": base.rows, "rows": grown.rows, "padded_rows": padded.rows, "dims": padded.dims }),
            );
        }
        Ok(report(StageName::Embedding, rows, rows, out.commit()?, Value::Object(details)))
    }

    fn plan(&self) -> anyhow::Result<StageReport> {
        let plans = &self.cfg.plan.plans;
        let vocab = if self.cfg.tokenizer.enabled {
            self.extended_vocab()?
        } else {
            ExtendedVocab::new(Vocab::byte_level(), Vec::new())?
        };
        let mut docs = self.final_documents()?;
        if self.cfg.parallel.enabled {
            let path = self.out.join(StageName::Parallel.as_str()).join("pairs.jsonl");
            let pairs = read_pairs(&path).with_context(|| format!("reading {}", path.display()))?;
            docs.extend(
                pairs.iter().enumerate().map(|(i, p)| {
                    Document::new(format!("pair-{i}"), format!("{}\n{}", p.src, p.tgt)).with_dataset("parallel")
                }),
            );
        }
        let stats = corpus_stats(&docs, &vocab);
        let mut out = Outputs::new(self.out, StageName::Plan)?;
        let mut budgets = BTreeMap::new();
        for plan in [&plans.stage1, &plans.stage2] {
            out.bytes(&format!("{}.json", plan.name), plan.to_json().as_bytes())?;
            out.bytes(&format!("{}_lr.csv", plan.name), plan.lr_csv().as_bytes())?;
            budgets.insert(plan.name.clone(), token_budget(plan, stats.total_tokens)?);
        }
        out.json("corpus_stats.json", &stats)?;
        out.json("budget.json", &budgets)?;
        let details = json!({ "total_tokens": stats.total_tokens, "budgets": budgets });
        Ok(report(StageName::Plan, docs.len(), docs.len(), out.commit()?, details))
    }

    fn alignment(&self) -> anyhow::Result<StageReport> {
        let a = &self.cfg.alignment;
        let input = a.input.as_ref().ok_or_else(|| anyhow!("no alignment input"))?;
        let examples = read_preferences(input).with_context(|| format!("reading {}", input.display()))?;
        let (curated, curation) = curate_preferences(&examples, &a.curation);
        let curated = match &a.system_pool_path {
            Some(p) => {
                let pool: SystemPool = serde_json::from_str(
                    &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                )
                .with_context(|| format!("parsing {}", p.display()))?;
                let seed = derive_seed(self.cfg.seed, "alignment");
                curated.iter().map(|ex| assign_system_message(ex, &pool, seed)).collect::<Result<Vec<_>, _>>()?
            }
            None => curated,
        };
        let rendered: Vec<_> = curated.iter().map(|ex| render_chat(ex, &a.template)).collect();
        let mut out = Outputs::new(self.out, StageName::Alignment)?;
        write_jsonl(out.file("curated.jsonl")?, &curated)?;
        write_jsonl(out.file("rendered.jsonl")?, &rendered)?;
        out.json("curation_report.json", &curation)?;
        let details = serde_json::to_value(&curation)?;
        Ok(report(StageName::Alignment, curation.input, curation.kept, out.commit()?, details))
    }
}

/// Deterministic stand-in for a pretrained matrix, uniform in [-0.1, 0.1).
pub fn synthetic_matrix(rows: usize, dims: usize, role: Role, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dims).map(|_| rng.random_range(-0.1f32..0.1)).collect();
    EmbeddingMatrix::new(rows, dims, data, role).expect("finite values of the right shape")
}
