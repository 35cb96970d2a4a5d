//! MinHash LSH near-deduplication, run in two stages: first within each
//! dataset, then across the concatenated survivors.

mod cache;
mod lsh;
mod minhash;
mod union_find;

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;

pub use cache::{read_signature_cache, write_signature_cache, SignatureCache};
pub use lsh::{cluster, collision_probability, false_negative_area, false_positive_area, optimal_bands};
pub use minhash::{estimate_jaccard, exact_jaccard_sorted, shingle, shingle_hashes, MinHasher, Signature};
pub use union_find::UnionFind;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("signatures differ in length or seed")]
    SignatureMismatch,
    #[error("invalid dedup config: {0}")]
    Config(String),
    #[error("signature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub shingle_n: usize,
    pub num_perm: usize,
    pub jaccard_threshold: f64,
    /// Banding; both `None` means [`optimal_bands`] picks them.
    pub bands: Option<usize>,
    pub rows: Option<usize>,
    pub seed: u64,
    pub verify_candidates: bool,
    /// Datasets that skip the within-dataset stage.
    pub skip_intra: BTreeSet<String>,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            shingle_n: 5,
            num_perm: 128,
            jaccard_threshold: 0.8,
            bands: None,
            rows: None,
            seed: 0,
            verify_candidates: false,
            skip_intra: BTreeSet::new(),
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        let err = |m: &str| Err(DedupError::Config(m.to_string()));
        if self.shingle_n == 0 {
            return err("shingle_n must be at least 1");
        }
        if self.num_perm == 0 {
            return err("num_perm must be at least 1");
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold < 1.0) {
            return err("jaccard_threshold must be in (0, 1)");
        }
        match (self.bands, self.rows) {
            (None, None) => Ok(()),
            (Some(b), Some(r)) if b >= 1 && r >= 1 && b * r <= self.num_perm => Ok(()),
            (Some(_), Some(_)) => err("bands * rows must be positive and at most num_perm"),
            _ => err("bands and rows must be given together"),
        }
    }

    pub fn banding(&self) -> (usize, usize) {
        match (self.bands, self.rows) {
            (Some(b), Some(r)) => (b, r),
            _ => optimal_bands(self.num_perm, self.jaccard_threshold),
        }
    }

    pub fn hasher(&self) -> MinHasher {
        MinHasher::new(self.num_perm, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Intra,
    Cross,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Intra => "intra",
            Stage::Cross => "cross",
        })
    }
}

/// Which stages to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stages {
    Intra,
    Cross,
    #[default]
    Both,
}

impl std::str::FromStr for Stages {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intra" => Ok(Stages::Intra),
            "cross" => Ok(Stages::Cross),
            "both" => Ok(Stages::Both),
            other => Err(format!("unknown stage {other:?}; expected intra, cross or both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocKey {
    pub dataset: String,
    pub id: String,
}

impl DocKey {
    pub fn new(dataset: impl Into<String>, id: impl Into<String>) -> Self {
        Self { dataset: dataset.into(), id: id.into() }
    }
}

impl fmt::Display for DocKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.id)
    }
}

/// Outcome of one stage. `kept` and `removed` list documents in ingestion
/// order; each cluster lists its members in ingestion order and its first
/// member is the one kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub stage: Stage,
    pub clusters: Vec<Vec<DocKey>>,
    pub kept: Vec<DocKey>,
    pub removed: Vec<DocKey>,
}

impl DedupReport {
    /// Checks that kept and removed partition `input` and that each cluster
    /// keeps exactly one member.
    pub fn check_partition(&self, input: &[DocKey]) -> Result<(), String> {
        let kept: BTreeSet<&DocKey> = self.kept.iter().collect();
        let removed: BTreeSet<&DocKey> = self.removed.iter().collect();
        let all: BTreeSet<&DocKey> = input.iter().collect();
        if kept.len() != self.kept.len() || removed.len() != self.removed.len() {
            return Err("duplicate entries in kept or removed".into());
        }
        if kept.intersection(&removed).next().is_some() {
            return Err("kept and removed overlap".into());
        }
        if kept.union(&removed).copied().collect::<BTreeSet<_>>() != all {
            return Err("kept and removed do not cover the input".into());
        }
        for c in &self.clusters {
            let n = c.iter().filter(|k| kept.contains(k)).count();
            if n != 1 {
                return Err(format!("cluster starting at {} keeps {n} members", c[0]));
            }
        }
        Ok(())
    }

    /// One JSON line per cluster: `{"stage", "kept", "removed"}`.
    pub fn clusters_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.clusters {
            let line = serde_json::json!({ "stage": self.stage, "kept": c[0], "removed": &c[1..] });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Signatures and (when verifying) shingle-hash sets for one document list.
#[derive(Debug, Clone, Default)]
pub struct Sketches {
    pub signatures: Vec<Signature>,
    pub shingle_sets: Option<Vec<Vec<u64>>>,
}

pub fn sketch_documents(docs: &[Document], cfg: &DedupConfig) -> Sketches {
    let hasher = cfg.hasher();
    if cfg.verify_candidates {
        let (signatures, sets): (Vec<_>, Vec<_>) = docs
            .par_iter()
            .map(|d| {
                let set = shingle_hashes(&d.text, cfg.shingle_n, cfg.seed);
                (hasher.signature_of_hashes(&set), set)
            })
            .unzip();
        Sketches { signatures, shingle_sets: Some(sets) }
    } else {
        let signatures = docs.par_iter().map(|d| hasher.signature_of_text(&d.text, cfg.shingle_n)).collect();
        Sketches { signatures, shingle_sets: None }
    }
}

fn run_stage(
    stage: Stage,
    keys: &[DocKey],
    sigs: &[&Signature],
    sets: Option<Vec<&[u64]>>,
    cfg: &DedupConfig,
) -> (DedupReport, Vec<bool>) {
    let (b, r) = cfg.banding();
    let groups = match &sets {
        Some(sets) => cluster(sigs, b, r, Some((sets.as_slice(), cfg.jaccard_threshold))),
        None => cluster::<_, &[u64]>(sigs, b, r, None),
    };
    let mut keep = vec![true; keys.len()];
    for g in &groups {
        for &m in &g[1..] {
            keep[m] = false;
        }
    }
    let clusters = groups.iter().map(|g| g.iter().map(|&i| keys[i].clone()).collect()).collect();
    let kept = keys.iter().zip(&keep).filter(|(_, &k)| k).map(|(d, _)| d.clone()).collect();
    let removed = keys.iter().zip(&keep).filter(|(_, &k)| !k).map(|(d, _)| d.clone()).collect();
    (DedupReport { stage, clusters, kept, removed }, keep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    /// One report per stage that ran, in order.
    pub reports: Vec<DedupReport>,
    /// Per dataset, per document: survived every stage that ran.
    pub keep: Vec<Vec<bool>>,
}

impl DedupOutcome {
    pub fn report(&self, stage: Stage) -> Option<&DedupReport> {
        self.reports.iter().find(|r| r.stage == stage)
    }
}

/// Two-stage deduplication over named datasets.
pub fn dedup_corpus(datasets: &[(String, Vec<Document>)], cfg: &DedupConfig, stages: Stages) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;
    let sketches: Vec<Sketches> = datasets.iter().map(|(_, docs)| sketch_documents(docs, cfg)).collect();
    dedup_sketched(datasets, &sketches, cfg, stages)
}

/// Same as [`dedup_corpus`] with precomputed sketches (one per dataset, in order).
pub fn dedup_sketched(
    datasets: &[(String, Vec<Document>)],
    sketches: &[Sketches],
    cfg: &DedupConfig,
    stages: Stages,
) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;
    if sketches.len() != datasets.len()
        || sketches.iter().zip(datasets).any(|(s, (_, d))| s.signatures.len() != d.len())
    {
        return Err(DedupError::Config("sketches do not match datasets".into()));
    }
    if cfg.verify_candidates && sketches.iter().any(|s| s.shingle_sets.is_none()) {
        return Err(DedupError::Config("verification needs shingle sets".into()));
    }
    if sketches.iter().flat_map(|s| &s.signatures).any(|s| s.num_perm() != cfg.num_perm || s.seed != cfg.seed) {
        return Err(DedupError::SignatureMismatch);
    }
    let keys: Vec<Vec<DocKey>> = datasets
        .iter()
        .map(|(name, docs)| docs.iter().map(|d| DocKey::new(name.clone(), d.id.clone())).collect())
        .collect();
    let mut keep: Vec<Vec<bool>> = datasets.iter().map(|(_, d)| vec![true; d.len()]).collect();
    let mut reports = Vec::new();

    if stages != Stages::Cross {
        let mut merged = DedupReport { stage: Stage::Intra, clusters: vec![], kept: vec![], removed: vec![] };
        for (i, (name, _)) in datasets.iter().enumerate() {
            if cfg.skip_intra.contains(name) {
                merged.kept.extend(keys[i].iter().cloned());
                continue;
            }
            let sigs: Vec<&Signature> = sketches[i].signatures.iter().collect();
            let sets = sketches[i].shingle_sets.as_ref().map(|s| s.iter().map(Vec::as_slice).collect());
            let (report, mask) = run_stage(Stage::Intra, &keys[i], &sigs, sets, cfg);
            merged.clusters.extend(report.clusters);
            merged.kept.extend(report.kept);
            merged.removed.extend(report.removed);
            keep[i] = mask;
        }
        reports.push(merged);
    }

    if stages != Stages::Intra {
        let mut positions = Vec::new();
        for (i, mask) in keep.iter().enumerate() {
            positions.extend(mask.iter().enumerate().filter(|(_, &k)| k).map(|(j, _)| (i, j)));
        }
        let stage_keys: Vec<DocKey> = positions.iter().map(|&(i, j)| keys[i][j].clone()).collect();
        let sigs: Vec<&Signature> = positions.iter().map(|&(i, j)| &sketches[i].signatures[j]).collect();
        let sets = cfg.verify_candidates.then(|| {
            positions.iter().map(|&(i, j)| sketches[i].shingle_sets.as_ref().expect("checked")[j].as_slice()).collect()
        });
        let (report, mask) = run_stage(Stage::Cross, &stage_keys, &sigs, sets, cfg);
        for (&(i, j), k) in positions.iter().zip(mask) {
            keep[i][j] = k;
        }
        reports.push(report);
    }

    Ok(DedupOutcome { reports, keep })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(name: &str, texts: &[&str]) -> (String, Vec<Document>) {
        (name.to_string(), texts.iter().enumerate().map(|(i, t)| Document::new(format!("{name}{i}"), t)).collect())
    }

    const A: &str = "το γρήγορο καφέ αλεπού πηδά πάνω από το τεμπέλικο σκυλί κάθε πρωί";
    const B: &str = "a completely different sentence about the weather in athens this spring";

    #[test]
    fn exact_duplicate_removed_within_dataset() {
        let data = [ds("web", &[A, B, A])];
        let out = dedup_corpus(&data, &DedupConfig::default(), Stages::Both).unwrap();
        let intra = out.report(Stage::Intra).unwrap();
        assert_eq!(intra.removed, vec![DocKey::new("web", "web2")]);
        assert_eq!(intra.clusters, vec![vec![DocKey::new("web", "web0"), DocKey::new("web", "web2")]]);
        assert_eq!(out.keep, vec![vec![true, true, false]]);
    }

    #[test]
    fn cross_dataset_duplicate_removed_at_stage_two() {
        let data = [ds("wiki", &[A]), ds("web", &[B, A])];
        let out = dedup_corpus(&data, &DedupConfig::default(), Stages::Both).unwrap();
        assert!(out.report(Stage::Intra).unwrap().removed.is_empty());
        assert_eq!(out.report(Stage::Cross).unwrap().removed, vec![DocKey::new("web", "web1")]);
        for r in &out.reports {
            let input: Vec<DocKey> = if r.stage == Stage::Intra {
                data.iter().flat_map(|(n, d)| d.iter().map(move |x| DocKey::new(n.clone(), x.id.clone()))).collect()
            } else {
                r.kept.iter().chain(&r.removed).cloned().collect()
            };
            r.check_partition(&input).unwrap();
        }
    }

    #[test]
    fn skipped_dataset_keeps_its_duplicates_until_cross_stage() {
        let data = [ds("clean", &[A, A])];
        let cfg = DedupConfig { skip_intra: BTreeSet::from(["clean".to_string()]), ..Default::default() };
        let out = dedup_corpus(&data, &cfg, Stages::Intra).unwrap();
        assert_eq!(out.keep, vec![vec![true, true]]);
        let out = dedup_corpus(&data, &cfg, Stages::Both).unwrap();
        assert_eq!(out.keep, vec![vec![true, false]]);
    }

    #[test]
    fn empty_documents_are_never_clustered() {
        let data = [ds("x", &["", "  ", ""])];
        let out = dedup_corpus(&data, &DedupConfig::default(), Stages::Both).unwrap();
        assert_eq!(out.keep, vec![vec![true; 3]]);
    }

    #[test]
    fn config_validation() {
        assert!(DedupConfig { bands: Some(20), rows: Some(7), ..Default::default() }.validate().is_err());
        assert!(DedupConfig { bands: Some(16), rows: None, ..Default::default() }.validate().is_err());
        assert!(DedupConfig { jaccard_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(DedupConfig { bands: Some(16), rows: Some(8), ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn verified_mode_rejects_low_similarity_collisions() {
        // one band of one row: any shared minimum collides
        let cfg = DedupConfig { bands: Some(1), rows: Some(1), num_perm: 1, verify_candidates: true, shingle_n: 1, ..Default::default() };
        let data = [ds("x", &["a b c d e f g h", "a"])];
        let out = dedup_corpus(&data, &cfg, Stages::Intra).unwrap();
        assert_eq!(out.keep, vec![vec![true, true]]);
    }
}
