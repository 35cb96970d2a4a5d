use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use corpus_forge::alignment::orpo_loss;
use corpus_forge::dedup::{dedup_corpus, DedupConfig, DocKey, Stage, Stages};
use corpus_forge::document::{Document, Extraction};
use corpus_forge::embedding::{append_mean_rows, pad_to_multiple, EmbeddingMatrix, Role};
use corpus_forge::fluency::{document_fluency, score_from_entropy, train_ngram_lm, LmTrainConfig, NGramLM};
use corpus_forge::schedule::{lr_at, ScheduleConfig};
use corpus_forge::synth::{CorpusGenerator, DatasetSpec, Language};
use corpus_forge::tokenizer::{extend_vocab, fertility, train_bpe, BpeTrainConfig, ExtendedVocab};

fn clean_docs(language: Language, n: usize, seed: u64) -> Vec<Document> {
    let spec = DatasetSpec {
        exact_dup_rate: 0.0,
        near_dup_rate: 0.0,
        defect_rate: 0.0,
        ..DatasetSpec::new("props", language, Extraction::Structured, n)
    };
    CorpusGenerator::new(seed).dataset(&spec, 0)
}

fn lm() -> &'static NGramLM {
    static LM: OnceLock<NGramLM> = OnceLock::new();
    LM.get_or_init(|| {
        let cfg = LmTrainConfig { order: 4, ..LmTrainConfig::default() };
        train_ngram_lm(&clean_docs(Language::Greek, 150, 1), &cfg).unwrap()
    })
}

/// An English base vocabulary and its extension with Greek merges.
fn vocabs() -> &'static (ExtendedVocab, ExtendedVocab) {
    static V: OnceLock<(ExtendedVocab, ExtendedVocab)> = OnceLock::new();
    V.get_or_init(|| {
        let cfg = BpeTrainConfig { target_new_tokens: 300, ..BpeTrainConfig::default() };
        let base = train_bpe(&clean_docs(Language::English, 150, 2), &cfg);
        let learned = train_bpe(&clean_docs(Language::Greek, 150, 3), &cfg);
        let ext = extend_vocab(&base, &learned);
        (ExtendedVocab::from(base), ext)
    })
}

fn mixed_text() -> impl Strategy<Value = String> {
    "[a-zA-Zα-ωάέήίόύώ0-9 ,.!\n]{0,120}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fluency_score_is_bounded_and_decreasing(h_ref in 0.1f64..8.0, h1 in 0.0f64..20.0, h2 in 0.0f64..20.0) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let (s_lo, s_hi) = (score_from_entropy(h_ref, lo), score_from_entropy(h_ref, hi));
        prop_assert!((0.0..=1.0).contains(&s_lo) && (0.0..=1.0).contains(&s_hi));
        prop_assert!(s_hi <= s_lo);
    }

    #[test]
    fn document_fluency_is_bounded(text in mixed_text()) {
        if let Some(s) = document_fluency(lm(), &text) {
            prop_assert!((0.0..=1.0).contains(&s), "{s}");
        }
    }

    #[test]
    fn paragraph_order_does_not_change_document_fluency(
        paras in proptest::collection::vec("[α-ω ]{1,60}", 1..6),
        rotate in 0usize..6,
    ) {
        let mut rotated = paras.clone();
        rotated.rotate_left(rotate % paras.len());
        let a = document_fluency(lm(), &paras.join("\n\n"));
        let b = document_fluency(lm(), &rotated.join("\n\n"));
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn fertility_is_at_least_one(texts in proptest::collection::vec("[a-zα-ω]{1,12}( [a-zα-ω]{1,12}){0,10}", 1..5)) {
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(i.to_string(), t)).collect();
        let (base, ext) = vocabs();
        prop_assert!(fertility(base, &docs).unwrap() >= 1.0);
        prop_assert!(fertility(ext, &docs).unwrap() >= 1.0);
    }

    #[test]
    fn extension_never_adds_tokens(text in mixed_text()) {
        let (base, ext) = vocabs();
        prop_assert!(ext.encode(&text).len() <= base.encode(&text).len());
    }

    #[test]
    fn base_ids_are_stable_when_no_added_merge_fires(text in mixed_text()) {
        let (base, ext) = vocabs();
        let ids = ext.encode(&text);
        if ids.iter().all(|&id| (id as usize) < base.total_size()) {
            prop_assert_eq!(ids, base.encode(&text));
        }
    }

    #[test]
    fn mean_rows_preserve_base_and_stay_in_envelope(
        rows in 1usize..12,
        dims in 1usize..6,
        seed_values in proptest::collection::vec(-100.0f32..100.0, 72),
        sources in proptest::collection::vec(proptest::collection::vec(0u32..12, 1..5), 0..10),
        multiple in 1usize..9,
    ) {
        let data: Vec<f32> = seed_values.iter().cycle().take(rows * dims).copied().collect();
        let base = EmbeddingMatrix::new(rows, dims, data.clone(), Role::InputEmbeddings).unwrap();
        let sources: Vec<Vec<u32>> = sources.into_iter().map(|s| s.into_iter().map(|i| i % rows as u32).collect()).collect();
        let grown = append_mean_rows(&base, rows, &sources).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&grown.data[..rows * dims]), bits(&data));
        for (k, src) in sources.iter().enumerate() {
            for col in 0..dims {
                let vals = src.iter().map(|&i| base.row(i as usize)[col]);
                let lo = vals.clone().fold(f32::INFINITY, f32::min);
                let hi = vals.fold(f32::NEG_INFINITY, f32::max);
                let v = grown.row(rows + k)[col];
                prop_assert!(lo <= v && v <= hi, "{v} outside [{lo}, {hi}]");
            }
        }
        let padded = pad_to_multiple(&grown, multiple);
        prop_assert_eq!(padded.rows % multiple, 0);
        prop_assert!(padded.rows >= grown.rows && padded.rows < grown.rows + multiple);
        prop_assert_eq!(bits(&padded.data[..grown.data.len()]), bits(&grown.data));
    }

    #[test]
    fn or_term_is_positive(
        chosen in proptest::collection::vec(-30.0f64..-1e-6, 1..8),
        rejected in proptest::collection::vec(-30.0f64..-1e-6, 1..8),
        lambda in 0.0f64..2.0,
    ) {
        let out = orpo_loss(&chosen, &rejected, lambda).unwrap();
        prop_assert!(out.or_term > 0.0, "{out:?}");
    }

    #[test]
    fn schedule_starts_at_zero_and_peaks_at_warmup_end(total in 20u64..4000, w in 0.01f64..0.5, plateau in 0.0f64..0.4) {
        let warmup = ((total as f64 * w) as u64).max(1);
        let cfg = ScheduleConfig { total_steps: total, warmup_steps: warmup, lr_peak: 3e-4, lr_min: 3e-5, plateau_frac: plateau };
        prop_assume!(cfg.validate().is_ok());
        prop_assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
        let max = (0..=total).map(|s| lr_at(s, &cfg).unwrap()).fold(0.0, f64::max);
        prop_assert_eq!(max, cfg.lr_peak);
        prop_assert_eq!(lr_at(warmup, &cfg).unwrap(), cfg.lr_peak);
    }
}

// Fixtures of disjoint clusters: near copies of one random text per cluster,
// with no vocabulary shared across clusters.

fn cluster_fixture(clusters: &[usize], seed: u64) -> Vec<(String, Vec<Document>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut datasets = vec![("x".to_string(), Vec::new()), ("y".to_string(), Vec::new())];
    for (c, &size) in clusters.iter().enumerate() {
        let words: Vec<String> = (0..80).map(|i| format!("c{c}w{i}r{}", rng.random::<u16>())).collect();
        for m in 0..size {
            let mut text = words.clone();
            // edits at either end touch a single shingle
            if m > 0 {
                text[if m % 2 == 1 { 79 } else { 0 }] = format!("c{c}m{m}");
            }
            let ds = rng.random_range(0..2);
            let id = format!("c{c}m{m}");
            datasets[ds].1.push(Document::new(id, text.join(" ")));
        }
    }
    datasets
}

fn removed(outcome: &corpus_forge::dedup::DedupOutcome) -> BTreeSet<DocKey> {
    outcome.reports.iter().flat_map(|r| r.removed.iter().cloned()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dedup_is_thread_count_invariant(clusters in proptest::collection::vec(1usize..4, 1..8), seed in any::<u64>()) {
        let data = cluster_fixture(&clusters, seed);
        let cfg = DedupConfig::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
                .install(|| dedup_corpus(&data, &cfg, Stages::Both).unwrap())
        };
        prop_assert_eq!(run(1), run(4));
    }

    #[test]
    fn reports_partition_their_input(clusters in proptest::collection::vec(1usize..4, 1..8), seed in any::<u64>()) {
        let data = cluster_fixture(&clusters, seed);
        let keys: Vec<DocKey> = data.iter().flat_map(|(n, d)| d.iter().map(|x| DocKey::new(n.clone(), x.id.clone()))).collect();
        let outcome = dedup_corpus(&data, &DedupConfig::default(), Stages::Both).unwrap();
        let intra = outcome.report(Stage::Intra).unwrap();
        intra.check_partition(&keys).map_err(TestCaseError::fail)?;
        outcome.report(Stage::Cross).unwrap().check_partition(&intra.kept).map_err(TestCaseError::fail)?;
        // one survivor per planted cluster
        prop_assert_eq!(outcome.keep.iter().flatten().filter(|&&k| k).count(), clusters.len());
    }

    #[test]
    fn removing_a_document_only_affects_its_cluster(
        clusters in proptest::collection::vec(1usize..4, 2..8),
        seed in any::<u64>(),
        pick in any::<prop::sample::Index>(),
    ) {
        let data = cluster_fixture(&clusters, seed);
        let cfg = DedupConfig::default();
        let before = removed(&dedup_corpus(&data, &cfg, Stages::Both).unwrap());
        let all: Vec<DocKey> = data.iter().flat_map(|(n, d)| d.iter().map(|x| DocKey::new(n.clone(), x.id.clone()))).collect();
        let gone = pick.get(&all).clone();
        let reduced: Vec<(String, Vec<Document>)> = data
            .iter()
            .map(|(n, d)| (n.clone(), d.iter().filter(|x| !(n == &gone.dataset && x.id == gone.id)).cloned().collect()))
            .collect();
        let after = removed(&dedup_corpus(&reduced, &cfg, Stages::Both).unwrap());
        let cluster_of = |k: &DocKey| k.id.split('m').next().unwrap().to_string();
        let outside = |s: &BTreeSet<DocKey>| s.iter().filter(|k| cluster_of(k) != cluster_of(&gone)).cloned().collect::<BTreeSet<_>>();
        prop_assert_eq!(outside(&before), outside(&after));
    }
}
