//! Regenerates the files under `data/`.
//!
//! ```text
//! cargo run --release -p corpus-forge --example make_demo_data -- data
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use corpus_forge::alignment::{write_jsonl, Category};
use corpus_forge::document::{write_documents, Extraction};
use corpus_forge::parallel::write_pairs;
use corpus_forge::synth::{standard_corpus, CorpusGenerator, DatasetSpec, Language, SAMPLE_BLACKLIST};

fn sample(language: Language, name: &str, seed: u64, words: usize) -> Vec<corpus_forge::document::Document> {
    let generator = CorpusGenerator::new(seed);
    let spec = DatasetSpec {
        exact_dup_rate: 0.0,
        near_dup_rate: 0.0,
        defect_rate: 0.0,
        ..DatasetSpec::new(name, language, Extraction::Structured, words / 100)
    };
    generator.dataset(&spec, 0)
}

fn write_docs(path: &Path, docs: &[corpus_forge::document::Document]) -> std::io::Result<()> {
    write_documents(BufWriter::new(File::create(path)?), docs)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let root = Path::new(&root);
    let samples = root.join("samples");
    let demo = root.join("demo");
    fs::create_dir_all(&samples)?;
    fs::create_dir_all(&demo)?;

    write_docs(&samples.join("greek.jsonl"), &sample(Language::Greek, "greek_sample", 101, 100_000))?;
    write_docs(&samples.join("english.jsonl"), &sample(Language::English, "english_sample", 202, 100_000))?;

    for (name, docs) in standard_corpus(7, 700, 70..=140) {
        write_docs(&demo.join(format!("{name}.jsonl")), &docs)?;
    }
    let generator = CorpusGenerator::new(7);
    write_pairs(BufWriter::new(File::create(demo.join("pairs.jsonl"))?), &generator.sentence_pairs(1_000))?;
    write_jsonl(BufWriter::new(File::create(demo.join("preferences.jsonl"))?), &generator.preferences(300))?;

    let pool: BTreeMap<Category, Vec<&str>> = BTreeMap::from([
        (Category::General, vec!["Είσαι ένας χρήσιμος βοηθός.", "Απάντησε με σαφήνεια και ευγένεια."]),
        (Category::Rag, vec!["Απάντησε μόνο με βάση τα έγγραφα που δίνονται."]),
        (Category::Cot, vec!["Σκέψου βήμα προς βήμα πριν απαντήσεις."]),
        (Category::Math, vec!["Λύσε το πρόβλημα και δείξε τους υπολογισμούς."]),
        (Category::Code, vec!["Γράψε σωστό και ευανάγνωστο κώδικα."]),
    ]);
    fs::write(demo.join("system_pool.json"), serde_json::to_string_pretty(&pool)? + "\n")?;

    fs::write(
        root.join("badwords.sample.txt"),
        "# Mild sample entries; supply a real list in production.\nβλάκας\nηλίθιος\nχαζός\nidiot\nstupid\nmoron\n",
    )?;
    let mut blacklist = String::from("# One domain per line; subdomains match too.\n");
    for d in SAMPLE_BLACKLIST {
        blacklist.push_str(d);
        blacklist.push('\n');
    }
    fs::write(root.join("url_blacklist.sample.txt"), blacklist)?;
    Ok(())
}
