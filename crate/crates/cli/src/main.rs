use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use corpus_forge::alignment::{
    assign_system_message, curate_preferences, orpo_gradient_check, read_preferences, render_chat, write_jsonl,
    ChatTemplate, CurationConfig, SystemPool,
};
use corpus_forge::dedup::Stages;
use corpus_forge::document::{read_documents, Document};
use corpus_forge::embedding::{init_new_embeddings, pad_to_multiple, EmbeddingMatrix};
use corpus_forge::fluency::{document_fluency, train_ngram_lm, LmTrainConfig, NGramLM};
use corpus_forge::parallel::{dedup_parallel, read_pairs, threshold_filter, write_pairs, ParallelFilterConfig};
use corpus_forge::pipeline::{
    derive_seed, run_pipeline, run_stages, validate_config, PipelineConfig, PipelineError, RunReport, StageName,
};
use corpus_forge::schedule::{builtin_plans, Plans, StagePlan};
use corpus_forge::stats::{corpus_stats, CorpusStats};
use corpus_forge::tokenizer::{extend_vocab, fertility_counts, train_bpe, BpeTrainConfig, ExtendedVocab, Vocab};

/// Corpus preparation and vocabulary adaptation toolkit.
#[derive(Parser)]
#[command(name = "corpus-forge", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the config and run every enabled stage.
    Run {
        /// Only validate the config.
        #[arg(long)]
        check: bool,
    },
    /// Normalize the configured datasets into canonical JSONL.
    Ingest,
    /// Apply the rule-based quality filters.
    Filter,
    /// Character n-gram fluency model and scoring.
    #[command(subcommand)]
    Fluency(FluencyCmd),
    /// MinHash near-duplicate removal.
    #[command(subcommand)]
    Dedup(DedupCmd),
    /// Sentence-pair filtering and deduplication.
    #[command(subcommand)]
    Parallel(ParallelCmd),
    /// BPE training, vocabulary extension and fertility.
    #[command(subcommand)]
    Tok(TokCmd),
    /// Embedding matrix initialization and padding.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Training plans and learning-rate schedules.
    #[command(subcommand)]
    Plan(PlanCmd),
    /// Preference data curation, templating and loss checks.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Token counts and shares per subcorpus.
    Stats {
        /// JSONL corpora; documents are grouped by their dataset field.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Tokenizer used for counting; byte-level when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Raw counts as NAME=TOKENS instead of corpora.
        #[arg(long = "count", value_parser = parse_count)]
        counts: Vec<(String, u64)>,
    },
}

#[derive(Subcommand)]
enum FluencyCmd {
    /// Run the fluency stage of the configured pipeline.
    Run,
    /// Train a character n-gram model.
    Train {
        /// JSONL corpora.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
        /// Highest n-gram order.
        #[arg(long, default_value_t = 7)]
        order: usize,
    },
    /// Print `id<TAB>score` per document.
    Score {
        /// Model file written by `fluency train`.
        #[arg(long)]
        model: PathBuf,
        /// Input file.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum DedupCmd {
    /// Run near-duplicate removal on the configured pipeline.
    Run {
        /// intra, cross or both.
        #[arg(long, default_value = "both")]
        stage: Stages,
    },
}

#[derive(Subcommand)]
enum ParallelCmd {
    /// Run the parallel-corpus stage of the configured pipeline.
    Run,
    /// Drop pairs whose normalized source or target was seen before.
    Dedup {
        /// Input file.
        #[arg(long)]
        input: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Keep pairs at or above both score thresholds.
    Filter {
        /// Input file.
        #[arg(long)]
        input: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
        /// Minimum margin score.
        #[arg(long, default_value_t = 1.06)]
        margin: f64,
        /// Minimum classifier probability.
        #[arg(long, default_value_t = 0.7)]
        classifier: f64,
        /// Drop pairs that lack a score instead of keeping them.
        #[arg(long)]
        require_scores: bool,
    },
}

#[derive(Subcommand)]
enum TokCmd {
    /// Run the tokenizer and fertility stages of the configured pipeline.
    Run,
    /// Learn byte-level BPE merges.
    Train {
        /// JSONL corpora.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Number of merges to learn.
        #[arg(long)]
        merges: usize,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
        /// Pairs seen fewer times are never merged.
        #[arg(long, default_value_t = 2)]
        min_pair_count: u64,
    },
    /// Append learned tokens to a base vocabulary.
    Extend {
        /// Base vocabulary JSON.
        #[arg(long)]
        base: PathBuf,
        /// Vocabulary learned on the new language.
        #[arg(long)]
        learned: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print token ids for text given as an argument or on stdin.
    Encode {
        /// Vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Text to encode; read from stdin when absent.
        text: Option<String>,
    },
    /// Tokens per whitespace word over a corpus.
    Fertility {
        /// Vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// JSONL corpora.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Run the embedding stage of the configured pipeline.
    Run,
    /// Grow a base matrix to an extended vocabulary.
    Init {
        /// Base embedding matrix.
        #[arg(long)]
        base: PathBuf,
        /// Vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Pad the row count to a multiple.
    Pad {
        /// Input file.
        #[arg(long)]
        input: PathBuf,
        /// Pad the row count to a multiple of this.
        #[arg(long, default_value_t = 8)]
        multiple: usize,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the header of a matrix file.
    Info { input: PathBuf },
}

#[derive(Subcommand)]
enum PlanCmd {
    /// Run the plan stage of the configured pipeline.
    Run,
    /// Print the stage plans as JSON.
    Show {
        /// Only this stage (1 or 2).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
    },
    /// Write `stageN.json` and `stageN_lr.csv` into --out.
    Export {
        /// 1 or 2.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
}

#[derive(Subcommand)]
enum AlignCmd {
    /// Run the alignment stage of the configured pipeline.
    Run,
    /// Apply the curation rules to preference data.
    Curate {
        /// Input file.
        #[arg(long)]
        input: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
        /// Drop examples whose chosen response is rated lower.
        #[arg(long)]
        min_rating: Option<f64>,
        /// Largest share of characters outside Greek, ASCII and common punctuation.
        #[arg(long, default_value_t = 0.05)]
        max_foreign_ratio: f64,
    },
    /// Render preference data with the chat template.
    Render {
        /// Input file.
        #[arg(long)]
        input: PathBuf,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
        /// System messages per category for examples without one.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Compare the analytic odds-ratio loss gradient with finite differences.
    OrpoCheck {
        /// Random instances to check.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn parse_count(s: &str) -> Result<(String, u64), String> {
    let (name, n) = s.split_once('=').ok_or_else(|| format!("expected NAME=TOKENS, got {s:?}"))?;
    let n = n.replace([',', '_'], "").parse().map_err(|e| format!("{s:?}: {e}"))?;
    Ok((name.to_string(), n))
}

/// Exit code 1: bad input or config. Exit code 2: a stage failed.
enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Invalid(_) => Failure::Validation(e.into()),
            PipelineError::Stage { .. } => Failure::Stage(e.into()),
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let config_command = matches!(
        cli.command,
        Command::Run { .. }
            | Command::Ingest
            | Command::Filter
            | Command::Fluency(FluencyCmd::Run)
            | Command::Dedup(_)
            | Command::Parallel(ParallelCmd::Run)
            | Command::Tok(TokCmd::Run)
            | Command::Embed(EmbedCmd::Run)
            | Command::Plan(PlanCmd::Run)
            | Command::Align(AlignCmd::Run)
    );
    if !config_command {
        if let Some(n) = g.threads {
            rayon_global(n)?;
        }
    }
    match &cli.command {
        Command::Run { check: true } => {
            let cfg = load_config(g)?;
            let issues = validate_config(&cfg);
            for issue in &issues {
                println!("{issue}");
            }
            if corpus_forge::pipeline::has_errors(&issues) {
                return Err(invalid(anyhow!("config is invalid")));
            }
            Ok(())
        }
        Command::Run { check: false } => {
            let cfg = load_config(g)?;
            print_report(&run_pipeline(&cfg)?)
        }
        Command::Ingest => stages(g, &[StageName::Ingest]),
        Command::Filter => stages(g, &[StageName::Filter]),
        Command::Fluency(FluencyCmd::Run) => stages(g, &[StageName::Fluency]),
        Command::Fluency(cmd) => fluency(g, cmd),
        Command::Dedup(DedupCmd::Run { stage }) => match stage {
            Stages::Intra => stages(g, &[StageName::DedupIntra]),
            Stages::Cross => stages(g, &[StageName::DedupCross]),
            Stages::Both => stages(g, &[StageName::DedupIntra, StageName::DedupCross]),
        },
        Command::Parallel(ParallelCmd::Run) => stages(g, &[StageName::Parallel]),
        Command::Parallel(cmd) => parallel(cmd),
        Command::Tok(TokCmd::Run) => stages(g, &[StageName::Tokenizer, StageName::Fertility]),
        Command::Tok(cmd) => tok(g, cmd),
        Command::Embed(EmbedCmd::Run) => stages(g, &[StageName::Embedding]),
        Command::Embed(cmd) => embed(cmd),
        Command::Plan(PlanCmd::Run) => stages(g, &[StageName::Plan]),
        Command::Plan(cmd) => plan(g, cmd),
        Command::Align(AlignCmd::Run) => stages(g, &[StageName::Alignment]),
        Command::Align(cmd) => align(g, cmd),
        Command::Stats { input, vocab, counts } => stats(input, vocab.as_deref(), counts),
    }
}

fn rayon_global(n: usize) -> Outcome {
    if n == 0 {
        return Err(invalid(anyhow!("--threads must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(invalid)
}

fn load_config(g: &Global) -> Result<PipelineConfig, Failure> {
    let path = g.config.as_ref().ok_or_else(|| invalid(anyhow!("this command needs --config")))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = g.threads {
        cfg.threads = Some(n);
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn stages(g: &Global, names: &[StageName]) -> Outcome {
    let cfg = load_config(g)?;
    for s in names {
        if !cfg.stage_enabled(*s) {
            log::warn!("stage {s} is disabled in the config; running it anyway");
        }
    }
    print_report(&run_stages(&cfg, names)?)
}

fn print_report(report: &RunReport) -> Outcome {
    print!("{}", report.to_json());
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Document>, Failure> {
    let mut docs = Vec::new();
    for p in paths {
        docs.extend(read_documents(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?);
    }
    Ok(docs)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fluency(g: &Global, cmd: &FluencyCmd) -> Outcome {
    match cmd {
        FluencyCmd::Run => unreachable!("handled by dispatch"),
        FluencyCmd::Train { input, output, order } => {
            let docs = read_all(input)?;
            let cfg = LmTrainConfig { order: *order, seed: g.seed.unwrap_or(0), ..LmTrainConfig::default() };
            let lm = train_ngram_lm(&docs, &cfg).map_err(invalid)?;
            lm.save(output).context("saving the model")?;
            println!("{}", json!({ "order": lm.order(), "h_ref": lm.h_ref(), "vocab_size": lm.vocab_size() }));
            Ok(())
        }
        FluencyCmd::Score { model, input } => {
            let lm = NGramLM::load(model).map_err(invalid)?;
            let docs = read_all(std::slice::from_ref(input))?;
            let stdout = std::io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for d in &docs {
                match document_fluency(&lm, &d.text) {
                    Some(s) => writeln!(out, "{}\t{s:.6}", d.id),
                    None => writeln!(out, "{}\tnan", d.id),
                }
                .context("writing scores")?;
            }
            Ok(())
        }
    }
}

fn parallel(cmd: &ParallelCmd) -> Outcome {
    match cmd {
        ParallelCmd::Run => unreachable!("handled by dispatch"),
        ParallelCmd::Dedup { input, output } => {
            let pairs = read_pairs(input).map_err(invalid)?;
            let (kept, report) = dedup_parallel(&pairs);
            write_pairs(create(output)?, &kept).context("writing pairs")?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
        ParallelCmd::Filter { input, output, margin, classifier, require_scores } => {
            let pairs = read_pairs(input).map_err(invalid)?;
            let cfg = ParallelFilterConfig {
                margin_threshold: *margin,
                classifier_threshold: *classifier,
                require_scores: *require_scores,
                ..ParallelFilterConfig::default()
            };
            let kept = threshold_filter(&pairs, &cfg);
            write_pairs(create(output)?, &kept).context("writing pairs")?;
            println!("{}", json!({ "input": pairs.len(), "kept": kept.len() }));
            Ok(())
        }
    }
}

fn load_vocab(path: &Path) -> Result<ExtendedVocab, Failure> {
    ExtendedVocab::load(path).with_context(|| format!("loading {}", path.display())).map_err(invalid)
}

fn tok(g: &Global, cmd: &TokCmd) -> Outcome {
    match cmd {
        TokCmd::Run => unreachable!("handled by dispatch"),
        TokCmd::Train { input, merges, output, min_pair_count } => {
            let docs = read_all(input)?;
            let cfg = BpeTrainConfig {
                target_new_tokens: *merges,
                min_pair_count: *min_pair_count,
                seed: g.seed.unwrap_or(0),
                max_documents: None,
            };
            let vocab = train_bpe(&docs, &cfg);
            std::fs::write(output, vocab.to_json()).context("writing the vocabulary")?;
            println!("{}", json!({ "tokens": vocab.len(), "merges": vocab.merges.len() }));
            Ok(())
        }
        TokCmd::Extend { base, learned, output } => {
            let base: Vocab = load_vocab(base)?.base;
            let learned: Vocab = load_vocab(learned)?.base;
            let ext = extend_vocab(&base, &learned);
            std::fs::write(output, ext.to_json()).context("writing the vocabulary")?;
            println!("{}", json!({ "base_size": base.len(), "added": ext.added_tokens.len(), "total_size": ext.total_size() }));
            Ok(())
        }
        TokCmd::Encode { vocab, text } => {
            let vocab = load_vocab(vocab)?;
            let text = match text {
                Some(t) => t.clone(),
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
                    s
                }
            };
            let ids: Vec<String> = vocab.encode(&text).iter().map(u32::to_string).collect();
            println!("{}", ids.join(" "));
            Ok(())
        }
        TokCmd::Fertility { vocab, input } => {
            let vocab = load_vocab(vocab)?;
            let docs = read_all(input)?;
            let counts = fertility_counts(vocab.encoder(), &docs);
            let ratio = counts.ratio().map_err(invalid)?;
            println!("{}", json!({ "tokens": counts.tokens, "words": counts.words, "fertility": ratio }));
            Ok(())
        }
    }
}

fn load_matrix(path: &Path) -> Result<EmbeddingMatrix, Failure> {
    EmbeddingMatrix::load(path).with_context(|| format!("loading {}", path.display())).map_err(invalid)
}

fn embed(cmd: &EmbedCmd) -> Outcome {
    match cmd {
        EmbedCmd::Run => unreachable!("handled by dispatch"),
        EmbedCmd::Init { base, vocab, output } => {
            let base = load_matrix(base)?;
            let vocab = load_vocab(vocab)?;
            let grown = init_new_embeddings(&base, &vocab).map_err(invalid)?;
            grown.save(output).context("writing the matrix")?;
            println!("{}", json!({ "base_rows": base.rows, "rows": grown.rows, "dims": grown.dims }));
            Ok(())
        }
        EmbedCmd::Pad { input, multiple, output } => {
            if *multiple == 0 {
                return Err(invalid(anyhow!("--multiple must be positive")));
            }
            let m = load_matrix(input)?;
            let padded = pad_to_multiple(&m, *multiple);
            padded.save(output).context("writing the matrix")?;
            println!("{}", json!({ "rows": m.rows, "padded_rows": padded.rows }));
            Ok(())
        }
        EmbedCmd::Info { input } => {
            let m = load_matrix(input)?;
            println!("{}", json!({ "role": format!("{:?}", m.role), "rows": m.rows, "dims": m.dims }));
            Ok(())
        }
    }
}

fn plans(g: &Global) -> Result<Plans, Failure> {
    match &g.config {
        Some(_) => Ok(load_config(g)?.plan.plans),
        None => Ok(builtin_plans()),
    }
}

fn pick(plans: &Plans, stage: u8) -> &StagePlan {
    if stage == 1 {
        &plans.stage1
    } else {
        &plans.stage2
    }
}

fn plan(g: &Global, cmd: &PlanCmd) -> Outcome {
    let plans = plans(g)?;
    match cmd {
        PlanCmd::Run => unreachable!("handled by dispatch"),
        PlanCmd::Show { stage: Some(s) } => println!("{}", pick(&plans, *s).to_json()),
        PlanCmd::Show { stage: None } => println!("{}", serde_json::to_string_pretty(&plans).expect("plans serialize")),
        PlanCmd::Export { stage } => {
            let p = pick(&plans, *stage);
            p.validate().map_err(invalid)?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let json = dir.join(format!("stage{stage}.json"));
            let csv = dir.join(format!("stage{stage}_lr.csv"));
            std::fs::write(&json, p.to_json()).context("writing the plan")?;
            std::fs::write(&csv, p.lr_csv()).context("writing the schedule")?;
            println!("{}\n{}", json.display(), csv.display());
        }
    }
    Ok(())
}

fn align(g: &Global, cmd: &AlignCmd) -> Outcome {
    match cmd {
        AlignCmd::Run => unreachable!("handled by dispatch"),
        AlignCmd::Curate { input, output, min_rating, max_foreign_ratio } => {
            let examples = read_preferences(input).map_err(invalid)?;
            let cfg = CurationConfig { min_rating: *min_rating, max_foreign_ratio: *max_foreign_ratio };
            let (kept, report) = curate_preferences(&examples, &cfg);
            write_jsonl(create(output)?, &kept).context("writing examples")?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
        AlignCmd::Render { input, output, pool } => {
            let mut examples = read_preferences(input).map_err(invalid)?;
            if let Some(pool) = pool {
                let text = std::fs::read_to_string(pool).with_context(|| format!("reading {}", pool.display()))?;
                let pool: SystemPool = serde_json::from_str(&text).map_err(invalid)?;
                let seed = derive_seed(g.seed.unwrap_or(0), "alignment");
                examples = examples
                    .iter()
                    .map(|ex| assign_system_message(ex, &pool, seed))
                    .collect::<Result<_, _>>()
                    .map_err(|e| Failure::Stage(e.into()))?;
            }
            let template = match &g.config {
                Some(_) => load_config(g)?.alignment.template,
                None => ChatTemplate::default(),
            };
            template.validate().map_err(invalid)?;
            let rendered: Vec<_> = examples.iter().map(|ex| render_chat(ex, &template)).collect();
            write_jsonl(create(output)?, &rendered).context("writing rendered pairs")?;
            Ok(())
        }
        AlignCmd::OrpoCheck { instances, tolerance } => {
            let check = orpo_gradient_check(*instances, 1e-6, g.seed.unwrap_or(0));
            println!("{}", serde_json::to_string(&check).expect("check serializes"));
            if check.max_relative_error > *tolerance {
                return Err(Failure::Stage(anyhow!(
                    "max relative error {} exceeds {tolerance}",
                    check.max_relative_error
                )));
            }
            Ok(())
        }
    }
}

fn stats(input: &[PathBuf], vocab: Option<&Path>, counts: &[(String, u64)]) -> Outcome {
    let stats = match (input.is_empty(), counts.is_empty()) {
        (true, false) => CorpusStats::from_counts(counts.iter().cloned()),
        (false, true) => {
            let vocab = match vocab {
                Some(p) => load_vocab(p)?,
                None => ExtendedVocab::new(Vocab::byte_level(), Vec::new()).expect("byte-level vocab is valid"),
            };
            corpus_stats(&read_all(input)?, &vocab)
        }
        _ => return Err(invalid(anyhow!("give either --input or --count"))),
    };
    let out = json!({
        "per_subcorpus": stats.per_subcorpus,
        "total_tokens": stats.total_tokens,
        "percent": stats.rounded_percent_points(1),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("stats serialize"));
    if stats.total_tokens == 0 {
        log::warn!("no tokens counted");
    }
    Ok(())
}
