use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use tracing_subscriber::EnvFilter;

use treerag_core::answerer::PromptOrder;
use treerag_core::ensembler::VoteMode;
use treerag_core::evalkit::ErrorCategory;
use treerag_core::pipeline::{
    answer_questions, build_corpus_index, evaluate_files, load_questions, make_chat, make_encoder, predictions,
    render_audit, write_atomic, ConfigError, PipelineConfig, PipelineError,
};
use treerag_core::evalkit::render_records;
use treerag_core::retriever::{DedupMode, RerankStrategy};
use treerag_core::vectorstore::Index;

/// Tree-structured retrieval-augmented question answering over a document
/// corpus, with ensemble voting and scoring.
#[derive(Debug, Parser)]
#[command(name = "treerag", version)]
struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Root seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or inspect a `.kindex` file.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Answer a question file against an index.
    Answer(AnswerArgs),
    /// Score predictions against ground truth.
    Evaluate(EvalArgs),
    /// Per-question error categories.
    ClassifyErrors(ClassifyArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Parse, embed and index every `.txt`, `.md` and `.doctree.json` in a directory.
    Build {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
        /// Skip the BM25 section.
        #[arg(long)]
        no_bm25: bool,
    },
    /// Print header fields and node counts.
    Info { index: PathBuf },
}

#[derive(Debug, Args)]
struct AnswerArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSON Lines of {question_id, question}.
    #[arg(long)]
    questions: PathBuf,
    /// Prediction file (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Per-run audit log; defaults to `<out stem>.audit.jsonl`.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Replay file for the mock chat client.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    /// 0 keeps every candidate.
    #[arg(long)]
    topk_final: Option<usize>,
    /// frequency | score | combined
    #[arg(long, value_parser = serde_enum::<RerankStrategy>)]
    rerank: Option<RerankStrategy>,
    #[arg(long)]
    alpha: Option<f64>,
    /// none | id | tree
    #[arg(long, value_parser = serde_enum::<DedupMode>)]
    dedup: Option<DedupMode>,
    #[arg(long)]
    bm25_topk: Option<usize>,
    /// context_first | question_first
    #[arg(long, value_parser = serde_enum::<PromptOrder>)]
    order: Option<PromptOrder>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
    /// Independent runs per question; odd sizes avoid tied votes.
    #[arg(long)]
    ensemble_size: Option<usize>,
    /// independent | answer_priority | ref_priority | union | intersection
    #[arg(long, value_parser = serde_enum::<VoteMode>)]
    vote_mode: Option<VoteMode>,
    /// Drop abstaining runs from the vote when any run answered.
    #[arg(long)]
    ignore_blank: Option<bool>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Directory for scores.tsv, errors.tsv and summary.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Relative paths inside a config file are taken from the file's directory.
fn rebase(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg =
                PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            rebase(&mut cfg.chat.replay, base);
            rebase(&mut cfg.index.stopwords, base);
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    match &cli.command {
        Some(Command::Index(IndexCommand::Build { dim, no_bm25, .. })) => {
            if let Some(d) = dim {
                cfg.encoder.dim = *d;
            }
            if *no_bm25 {
                cfg.index.bm25 = false;
            }
        }
        Some(Command::Answer(a)) => apply_answer_flags(&mut cfg, a),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_answer_flags(cfg: &mut PipelineConfig, a: &AnswerArgs) {
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    if a.replay.is_some() {
        cfg.chat.replay = a.replay.clone();
    }
    let r = &mut cfg.retriever;
    set(&mut r.n_queries, &a.n_queries);
    set(&mut r.topk, &a.topk);
    set(&mut r.topk_final, &a.topk_final);
    set(&mut r.rerank, &a.rerank);
    set(&mut r.alpha, &a.alpha);
    set(&mut r.dedup, &a.dedup);
    set(&mut r.bm25_topk, &a.bm25_topk);
    let ans = &mut cfg.answerer;
    set(&mut ans.order, &a.order);
    set(&mut ans.token_budget, &a.token_budget);
    set(&mut ans.temperature, &a.temperature);
    set(&mut ans.max_retries, &a.max_retries);
    let e = &mut cfg.ensemble;
    set(&mut e.size, &a.ensemble_size);
    set(&mut e.vote_mode, &a.vote_mode);
    set(&mut e.ignore_blank, &a.ignore_blank);
}

fn cmd_index_build(cfg: &PipelineConfig, docs: &Path, out: &Path) -> Result<()> {
    if !docs.is_dir() {
        bail!(PipelineError::Io {
            context: format!("docs directory {}", docs.display()),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let encoder = make_encoder(cfg)?;
    let (index, trees) = build_corpus_index(docs, cfg, encoder.as_ref())?;
    index.save(out).map_err(PipelineError::from)?;
    let mut report = String::from("document\tdocument\tsection\tparagraph\tsentence\n");
    let mut totals = [0usize; 4];
    for tree in &trees {
        let c = tree.level_counts();
        let _ = writeln!(report, "{}\t{}\t{}\t{}\t{}", tree.doc_id(), c[0], c[1], c[2], c[3]);
        totals.iter_mut().zip(c).for_each(|(t, n)| *t += n);
    }
    let _ = writeln!(report, "total\t{}\t{}\t{}\t{}", totals[0], totals[1], totals[2], totals[3]);
    print!("{report}");
    eprintln!("wrote {} ({} nodes)", out.display(), index.len());
    Ok(())
}

fn open_index(path: &Path) -> Result<Index> {
    Index::open(path).map_err(PipelineError::from).with_context(|| format!("opening index {}", path.display()))
}

fn cmd_answer(cfg: &PipelineConfig, a: &AnswerArgs) -> Result<()> {
    let index = open_index(&a.index)?;
    let questions = load_questions(&a.questions)?;
    let encoder = make_encoder(cfg)?;
    let clients = make_chat(cfg)?;
    let audits = answer_questions(&questions, &index, encoder.as_ref(), &clients, cfg)?;
    let audit_path = a.audit.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "predictions".into());
        a.out.with_file_name(format!("{stem}.audit.jsonl"))
    });
    write_atomic(&a.out, render_records(&predictions(&audits)).as_bytes())?;
    write_atomic(&audit_path, render_audit(&audits).as_bytes())?;
    let blanks = audits.iter().filter(|q| q.outcome.record.is_blank).count();
    eprintln!(
        "answered {} questions ({blanks} blank); predictions {}, audit {}",
        audits.len(),
        a.out.display(),
        audit_path.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    let report = evaluate_files(&a.predictions, &a.truth, cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_atomic(&a.out_dir.join("scores.tsv"), report.scores_tsv().as_bytes())?;
    write_atomic(&a.out_dir.join("errors.tsv"), report.errors_tsv().as_bytes())?;
    let summary = report.summary();
    write_atomic(&a.out_dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn cmd_classify(cfg: &PipelineConfig, a: &ClassifyArgs) -> Result<()> {
    let report = evaluate_files(&a.predictions, &a.truth, cfg)?;
    let mut out = String::from("question_id\tcategory\tname\n");
    for q in &report.questions {
        let _ = writeln!(out, "{}\t{}\t{}", q.question_id, q.category.label(), q.category.display_name());
    }
    match &a.out {
        Some(path) => {
            write_atomic(path, out.as_bytes())?;
            let errors: usize = report.questions.iter().filter(|q| q.category != ErrorCategory::Correct).count();
            eprintln!("{} questions, {errors} errors; wrote {}", report.total(), path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_info(path: &Path) -> Result<()> {
    let index = open_index(path)?;
    println!("{}", index.info());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        None => bail!(ConfigError::Invalid("no command given; see --help".into())),
        Some(Command::Index(IndexCommand::Build { docs, out, .. })) => cmd_index_build(&cfg, docs, out),
        Some(Command::Index(IndexCommand::Info { index })) => cmd_info(index),
        Some(Command::Answer(a)) => cmd_answer(&cfg, a),
        Some(Command::Evaluate(a)) => cmd_evaluate(&cfg, a),
        Some(Command::ClassifyErrors(a)) => cmd_classify(&cfg, a),
    }
}

/// 2 for configuration and client failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return if p.is_config_or_client() { 2 } else { 1 };
        }
    }
    1
}

/// The cause chain joined with `: `, skipping causes whose text the
/// previous message already ends with.
fn render_error(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", render_error(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
