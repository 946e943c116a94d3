//! Command-line front end: corpus synthesis, validation, statistics,
//! training, prediction, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or data error.

pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anchor_rank::anchor::{build_vocab, AnchorConfig, Vocab};
use anchor_rank::corpus::{code_mismatch_stats, load_jsonl, split_stats, Corpus, Document, Split};
use anchor_rank::metrics::{evaluate as evaluate_scores, DocScores, MetricsReport};
use anchor_rank::models::{
    CamlConfig, EncoderConfig, Inputs, ModelDescriptor, ModelKind, Prediction, Ranker,
};
use anchor_rank::nnkit::grad_check;
use anchor_rank::ontology::{load_table, IcdCode, IcdTable};
use anchor_rank::train::{grid_search, history_to_jsonl, train, train_code_frequencies, Grid, Threshold, TrainConfig};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use synth::{SynthConfig, TaskKind};

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("prediction file names document {0}, which is not in the corpus")]
    MissingDocument(String),
    #[error("no decision threshold given; pass --threshold or --threshold-file")]
    MissingThreshold,
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

/// What a command printed and how it should exit.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome {
            stdout,
            ..Outcome::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "anchor-rank", version, about = "Entity-anchored ICD-10-CM code ranking")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, code table and lexicon.
    Synth(SynthArgs),
    /// Validate a corpus file.
    Ingest(IngestArgs),
    /// Per-split corpus statistics and unseen-code counts.
    Stats(StatsArgs),
    /// Train a model and select its decision threshold.
    Train(TrainArgs),
    /// Score documents with a trained model.
    Predict(PredictArgs),
    /// Compute metrics for a prediction file.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients on toy models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for corpus.jsonl, codes.tsv and lexicon.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synth config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub codes: Option<usize>,
    #[arg(long)]
    pub train_docs: Option<usize>,
    #[arg(long)]
    pub validation_docs: Option<usize>,
    #[arg(long)]
    pub test_docs: Option<usize>,
    #[arg(long)]
    pub unseen_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub corpus: PathBuf,
    /// Also require every candidate code to be in this table.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run config with every training field; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Start from the ranking-loss defaults (λ = 0.5).
    #[arg(long)]
    pub ranking: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// JSON grid over lrs/lambdas/epochs; the best cell is retrained.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

impl SplitArg {
    fn includes(self, split: Split) -> bool {
        match self {
            SplitArg::All => true,
            SplitArg::Train => split == Split::Train,
            SplitArg::Validation => split == Split::Validation,
            SplitArg::Test => split == Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    /// Defaults to vocab.tsv next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Defaults to threshold.json next to the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write JSONL here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// threshold.json written by `train`.
    #[arg(long)]
    pub threshold_file: Option<PathBuf>,
    /// `code<TAB>count` lines; defaults to the corpus training split.
    #[arg(long)]
    pub train_codes: Option<PathBuf>,
    /// Also score every document of this split, predicted or not.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Write the JSON report here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// One architecture; all of them when omitted.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// One loss mix; both pure losses (λ = 0 and λ = 1) when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, hide = true)]
    pub break_gradient: bool,
}

/// One ranked code of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub code: IcdCode,
    /// `None` for codes the model cannot score.
    pub score: Option<f64>,
    pub rank: usize,
    pub above_threshold: bool,
}

pub fn parse_records(contents: &str) -> anyhow::Result<Vec<PredictionRecord>> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("prediction line {}", i + 1)))
        .collect()
}

pub fn records_to_jsonl(records: &[PredictionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Ranked records for one document, one per unique candidate code.
pub fn document_records(doc: &Document, predictions: &[Prediction], tau: f64) -> Vec<PredictionRecord> {
    let scores = DocScores::new(doc, predictions);
    scores
        .ranked()
        .top(usize::MAX)
        .iter()
        .enumerate()
        .map(|(i, (code, s))| PredictionRecord {
            doc_id: doc.id.clone(),
            code: code.clone(),
            score: s.is_finite().then_some(*s),
            rank: i + 1,
            above_threshold: *s >= tau,
        })
        .collect()
}

/// Turns prediction records back into per-document scores against the gold
/// corpus.
pub fn scores_from_records(
    corpus: &Corpus,
    records: &[PredictionRecord],
    split: Option<SplitArg>,
) -> Result<Vec<DocScores>, CliError> {
    let mut by_doc: BTreeMap<&str, Vec<Prediction>> = BTreeMap::new();
    for r in records {
        if corpus.document(&r.doc_id).is_none() {
            return Err(CliError::MissingDocument(r.doc_id.clone()));
        }
        let preds = by_doc.entry(r.doc_id.as_str()).or_default();
        if let Some(score) = r.score {
            preds.push(Prediction {
                code: r.code.clone(),
                entity_id: None,
                score,
            });
        }
    }
    Ok(corpus
        .documents()
        .iter()
        .filter(|d| by_doc.contains_key(d.id.as_str()) || split.is_some_and(|s| s.includes(d.split)))
        .map(|d| DocScores::new(d, by_doc.get(d.id.as_str()).map_or(&[][..], Vec::as_slice)))
        .collect())
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn load_corpus(path: &Path) -> anyhow::Result<Corpus> {
    load_jsonl(path).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_codes(path: &Path) -> anyhow::Result<IcdTable> {
    load_table(path).map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let json = cli.json;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, json),
        Command::Ingest(a) => cmd_ingest(a, json),
        Command::Stats(a) => cmd_stats(a, json),
        Command::Train(a) => cmd_train(a, json),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a, json),
        Command::Gradcheck(a) => cmd_gradcheck(a, json),
    }
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            eprint!("{}", out.stderr);
            out.code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn cmd_synth(a: SynthArgs, json: bool) -> Result<Outcome, CliError> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_str(&read(path)?)
            .with_context(|| format!("synth config {}", path.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.task {
        config.task = v;
    }
    if let Some(v) = a.codes {
        config.codes = v;
    }
    if let Some(v) = a.train_docs {
        config.train_docs = v;
    }
    if let Some(v) = a.validation_docs {
        config.validation_docs = v;
    }
    if let Some(v) = a.test_docs {
        config.test_docs = v;
    }
    if let Some(v) = a.unseen_fraction {
        config.unseen_fraction = v;
    }
    let out = synth::generate(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    write(&a.out.join("corpus.jsonl"), &out.corpus.to_jsonl())?;
    write(&a.out.join("codes.tsv"), &out.table.to_tsv())?;
    write(&a.out.join("lexicon.tsv"), &out.lexicon.to_tsv())?;
    let check = (config.task == TaskKind::EvidenceCount).then(|| synth::self_check(&out.corpus, config.filler));
    let summary = serde_json::json!({
        "documents": out.corpus.len(),
        "codes": config.codes,
        "held_out_codes": out.held_out.len(),
        "task": config.task,
        "self_check": check,
    });
    let mut o = if json {
        Outcome::ok(to_json(&summary))
    } else {
        Outcome::ok(format!(
            "wrote {} documents, {} codes ({} held out of training) to {}\n",
            out.corpus.len(),
            config.codes,
            out.held_out.len(),
            a.out.display()
        ))
    };
    if let Some(check) = check {
        if !check.passed() {
            o.stderr = format!("self-check failed: {check:?}\n");
            o.code = 1;
        }
    }
    Ok(o)
}

fn cmd_ingest(a: IngestArgs, json: bool) -> Result<Outcome, CliError> {
    let corpus = load_corpus(&a.corpus)?;
    if let Some(path) = &a.table {
        let table = load_codes(path)?;
        for doc in corpus.documents() {
            if let Some(c) = doc.candidates.iter().find(|c| !table.contains(&c.code)) {
                return Err(anyhow!("document {}: candidate code {} is not in {}", doc.id, c.code, path.display()).into());
            }
        }
    }
    let count = |s| corpus.split(s).count();
    let report = serde_json::json!({
        "valid": true,
        "documents": corpus.len(),
        "train": count(Split::Train),
        "validation": count(Split::Validation),
        "test": count(Split::Test),
        "entities": corpus.documents().iter().map(|d| d.entities.len()).sum::<usize>(),
        "candidates": corpus.documents().iter().map(|d| d.candidates.len()).sum::<usize>(),
    });
    Ok(Outcome::ok(if json {
        to_json(&report)
    } else {
        format!("{}: {} documents, valid\n", a.corpus.display(), corpus.len())
    }))
}

fn cmd_stats(a: StatsArgs, json: bool) -> Result<Outcome, CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let stats = split_stats(&corpus);
    let mismatch = code_mismatch_stats(&corpus);
    if json {
        return Ok(Outcome::ok(to_json(&serde_json::json!({
            "splits": stats,
            "mismatch": mismatch,
        }))));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}{:>8}{:>8}{:>10}{:>16}{:>16}", "split", "docs", "codes", "entities", "words", "sentences");
    for split in Split::ALL {
        let t = stats.get(split);
        let _ = writeln!(
            s,
            "{:<12}{:>8}{:>8}{:>10}{:>16}{:>16}",
            split.as_str(),
            t.documents,
            t.codes,
            t.entities,
            format!("{:.1}±{:.1}", t.words_mean, t.words_std),
            format!("{:.1}±{:.1}", t.sentences_mean, t.sentences_std)
        );
    }
    let _ = writeln!(s, "\n{:<12}{:>14}{:>12}{:>8}", "split", "unique codes", "# mismatch", "%");
    for split in [Split::Validation, Split::Test] {
        let m = mismatch.get(split);
        let _ = writeln!(s, "{:<12}{:>14}{:>12}{:>8.1}", split.as_str(), m.unique_codes, m.unseen, m.unseen_pct);
    }
    Ok(Outcome::ok(s))
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_str(&read(path)?)
            .with_context(|| format!("run config {}", path.display()))?,
        None => TrainConfig::reference_default(a.model.unwrap_or(ModelKind::Base), a.ranking),
    };
    if let Some(v) = a.model {
        config.kind = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.lambda {
        config.lambda = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn cmd_train(a: TrainArgs, json: bool) -> Result<Outcome, CliError> {
    let mut config = resolve_train_config(&a)?;
    let corpus = load_corpus(&a.corpus)?;
    let table = load_codes(&a.table)?;
    let vocab = build_vocab(&corpus, &table, a.min_freq);
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut stderr = String::new();

    if config.kind == ModelKind::Caml {
        let train_gold = train_code_frequencies(&corpus);
        let unseen: std::collections::BTreeSet<IcdCode> = corpus
            .documents()
            .iter()
            .filter(|d| d.split != Split::Train)
            .flat_map(|d| d.gold_codes())
            .filter(|c| !train_gold.contains_key(c))
            .collect();
        if !unseen.is_empty() {
            let _ = writeln!(
                stderr,
                "warning: {} validation/test gold codes never occur in training; CAML cannot predict them",
                unseen.len()
            );
        }
    }

    if let Some(path) = &a.grid {
        let grid: Grid = serde_json::from_str(&read(path)?).with_context(|| format!("grid {}", path.display()))?;
        let result = grid_search(&corpus, &table, &vocab, &config, &grid).map_err(anyhow::Error::from)?;
        let cells: Vec<_> = result
            .cells
            .iter()
            .map(|c| serde_json::json!({"lr": c.config.lr, "lambda": c.config.lambda, "epochs": c.config.epochs, "criterion": c.criterion.is_finite().then_some(c.criterion)}))
            .collect();
        write(&a.out.join("grid.json"), &to_json(&cells))?;
        config = result.best;
    }

    let outcome = train(&corpus, &table, &vocab, &config).map_err(anyhow::Error::from)?;
    outcome.ranker.save(a.out.join("model.json")).map_err(anyhow::Error::from)?;
    write(&a.out.join("vocab.tsv"), &vocab.to_tsv())?;
    write(&a.out.join("history.jsonl"), &history_to_jsonl(&outcome.history))?;
    write(&a.out.join("threshold.json"), &to_json(&outcome.threshold))?;
    write(&a.out.join("config.json"), &to_json(&config))?;
    let freq: String = train_code_frequencies(&corpus)
        .iter()
        .map(|(c, n)| format!("{c}\t{n}\n"))
        .collect();
    write(&a.out.join("train_codes.tsv"), &freq)?;
    if outcome.skipped > 0 {
        let _ = writeln!(stderr, "skipped {} training documents with nothing to score", outcome.skipped);
    }
    let last = outcome.history.last().expect("at least one epoch");
    let stdout = if json {
        to_json(&serde_json::json!({
            "config": config,
            "final": last,
            "threshold": outcome.threshold,
            "skipped": outcome.skipped,
        }))
    } else {
        match last.val_ndcg_at_12 {
            Some(v) => format!("validation NDCG@12 {v:.4}, threshold {:.4}\n", outcome.threshold.tau),
            None => "validation NDCG@12 n/a\n".to_string(),
        }
    };
    Ok(Outcome {
        stdout,
        stderr,
        code: 0,
    })
}

fn sibling(model: &Path, name: &str) -> PathBuf {
    model.parent().unwrap_or(Path::new(".")).join(name)
}

fn cmd_predict(a: PredictArgs) -> Result<Outcome, CliError> {
    let ranker = Ranker::load(&a.model).map_err(anyhow::Error::from)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| sibling(&a.model, "vocab.tsv"));
    let vocab = Vocab::from_tsv(&read(&vocab_path)?).map_err(|e| anyhow!("{}: {e}", vocab_path.display()))?;
    ranker.check_vocab(&vocab).map_err(anyhow::Error::from)?;
    let tau = match a.threshold {
        Some(t) => t,
        None => {
            let path = sibling(&a.model, "threshold.json");
            let t: Threshold = serde_json::from_str(&read(&path)?).with_context(|| format!("{}", path.display()))?;
            t.tau
        }
    };
    let corpus = load_corpus(&a.corpus)?;
    let table = load_codes(&a.table)?;
    let inputs = Inputs {
        table: &table,
        vocab: &vocab,
    };
    let mut records = Vec::new();
    for doc in corpus.documents().iter().filter(|d| a.split.includes(d.split)) {
        let preds = match ranker.predict(doc, inputs) {
            Ok(p) => p,
            Err(anchor_rank::models::ModelError::NoCandidates(_) | anchor_rank::models::ModelError::NoEntities(_)) => Vec::new(),
            Err(e) => return Err(anyhow!("document {}: {e}", doc.id).into()),
        };
        records.extend(document_records(doc, &preds, tau));
    }
    let jsonl = records_to_jsonl(&records);
    match &a.out {
        Some(path) => {
            write(path, &jsonl)?;
            Ok(Outcome::ok(String::new()))
        }
        None => Ok(Outcome::ok(jsonl)),
    }
}

pub fn read_train_codes(contents: &str) -> anyhow::Result<BTreeMap<IcdCode, usize>> {
    let mut out = BTreeMap::new();
    for (i, line) in contents.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split('\t');
        let code = parts.next().unwrap_or_default();
        let code = IcdCode::parse(code).map_err(|e| anyhow!("train codes line {}: {e}", i + 1))?;
        let n = match parts.next() {
            Some(n) => n.trim().parse().with_context(|| format!("train codes line {}", i + 1))?,
            None => 1,
        };
        *out.entry(code).or_default() += n;
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs, json: bool) -> Result<Outcome, CliError> {
    let tau = match (a.threshold, &a.threshold_file) {
        (Some(t), _) => t,
        (None, Some(path)) => {
            let t: Threshold = serde_json::from_str(&read(path)?).with_context(|| format!("{}", path.display()))?;
            t.tau
        }
        (None, None) => return Err(CliError::MissingThreshold),
    };
    let corpus = load_corpus(&a.corpus)?;
    let records = parse_records(&read(&a.predictions)?)?;
    let docs = scores_from_records(&corpus, &records, a.split)?;
    let train_freq = match &a.train_codes {
        Some(path) => read_train_codes(&read(path)?)?,
        None => train_code_frequencies(&corpus),
    };
    let report: MetricsReport = evaluate_scores(&docs, tau, &train_freq);
    let report_json = to_json(&report);
    if let Some(path) = &a.out {
        write(path, &report_json)?;
    }
    Ok(Outcome::ok(if json { report_json } else { report.to_text_table() }))
}

/// Toy instance used by `gradcheck`: a tiny evidence-count corpus and model.
pub struct GradcheckToy {
    pub corpus: Corpus,
    pub table: IcdTable,
    pub vocab: Vocab,
}

impl GradcheckToy {
    pub fn new(seed: u64) -> Self {
        let out = synth::generate(&SynthConfig {
            seed,
            codes: 6,
            train_docs: 8,
            validation_docs: 1,
            test_docs: 1,
            unseen_fraction: 0.0,
            min_codes_per_doc: 3,
            max_codes_per_doc: 3,
            task: TaskKind::EvidenceCount,
            filler: 2,
        })
        .expect("toy config is valid");
        let vocab = build_vocab(&out.corpus, &out.table, 1);
        GradcheckToy {
            corpus: out.corpus,
            table: out.table,
            vocab,
        }
    }

    pub fn descriptor(&self, kind: ModelKind, lambda: f64, seed: u64) -> ModelDescriptor {
        let mut d = ModelDescriptor::new(kind, &self.vocab);
        d.encoder = EncoderConfig {
            vocab_size: self.vocab.len(),
            width: 4,
            depth: 1,
            heads: 1,
            ffn_width: 6,
        };
        d.caml = CamlConfig {
            embed_dim: 4,
            kernel: 3,
            filters: 3,
        };
        d.loss.lambda = lambda;
        d.anchor = AnchorConfig {
            window: 2,
            max_len: 64,
            doc_max_len: 256,
        };
        d.local_radius = 3;
        d.init_seed = seed;
        if kind == ModelKind::Caml {
            d.labels = train_code_frequencies(&self.corpus).into_keys().collect();
        }
        d
    }

    /// A training document with both relevant and irrelevant codes, so both
    /// loss terms are active. Its primary code has three mentions.
    pub fn document(&self) -> &Document {
        let mixed = |d: &&Document| {
            let rel = d.code_relevance();
            rel.values().any(|r| r.is_relevant()) && rel.values().any(|r| !r.is_relevant())
        };
        let mut train = self.corpus.split(Split::Train);
        self.corpus
            .split(Split::Train)
            .find(mixed)
            .or_else(|| train.next())
            .expect("toy corpus has training documents")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRun {
    pub model: ModelKind,
    pub seed: u64,
    pub lambda: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

pub fn gradcheck_once(kind: ModelKind, seed: u64, lambda: f64, broken: bool) -> anyhow::Result<GradcheckRun> {
    let toy = GradcheckToy::new(seed);
    let ranker = Ranker::new(toy.descriptor(kind, lambda, seed))?;
    let inputs = Inputs {
        table: &toy.table,
        vocab: &toy.vocab,
    };
    let mut objective = ranker.objective(vec![toy.document()], inputs);
    if broken {
        objective = objective.with_broken_gradient();
    }
    let mut params = ranker.params().clone();
    let report = grad_check(&objective, &mut params, 1e-5)?;
    Ok(GradcheckRun {
        model: kind,
        seed,
        lambda,
        max_rel_err: report.max_rel_err,
        checked: report.checked,
        passed: report.max_rel_err < GRADCHECK_TOLERANCE,
    })
}

fn cmd_gradcheck(a: GradcheckArgs, json: bool) -> Result<Outcome, CliError> {
    let kinds: Vec<ModelKind> = match a.model {
        Some(k) => vec![k],
        None => ModelKind::ALL.to_vec(),
    };
    let lambdas = match a.lambda {
        Some(l) => vec![l],
        None => vec![0.0, 1.0],
    };
    let mut runs = Vec::new();
    for kind in &kinds {
        for seed in a.seed..a.seed + a.seeds.max(1) {
            for &lambda in &lambdas {
                runs.push(gradcheck_once(*kind, seed, lambda, a.break_gradient)?);
            }
        }
    }
    let max = runs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let passed = runs.iter().all(|r| r.passed);
    let stdout = if json {
        to_json(&serde_json::json!({"max_rel_err": max, "passed": passed, "runs": runs}))
    } else {
        let mut s = String::new();
        for r in &runs {
            let _ = writeln!(
                s,
                "{:<12} seed {:<3} λ={:<4} max rel err {:.3e} ({} params) {}",
                r.model.to_string(),
                r.seed,
                r.lambda,
                r.max_rel_err,
                r.checked,
                if r.passed { "ok" } else { "FAILED" }
            );
        }
        let _ = writeln!(s, "max relative error {max:.3e}");
        s
    };
    Ok(Outcome {
        stdout,
        stderr: String::new(),
        code: if passed { 0 } else { 1 },
    })
}
