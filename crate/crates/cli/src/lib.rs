//! The `capeval` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use capeval_core::agreement::{
    empirical_agreement, estimate_p, load_pos_annotations, model_curve, simulate, top_words,
    ModelParams, WordAgreementPoint, SIMULATED_FILLER, SIMULATED_WORD,
};
use capeval_core::dataset_io::{load_submission, ReferenceFormat, ReferenceStore};
use capeval_core::engine::{human_split, HeldOut};
use capeval_core::meteor::SynonymLexicon;
use capeval_core::{score, tokenize, EngineConfig, EngineError, ImageId, MetricReport};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "capeval", version, about = "Caption evaluation metrics, human agreement analysis and a scoring server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the tokenized form of each argument, or of each stdin line.
    Tokenize { text: Vec<String> },
    /// Score a submission against a reference set.
    Score(ScoreArgs),
    /// Caption-level and word-level agreement of a held-out human caption.
    Agreement(AgreementArgs),
    /// Write a reference file drawn from the word-agreement model.
    Simulate(SimulateArgs),
    /// Run the scoring server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefFormatArg {
    Simple,
    CocoAnnotations,
}

impl From<RefFormatArg> for ReferenceFormat {
    fn from(f: RefFormatArg) -> Self {
        match f {
            RefFormatArg::Simple => ReferenceFormat::Simple,
            RefFormatArg::CocoAnnotations => ReferenceFormat::CocoAnnotations,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    /// Reference captions.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, value_enum, default_value = "simple")]
    pub ref_format: RefFormatArg,
    /// Split name recorded in the report; also selects the file inside a
    /// zipped submission.
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// TOML file with `rouge`, `meteor` and `cider` parameter tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synonym classes for METEOR, one class per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// ROUGE F-measure weight on recall.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Largest gap allowed inside a ROUGE-S skip bigram.
    #[arg(long)]
    pub max_gap: Option<usize>,
    /// CIDEr-D length penalty width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// METEOR recall weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// METEOR fragmentation penalty scale.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// METEOR fragmentation penalty exponent.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Also report ROUGE-N for these orders.
    #[arg(long, value_delimiter = ',')]
    pub rouge_n: Vec<usize>,
    /// Also report ROUGE-S.
    #[arg(long)]
    pub rouge_s: bool,
    /// Also report CIDEr without clipping or length penalty.
    #[arg(long)]
    pub cider_plain: bool,
}

impl MetricArgs {
    pub fn engine_config(&self) -> anyhow::Result<EngineConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => EngineConfig::default(),
        };
        if let Some(p) = &self.lexicon {
            c.lexicon = Arc::new(SynonymLexicon::load(p)?);
        }
        if let Some(v) = self.beta {
            c.rouge.beta = v;
        }
        if let Some(v) = self.max_gap {
            c.rouge.max_gap = v;
        }
        if let Some(v) = self.sigma {
            c.cider.sigma = v;
        }
        if let Some(v) = self.alpha {
            c.meteor.alpha = v;
        }
        if let Some(v) = self.gamma {
            c.meteor.gamma = v;
        }
        if let Some(v) = self.theta {
            c.meteor.theta = v;
        }
        c.rouge_n.extend(&self.rouge_n);
        c.rouge_s |= self.rouge_s;
        c.cider_plain |= self.cider_plain;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub refs: ReferenceArgs,
    /// Candidate captions: a JSON array or a zip holding one.
    #[arg(long)]
    pub submission: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    /// Include per-image scores in the table output.
    #[arg(long)]
    pub per_image: bool,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[command(flatten)]
    pub refs: ReferenceArgs,
    /// Number of reference captions kept per image.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Index of the held-out caption; the last caption by default.
    #[arg(long)]
    pub held_out: Option<usize>,
    /// Analyse the most frequent words.
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    /// Analyse exactly these words instead.
    #[arg(long, value_delimiter = ',')]
    pub words: Vec<String>,
    /// `word tag` lines used to group the word table.
    #[arg(long)]
    pub pos: Option<PathBuf>,
    /// Write `word precision recall p_hat model_precision` columns here.
    #[arg(long)]
    pub points_out: Option<PathBuf>,
    /// Skip the caption-level metrics.
    #[arg(long)]
    pub words_only: bool,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input.
    Parse(anyhow::Error),
    /// The submission does not cover the reference set.
    Validation(String),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(e) => write!(f, "error: {e:#}"),
            CliError::Validation(v) => write!(f, "submission failed validation:\n{v}"),
            CliError::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

fn parse_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Parse(e.into())
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Validation(v) => CliError::Validation(v.to_string()),
            EngineError::Dataset(d) => CliError::Parse(d.into()),
            EngineError::Metric(m) => CliError::Internal(m.into()),
        }
    }
}

fn load_refs(args: &ReferenceArgs) -> Result<ReferenceStore, CliError> {
    ReferenceStore::load(&args.refs, args.ref_format.into(), args.split.as_str())
        .with_context(|| format!("loading references from {}", args.refs.display()))
        .map_err(CliError::Parse)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Tokenize { text } => cmd_tokenize(&text, out),
        Command::Score(args) => cmd_score(&args, out),
        Command::Agreement(args) => cmd_agreement(&args, out),
        Command::Simulate(args) => cmd_simulate(&args, out),
        Command::Serve { config } => cmd_serve(&config),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Internal(e.into())
}

pub fn cmd_tokenize(text: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    if text.is_empty() {
        for line in std::io::stdin().lock().lines() {
            writeln!(out, "{}", tokenize(&line.map_err(parse_err)?)).map_err(io_err)?;
        }
    } else {
        for t in text {
            writeln!(out, "{}", tokenize(t)).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = args.metrics.engine_config().map_err(CliError::Parse)?;
    let refs = load_refs(&args.refs)?;
    let sub = load_submission(&args.submission, &args.refs.split)
        .with_context(|| format!("loading submission from {}", args.submission.display()))
        .map_err(CliError::Parse)?;
    let report = score(&sub, &refs, &config)?;
    match args.format {
        OutputFormat::Json => writeln!(out, "{}", report.to_json_string()),
        OutputFormat::Table => write!(out, "{}", report_table(&report, args.per_image)),
    }
    .map_err(io_err)
}

fn fmt_score(v: f64) -> String {
    format!("{v:.4}")
}

/// Left-aligned first column, right-aligned others.
fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    let line = |cells: &mut dyn Iterator<Item = &str>, s: &mut String| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut header.iter().copied(), &mut s);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(s, "{}", rule.join("  "));
    for r in rows {
        line(&mut r.iter().map(String::as_str), &mut s);
    }
    s
}

pub fn report_table(report: &MetricReport, per_image: bool) -> String {
    let rows: Vec<Vec<String>> = report.scores.iter().map(|(k, v)| vec![k.clone(), fmt_score(*v)]).collect();
    let mut s = format!("split: {}  images: {}\n\n", report.split, report.provenance.num_images);
    s.push_str(&render_table(&["metric", "score"], &rows));
    if per_image {
        let rows: Vec<Vec<String>> = report
            .per_image
            .iter()
            .map(|p| vec![p.image_id.to_string(), fmt_score(p.rouge_l), fmt_score(p.meteor), fmt_score(p.cider_d)])
            .collect();
        s.push('\n');
        s.push_str(&render_table(&["image_id", "ROUGE-L", "METEOR", "CIDEr-D"], &rows));
    }
    s
}

#[derive(Debug, Serialize)]
pub struct WordRow {
    pub word: String,
    pub precision: f64,
    pub recall: f64,
    pub p_hat: f64,
    pub model_precision: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AgreementOutput {
    pub k: usize,
    pub images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_scores: Option<BTreeMap<String, f64>>,
    pub words: Vec<WordRow>,
}

/// Rows for words with a defined recall, in vocabulary order.
pub fn word_rows(points: &[WordAgreementPoint], k: usize) -> Vec<WordRow> {
    points
        .iter()
        .filter_map(|p| {
            let p_hat = estimate_p(p).ok()?;
            let (model_precision, _) = model_curve(p_hat, k).ok()?;
            Some(WordRow {
                word: p.word.clone(),
                precision: p.precision,
                recall: p.recall.unwrap_or(0.0),
                p_hat,
                model_precision,
                pos: None,
            })
        })
        .collect()
}

pub fn cmd_agreement(args: &AgreementArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let refs = load_refs(&args.refs)?;
    let held_out = args.held_out.map_or(HeldOut::Last, HeldOut::Index);
    let split = human_split(&refs, args.k, held_out)?;

    let caption_scores = if args.words_only {
        None
    } else {
        let config = args.metrics.engine_config().map_err(CliError::Parse)?;
        Some(score(&split.held_out, &split.references, &config)?.scores)
    };

    let vocab =
        if args.words.is_empty() { top_words(&split.agreement, args.vocab_size) } else { args.words.clone() };
    let mut words = if vocab.is_empty() {
        Vec::new()
    } else {
        let points = empirical_agreement(&split.agreement, &vocab).map_err(|e| CliError::Internal(e.into()))?;
        word_rows(&points, args.k)
    };
    if let Some(path) = &args.pos {
        let pos = load_pos_annotations(path).map_err(parse_err)?;
        for row in &mut words {
            row.pos = Some(pos.get(&row.word).cloned().unwrap_or_else(|| "unknown".into()));
        }
    }
    if let Some(path) = &args.points_out {
        let mut text = String::from("word\tprecision\trecall\tp_hat\tmodel_precision\n");
        for r in &words {
            let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}", r.word, r.precision, r.recall, r.p_hat, r.model_precision);
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(CliError::Internal)?;
    }

    let output = AgreementOutput { k: args.k, images: split.agreement.len(), caption_scores, words };
    match args.format {
        OutputFormat::Json => {
            writeln!(out, "{}", serde_json::to_string(&output).map_err(|e| CliError::Internal(e.into()))?)
        }
        OutputFormat::Table => write!(out, "{}", agreement_table(&output)),
    }
    .map_err(io_err)
}

pub fn agreement_table(o: &AgreementOutput) -> String {
    let mut s = format!("images: {}  k: {}\n", o.images, o.k);
    if let Some(scores) = &o.caption_scores {
        let rows: Vec<Vec<String>> = scores.iter().map(|(k, v)| vec![k.clone(), fmt_score(*v)]).collect();
        s.push('\n');
        s.push_str(&render_table(&["metric", "score"], &rows));
    }
    let with_pos = o.words.iter().any(|w| w.pos.is_some());
    let mut header = vec!["word", "H_p", "H_r", "p_hat", "model_H_p"];
    if with_pos {
        header.push("pos");
    }
    let rows: Vec<Vec<String>> = o
        .words
        .iter()
        .map(|w| {
            let mut r = vec![
                w.word.clone(),
                fmt_score(w.precision),
                fmt_score(w.recall),
                fmt_score(w.p_hat),
                fmt_score(w.model_precision),
            ];
            if with_pos {
                r.push(w.pos.clone().unwrap_or_default());
            }
            r
        })
        .collect();
    s.push('\n');
    s.push_str(&render_table(&header, &rows));
    s
}

/// Simulated images as a simple-format reference file: `k` reference
/// captions followed by the held-out caption.
pub fn simulated_references(params: &ModelParams, n: usize, seed: u64) -> Result<ReferenceStore, CliError> {
    let data = simulate(params, n, seed).map_err(|e| CliError::Parse(e.into()))?;
    let render = |s: &capeval_core::TokenSeq| {
        if s.contains(SIMULATED_WORD) {
            format!("{SIMULATED_FILLER} {SIMULATED_WORD}")
        } else {
            SIMULATED_FILLER.to_string()
        }
    };
    let mut store = ReferenceStore::new("simulated");
    for img in data.images() {
        let caps = img.first_k.iter().chain(std::iter::once(&img.held_out)).map(render);
        store.insert(ImageId(img.image_id.0), caps);
    }
    Ok(store)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = ModelParams::new(args.p, args.q, args.k).map_err(|e| CliError::Parse(e.into()))?;
    let json = simulated_references(&params, args.n, args.seed)?.to_simple_json();
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Internal),
        None => writeln!(out, "{json}").map_err(io_err),
    }
}

fn cmd_serve(config: &Path) -> Result<(), CliError> {
    let config = capeval_server::ServerConfig::load(config).map_err(parse_err)?;
    let runtime = tokio::runtime::Runtime::new().map_err(io_err)?;
    runtime.block_on(capeval_server::run(config)).map_err(|e| match e {
        capeval_server::ConfigError::Io(..) => CliError::Internal(e.into()),
        other => CliError::Parse(other.into()),
    })
}
