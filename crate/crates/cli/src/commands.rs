//! Command-line surface. [`run`] is the whole program minus process setup,
//! so tests can drive it with in-memory streams.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hedge_core::checkpoint::load_checkpoint;
use hedge_core::corpus::{
    attach_heuristic_pos, attach_pos, prepare, tokenize_spans, CleanConfig, Corpus, Label,
    PosSource, PrepareOptions, Sentence, MAX_LEN,
};
use hedge_core::gradcheck::{run_checks, standard_checks, LayerCheck, TOLERANCE};
use hedge_core::metrics::MetricsReport;
use hedge_core::models::{predict, THRESHOLD};
use hedge_core::training::evaluate;
use serde::Deserialize;
use toml::Table;

use crate::error::CliError;
use crate::run::{execute, fresh_dir, load_words, resolve_spec, RunRequest};
use crate::settings::{parse_override, read_table, Settings};
use crate::sweep::{run_sweep, Manifest};

pub const DATA_DIR_ENV: &str = "HEDGE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "hedge",
    version,
    about = "Sentence-level uncertainty detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, tag and split the XML corpus into a prepared directory.
    Prepare(PrepareArgs),
    /// Train one model on a prepared corpus.
    Train(TrainArgs),
    /// Score a checkpoint on a prepared split.
    Evaluate(EvaluateArgs),
    /// Print P(uncertain) and a label for each input sentence.
    Predict(PredictArgs),
    /// Run a grid of presets x embeddings x seeds from a TOML manifest.
    Sweep(SweepArgs),
    /// Compare analytic and numerical gradients for every layer type.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Training XML [default: $HEDGE_DATA_DIR/train.xml]
    #[arg(long)]
    pub train_xml: Option<PathBuf>,
    /// Evaluation XML [default: $HEDGE_DATA_DIR/eval.xml]
    #[arg(long)]
    pub eval_xml: Option<PathBuf>,
    /// Directory with train.pos and eval.pos tag files
    #[arg(long, conflicts_with = "heuristic_pos")]
    pub pos_sidecar: Option<PathBuf>,
    /// Tag with the built-in rule tagger instead of a sidecar
    #[arg(long)]
    pub heuristic_pos: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub no_lowercase: bool,
    #[arg(long, default_value_t = 0.1)]
    pub dev_ratio: f64,
    #[arg(long, default_value_t = MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared corpus [default: $HEDGE_DATA_DIR/prepared]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub preset: String,
    /// Word vector text file (required unless the preset is POS-only)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file of flat settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. --set lr=0.05 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared corpus [default: $HEDGE_DATA_DIR/prepared]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "eval", value_parser = ["train", "dev", "eval"])]
    pub split: String,
    /// Also write the metrics JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One sentence per line [default: stdin]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Input lines are JSON objects with `text` or `tokens` (and optional `pos`)
    #[arg(long)]
    pub jsonl: bool,
    /// File of space-separated POS tags, one line per input sentence
    #[arg(long, conflicts_with = "heuristic_pos")]
    pub pos_sidecar: Option<PathBuf>,
    #[arg(long)]
    pub heuristic_pos: bool,
    /// Keep case even if the model was trained on lowercased text
    #[arg(long)]
    pub no_lowercase: bool,
    #[arg(long, default_value_t = THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel training jobs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => cmd_prepare(a, out, err),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, stdin, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Gradcheck(a) => standard_checks(a.seed)
            .map_err(CliError::from)
            .and_then(|checks| report_gradcheck(&checks, out)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn data_path(flag: Option<PathBuf>, name: &str, what: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(Path::new(&dir).join(name)),
        None => Err(CliError::usage(format!(
            "no {what} given and {DATA_DIR_ENV} is not set"
        ))),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{} is not a directory",
            path.display()
        )))
    }
}

fn cmd_prepare(a: PrepareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let train_xml = data_path(a.train_xml, "train.xml", "--train-xml")?;
    let eval_xml = data_path(a.eval_xml, "eval.xml", "--eval-xml")?;
    require_file(&train_xml)?;
    require_file(&eval_xml)?;
    let pos = match (a.pos_sidecar, a.heuristic_pos) {
        (Some(dir), _) => {
            require_dir(&dir)?;
            for f in ["train.pos", "eval.pos"] {
                require_file(&dir.join(f))?;
            }
            PosSource::Sidecar(dir)
        }
        (None, true) => {
            writeln!(
                err,
                "WARNING: using the built-in heuristic POS tagger; POS features will be \
                 noisier than those from a trained tagger"
            )?;
            PosSource::Heuristic
        }
        (None, false) => return Err(CliError::usage("pass --pos-sidecar DIR or --heuristic-pos")),
    };
    fresh_dir(&a.out, a.overwrite)?;
    let opts = PrepareOptions {
        train_xml,
        eval_xml,
        out_dir: a.out.clone(),
        pos,
        clean: CleanConfig {
            lowercase: !a.no_lowercase,
            ..CleanConfig::default()
        },
        dev_ratio: a.dev_ratio,
        seed: a.seed,
        max_len: a.max_len,
    };
    let (stats, warnings) = prepare(&opts)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    for (name, s) in [
        ("train", &stats.train),
        ("dev", &stats.dev),
        ("eval", &stats.eval),
    ] {
        writeln!(
            out,
            "{name}: {} sentences ({} certain, {} uncertain, {} empty)",
            s.sentences, s.certain, s.uncertain, s.empty_after_cleaning
        )?;
    }
    writeln!(
        out,
        "certain fraction (train + eval): {:.4}",
        stats.certain_fraction_all
    )?;
    writeln!(
        out,
        "vocabulary: {} types, {} POS tags",
        stats.vocab_size,
        stats.tagset.len()
    )?;
    if !warnings.is_empty() {
        writeln!(
            out,
            "{} cue alignment warnings (see stats.json)",
            warnings.len()
        )?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus_dir = data_path(a.corpus, "prepared", "--corpus")?;
    require_dir(&corpus_dir)?;
    let mut layers = Vec::new();
    if let Some(path) = &a.config {
        layers.push(read_table(path)?);
    }
    let mut cli = Table::new();
    for pair in &a.overrides {
        let (k, v) = parse_override(pair)?;
        cli.insert(k, v);
    }
    if let Some(seed) = a.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::usage("--seed is too large"))?;
        cli.insert("seed".into(), toml::Value::Integer(seed));
    }
    layers.push(cli);
    let settings = Settings::from_layers(&layers)?;
    let spec = resolve_spec(&a.preset, &settings)?;
    if let Some(p) = &a.embeddings {
        require_file(p)?;
    }
    if spec.uses_words() && a.embeddings.is_none() {
        return Err(CliError::usage(format!(
            "preset `{}` reads word vectors; pass --embeddings",
            a.preset
        )));
    }
    let corpus = Corpus::load(&corpus_dir)?;
    fresh_dir(&a.out, a.overwrite)?;
    let words = load_words(&spec, a.embeddings.as_deref(), &corpus, &settings)?;
    if let Some((_, report)) = &words {
        writeln!(
            out,
            "embeddings: {} of {} corpus types found ({:.1}%)",
            report.loaded,
            report.requested,
            100.0 * report.coverage()
        )?;
    }
    let summary = execute(RunRequest {
        corpus: &corpus,
        corpus_dir: &corpus_dir,
        preset: &a.preset,
        spec,
        words,
        embeddings_path: a.embeddings.clone(),
        settings,
        out_dir: &a.out,
        score_eval: false,
    })?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    writeln!(
        out,
        "best dev F1 {} (epoch {})",
        fmt(summary.best_dev_f1_x100),
        summary
            .best_epoch
            .map_or("-".to_string(), |e| e.to_string())
    )?;
    writeln!(out, "final dev F1 {}", fmt(summary.final_dev_f1_x100))?;
    writeln!(out, "train F1 {:.2}", summary.train.f1_x100)?;
    writeln!(out, "wrote {}", a.out.display())?;
    match summary.aborted {
        Some(reason) => Err(CliError::failure(format!("training aborted: {reason}"))),
        None => Ok(()),
    }
}

fn meta_max_len(meta: &serde_json::Value) -> usize {
    meta.pointer("/train/max_len")
        .and_then(serde_json::Value::as_u64)
        .map_or(MAX_LEN, |v| v as usize)
}

fn meta_batch(meta: &serde_json::Value) -> usize {
    meta.pointer("/train/batch_size")
        .and_then(serde_json::Value::as_u64)
        .map_or(64, |v| v as usize)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.checkpoint)?;
    let corpus_dir = data_path(a.corpus, "prepared", "--corpus")?;
    require_dir(&corpus_dir)?;
    let (model, header) = load_checkpoint(&a.checkpoint)?;
    let corpus = Corpus::load(&corpus_dir)?;
    let hash = corpus.vocab.hash();
    if hash != header.corpus_vocab_hash {
        return Err(CliError::usage(format!(
            "checkpoint was trained on a corpus with vocabulary hash {}, but {} has {hash}",
            header.corpus_vocab_hash,
            corpus_dir.display()
        )));
    }
    let split = corpus
        .split(&a.split)
        .expect("split names are validated by clap");
    let report: MetricsReport = evaluate(
        &model,
        split,
        meta_max_len(&header.meta),
        meta_batch(&header.meta),
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    writeln!(out, "{json}")?;
    if let Some(path) = &a.out {
        std::fs::write(path, json + "\n")
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictLine {
    text: Option<String>,
    tokens: Option<Vec<String>>,
    pos: Option<Vec<String>>,
}

fn cmd_predict(
    a: PredictArgs,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::usage("--threshold must lie in [0, 1]"));
    }
    require_file(&a.checkpoint)?;
    if let Some(p) = &a.pos_sidecar {
        require_file(p)?;
    }
    let (model, header) = load_checkpoint(&a.checkpoint)?;
    let trained_lowercase = header
        .meta
        .get("lowercase")
        .and_then(serde_json::Value::as_bool)
        .unwrap_or(true);
    let clean = CleanConfig {
        lowercase: trained_lowercase && !a.no_lowercase,
        ..CleanConfig::default()
    };

    let text = match &a.input {
        Some(p) => {
            require_file(p)?;
            std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            s
        }
    };

    let mut display = Vec::new();
    let mut sentences = Vec::new();
    let mut inline_pos = false;
    for (n, line) in text.lines().enumerate() {
        let id = format!("line{}", n + 1);
        if a.jsonl {
            if line.trim().is_empty() {
                continue;
            }
            let item: PredictLine = serde_json::from_str(line)
                .map_err(|e| CliError::usage(format!("input line {}: {e}", n + 1)))?;
            let (tokens, shown) = match (item.tokens, item.text) {
                (Some(t), _) => {
                    let shown = t.join(" ");
                    (t, shown)
                }
                (None, Some(raw)) => (clean_tokens(&raw, &clean), raw),
                (None, None) => {
                    return Err(CliError::usage(format!(
                        "input line {}: needs `text` or `tokens`",
                        n + 1
                    )))
                }
            };
            let mut s = Sentence::new(id, tokens, Label::Certain);
            if let Some(pos) = item.pos {
                if pos.len() != s.tokens.len() {
                    return Err(CliError::usage(format!(
                        "input line {}: {} tags for {} tokens",
                        n + 1,
                        pos.len(),
                        s.tokens.len()
                    )));
                }
                s.pos = pos;
                inline_pos = true;
            }
            sentences.push(s);
            display.push(shown);
        } else {
            sentences.push(Sentence::new(
                id,
                clean_tokens(line, &clean),
                Label::Certain,
            ));
            display.push(line.to_string());
        }
    }

    if model.spec.uses_pos() {
        match (&a.pos_sidecar, a.heuristic_pos) {
            (Some(path), _) => {
                let side = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                attach_pos(&mut sentences, &side)?;
            }
            (None, true) => attach_heuristic_pos(&mut sentences),
            (None, false)
                if inline_pos && sentences.iter().all(|s| s.pos.len() == s.tokens.len()) => {}
            (None, false) => {
                return Err(CliError::usage(
                    "this model reads POS tags; pass --pos-sidecar FILE or --heuristic-pos",
                ))
            }
        }
    }

    let probs = model.predict_sentences(
        &sentences,
        meta_max_len(&header.meta),
        meta_batch(&header.meta),
    )?;
    for ((p, label), shown) in probs.iter().zip(predict(&probs, a.threshold)).zip(&display) {
        let label = if label.is_uncertain() {
            "uncertain"
        } else {
            "certain"
        };
        writeln!(out, "{p}\t{label}\t{shown}")?;
    }
    Ok(())
}

fn clean_tokens(raw: &str, clean: &CleanConfig) -> Vec<String> {
    tokenize_spans(raw, clean)
        .into_iter()
        .map(|s| s.text)
        .collect()
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.manifest)?;
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let report = run_sweep(&manifest, &a.out, a.jobs, a.overwrite)?;
    let md = report.to_markdown();
    let write = |name: &str, text: String| {
        let path = a.out.join(name);
        std::fs::write(&path, text)
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
    };
    write("report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    write("report.md", md.clone())?;
    write!(out, "{md}")?;
    match report.failures() {
        0 => Ok(()),
        n => Err(CliError::failure(format!(
            "{n} run(s) failed; see report.json"
        ))),
    }
}

/// Runs the checks, printing one line per layer. Fails (exit 1) when any
/// layer exceeds the tolerance.
pub fn report_gradcheck(checks: &[LayerCheck], out: &mut dyn Write) -> Result<(), CliError> {
    let results = run_checks(checks)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<24} max error {:.3e}  {verdict}",
            r.name, r.max_error
        )?;
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::failure(format!(
            "{failed} layer(s) exceed the gradient tolerance {TOLERANCE:e}"
        )));
    }
    writeln!(out, "all {} layers within {TOLERANCE:e}", results.len())?;
    Ok(())
}
