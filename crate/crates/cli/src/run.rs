//! One training run: preset + embeddings + settings -> run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hedge_core::checkpoint::save_checkpoint;
use hedge_core::corpus::{Corpus, CorpusStats, STATS_FILE};
use hedge_core::embeddings::{load_vectors, EmbeddingTable, LoadReport};
use hedge_core::metrics::MetricsReport;
use hedge_core::models::{build_model, preset, ModelSpec};
use hedge_core::training::{evaluate, sample_mean_f1, train};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::settings::Settings;

pub const BEST_CKPT: &str = "model.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Refuses to reuse a non-empty directory unless `overwrite` is set.
pub fn fresh_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    let occupied = std::fs::read_dir(dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied && !overwrite {
        return Err(CliError::usage(format!(
            "{} already exists and is not empty; pick a new directory or pass --overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))
}

pub fn resolve_spec(preset_name: &str, settings: &Settings) -> Result<ModelSpec, CliError> {
    let mut spec = preset(preset_name)?;
    settings.model.apply(&mut spec);
    spec.validate()?;
    Ok(spec)
}

/// Loads the word table when the spec needs one.
pub fn load_words(
    spec: &ModelSpec,
    embeddings: Option<&Path>,
    corpus: &Corpus,
    settings: &Settings,
) -> Result<Option<(EmbeddingTable, LoadReport)>, CliError> {
    if !spec.uses_words() {
        return Ok(None);
    }
    let path = embeddings
        .ok_or_else(|| CliError::usage("this preset reads word vectors; pass --embeddings"))?;
    if !path.exists() {
        return Err(CliError::usage(format!(
            "embeddings file {} does not exist",
            path.display()
        )));
    }
    Ok(Some(load_vectors(path, &corpus.vocab, settings.unk_init)?))
}

pub fn corpus_stats(dir: &Path) -> Option<CorpusStats> {
    let text = std::fs::read_to_string(dir.join(STATS_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub struct RunRequest<'a> {
    pub corpus: &'a Corpus,
    pub corpus_dir: &'a Path,
    pub preset: &'a str,
    pub spec: ModelSpec,
    pub words: Option<(EmbeddingTable, LoadReport)>,
    pub embeddings_path: Option<PathBuf>,
    pub settings: Settings,
    pub out_dir: &'a Path,
    /// Also score the eval split with the best checkpoint.
    pub score_eval: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: String,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_dev_f1_x100: Option<f64>,
    pub final_dev_f1_x100: Option<f64>,
    pub train: MetricsReport,
    pub eval: Option<MetricsReport>,
    /// Mean dev F1 over the sampling protocol epochs, when covered.
    pub dev_sample_mean_f1_x100: Option<f64>,
    pub aborted: Option<String>,
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
}

/// Trains, then writes checkpoints, history, timing, config and summary
/// into `out_dir` (which the caller has already claimed).
pub fn execute(req: RunRequest) -> Result<RunSummary, CliError> {
    let cfg = &req.settings.train;
    let (table, report) = match req.words {
        Some((t, r)) => (Some(t), Some(r)),
        None => (None, None),
    };
    let model = build_model(&req.spec, table, &req.corpus.tagset, cfg.seed)?;
    let lowercase = corpus_stats(req.corpus_dir).is_none_or(|s| s.lowercase);
    let config = json!({
        "preset": req.preset,
        "spec": req.spec,
        "train": cfg,
        "unk_init": req.settings.unk_init,
        "embeddings": req.embeddings_path.as_ref().map(|p| p.display().to_string()),
        "embedding_load": report,
        "corpus_vocab_hash": req.corpus.vocab.hash(),
        "lowercase": lowercase,
        "parameters": model.store.num_scalars(),
    });
    write(
        &req.out_dir.join(CONFIG_FILE),
        &(serde_json::to_string_pretty(&config)? + "\n"),
    )?;

    let outcome = train(model, &req.corpus.train, &req.corpus.dev, cfg)?;
    let history = outcome.history.to_jsonl()?;
    write(&req.out_dir.join(HISTORY_FILE), &history)?;
    let mut timing = String::new();
    for (r, s) in outcome.history.records.iter().zip(&outcome.wall_seconds) {
        writeln!(timing, "{}", json!({"epoch": r.epoch, "seconds": s})).expect("string write");
    }
    write(&req.out_dir.join(TIMING_FILE), &timing)?;

    let meta = json!({
        "preset": req.preset,
        "train": cfg,
        "lowercase": lowercase,
        "best_epoch": outcome.best_epoch,
    });
    let hash = req.corpus.vocab.hash();
    save_checkpoint(
        &req.out_dir.join(BEST_CKPT),
        &outcome.best,
        &hash,
        meta.clone(),
    )?;
    save_checkpoint(&req.out_dir.join(LAST_CKPT), &outcome.last, &hash, meta)?;

    let train_metrics = evaluate(
        &outcome.best,
        &req.corpus.train,
        cfg.max_len,
        cfg.batch_size,
    )?;
    let eval = if req.score_eval {
        Some(evaluate(
            &outcome.best,
            &req.corpus.eval,
            cfg.max_len,
            cfg.batch_size,
        )?)
    } else {
        None
    };
    let records = &outcome.history.records;
    let summary = RunSummary {
        preset: req.preset.to_string(),
        seed: cfg.seed,
        best_epoch: outcome.best_epoch,
        best_dev_f1_x100: outcome.history.best().map(|r| r.dev.f1_x100),
        final_dev_f1_x100: records.last().map(|r| r.dev.f1_x100),
        train: train_metrics,
        eval,
        dev_sample_mean_f1_x100: sample_mean_f1(
            &outcome.history,
            cfg.sample_start,
            cfg.eval_every,
            cfg.sample_count,
        )
        .ok(),
        aborted: outcome.aborted,
    };
    write(
        &req.out_dir.join(SUMMARY_FILE),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok(summary)
}
