//! Experiment grids: every (run x embedding file x seed) cell is trained,
//! scored on the eval split, and aggregated into mean / sample std per
//! (run, embedding) row.
//!
//! Manifest (TOML):
//!
//! ```toml
//! corpus = "prepared"          # relative to the manifest's directory
//! [settings]                   # flat settings shared by every run
//! epochs = 490
//!
//! [[run]]
//! name = "joint-input GRU"
//! preset = "joint-input-gru"
//! embeddings = ["glove.txt", "word2vec.txt"]
//! seeds = [1, 2, 3]
//! [run.settings]               # per-run overrides
//! lr = 0.05
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use hedge_core::corpus::Corpus;
use hedge_core::metrics::mean_std;
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::error::CliError;
use crate::run::{execute, fresh_dir, load_words, resolve_spec, RunRequest, RunSummary};
use crate::settings::Settings;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub corpus: PathBuf,
    #[serde(default)]
    pub settings: Table,
    #[serde(rename = "run")]
    pub runs: Vec<ManifestRun>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRun {
    pub name: String,
    pub preset: String,
    #[serde(default)]
    pub embeddings: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub settings: Table,
}

impl Manifest {
    /// Reads a manifest, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut m: Manifest = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.corpus = base.join(&m.corpus);
        for r in &mut m.runs {
            for e in &mut r.embeddings {
                *e = base.join(&*e);
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub eval_f1_x100: Option<f64>,
    pub dev_sample_mean_f1_x100: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub run: String,
    pub preset: String,
    pub embeddings: Option<String>,
    pub seeds: Vec<SeedResult>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub dev_sample_mean: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellReport>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|c| &c.seeds)
            .filter(|s| s.error.is_some())
            .count()
    }

    /// Markdown table with one row per (run, embedding) cell.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| run | preset | embeddings | eval F1 per seed | mean | std | dev sample mean |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|\n");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        for c in &self.cells {
            let per_seed: Vec<String> = c
                .seeds
                .iter()
                .map(|s| match (&s.error, s.eval_f1_x100) {
                    (Some(_), _) => format!("{}: failed", s.seed),
                    (None, v) => format!("{}: {}", s.seed, fmt(v)),
                })
                .collect();
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                c.run,
                c.preset,
                c.embeddings.as_deref().unwrap_or("-"),
                per_seed.join(", "),
                fmt(c.mean),
                fmt(c.std),
                fmt(c.dev_sample_mean)
            )
            .expect("string write");
        }
        out
    }
}

/// Mean and sample std of per-seed scores.
pub fn aggregate(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match mean_std(values) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Job {
    cell: usize,
    seed: u64,
    embeddings: Option<PathBuf>,
    settings: Settings,
    preset: String,
    dir: PathBuf,
}

/// Validates the whole manifest, then runs every job on `jobs` worker
/// threads. Individual failures are recorded and do not stop the sweep.
pub fn run_sweep(
    manifest: &Manifest,
    out_dir: &Path,
    jobs: usize,
    overwrite: bool,
) -> Result<SweepReport, CliError> {
    if manifest.runs.is_empty() {
        return Err(CliError::usage("manifest has no [[run]] entries"));
    }
    let corpus = Corpus::load(&manifest.corpus)?;
    let mut cells = Vec::new();
    let mut work = Vec::new();
    let mut names = HashSet::new();
    let mut dirs = HashSet::new();
    for run in &manifest.runs {
        if !names.insert(run.name.clone()) {
            return Err(CliError::usage(format!(
                "duplicate run name `{}`",
                run.name
            )));
        }
        if run.seeds.is_empty() {
            return Err(CliError::usage(format!(
                "run `{}` lists no seeds",
                run.name
            )));
        }
        let base = Settings::from_layers(&[manifest.settings.clone(), run.settings.clone()])?;
        let spec = resolve_spec(&run.preset, &base)?;
        let embeddings: Vec<Option<PathBuf>> = if spec.uses_words() {
            if run.embeddings.is_empty() {
                return Err(CliError::usage(format!(
                    "run `{}` needs at least one embeddings file",
                    run.name
                )));
            }
            for e in &run.embeddings {
                if !e.exists() {
                    return Err(CliError::usage(format!(
                        "embeddings file {} does not exist",
                        e.display()
                    )));
                }
            }
            run.embeddings.iter().cloned().map(Some).collect()
        } else {
            vec![None]
        };
        for emb in embeddings {
            let label = emb.as_ref().map(|p| {
                p.file_stem().map_or_else(
                    || p.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                )
            });
            let mut cell_dir = out_dir
                .join(slug(&run.name))
                .join(slug(label.as_deref().unwrap_or("pos")));
            let mut k = 1;
            while !dirs.insert(cell_dir.clone()) {
                k += 1;
                cell_dir = out_dir
                    .join(slug(&run.name))
                    .join(format!("{}-{k}", slug(label.as_deref().unwrap_or("pos"))));
            }
            let cell = cells.len();
            cells.push(CellReport {
                run: run.name.clone(),
                preset: run.preset.clone(),
                embeddings: emb.as_ref().map(|p| p.display().to_string()),
                seeds: Vec::new(),
                mean: None,
                std: None,
                dev_sample_mean: None,
            });
            for &seed in &run.seeds {
                let mut settings = base.clone();
                settings.train.seed = seed;
                work.push(Job {
                    cell,
                    seed,
                    embeddings: emb.clone(),
                    settings,
                    preset: run.preset.clone(),
                    dir: cell_dir.join(format!("seed-{seed}")),
                });
            }
        }
    }
    fresh_dir(out_dir, overwrite)?;

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunSummary, String>>>> =
        work.iter().map(|_| Mutex::new(None)).collect();
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(job) = work.get(i) else { break };
        let outcome = run_job(job, &corpus, &manifest.corpus, overwrite).map_err(|e| e.message);
        if let Err(e) = &outcome {
            log::error!("{} seed {}: {e}", job.preset, job.seed);
        }
        *results[i].lock().expect("unpoisoned") = Some(outcome);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(worker);
        }
    });

    for (job, result) in work.iter().zip(results) {
        let result = result
            .into_inner()
            .expect("unpoisoned")
            .expect("every job ran");
        let seed = match result {
            Ok(summary) => SeedResult {
                seed: job.seed,
                dir: job.dir.clone(),
                eval_f1_x100: summary.eval.map(|m| m.f1_x100),
                dev_sample_mean_f1_x100: summary.dev_sample_mean_f1_x100,
                error: summary.aborted,
            },
            Err(e) => SeedResult {
                seed: job.seed,
                dir: job.dir.clone(),
                eval_f1_x100: None,
                dev_sample_mean_f1_x100: None,
                error: Some(e),
            },
        };
        cells[job.cell].seeds.push(seed);
    }
    for c in &mut cells {
        let ok = |s: &&SeedResult| s.error.is_none();
        let scores: Vec<f64> = c
            .seeds
            .iter()
            .filter(ok)
            .filter_map(|s| s.eval_f1_x100)
            .collect();
        (c.mean, c.std) = aggregate(&scores);
        let dev: Vec<f64> = c
            .seeds
            .iter()
            .filter(ok)
            .filter_map(|s| s.dev_sample_mean_f1_x100)
            .collect();
        c.dev_sample_mean = aggregate(&dev).0;
    }
    Ok(SweepReport { cells })
}

fn run_job(
    job: &Job,
    corpus: &Corpus,
    corpus_dir: &Path,
    overwrite: bool,
) -> Result<RunSummary, CliError> {
    let spec = resolve_spec(&job.preset, &job.settings)?;
    fresh_dir(&job.dir, overwrite)?;
    let words = load_words(&spec, job.embeddings.as_deref(), corpus, &job.settings)?;
    execute(RunRequest {
        corpus,
        corpus_dir,
        preset: &job.preset,
        spec,
        words,
        embeddings_path: job.embeddings.clone(),
        settings: job.settings.clone(),
        out_dir: &job.dir,
        score_eval: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_seed_mean_and_std() {
        let (m, s) = aggregate(&[68.25, 67.69]);
        assert_eq!(format!("{:.2}", m.unwrap()), "67.97");
        assert_eq!(format!("{:.1}", s.unwrap()), "0.4");
        assert_eq!(aggregate(&[]), (None, None));
    }

    #[test]
    fn markdown_has_one_row_per_cell() {
        let report = SweepReport {
            cells: vec![CellReport {
                run: "GRU".into(),
                preset: "joint-input-gru".into(),
                embeddings: Some("glove".into()),
                seeds: vec![SeedResult {
                    seed: 1,
                    dir: "x".into(),
                    eval_f1_x100: Some(68.25),
                    dev_sample_mean_f1_x100: None,
                    error: None,
                }],
                mean: Some(68.25),
                std: Some(0.0),
                dev_sample_mean: None,
            }],
        };
        let md = report.to_markdown();
        assert_eq!(md.lines().count(), 3);
        assert!(
            md.contains("| GRU | joint-input-gru | glove | 1: 68.25 | 68.25 | 0.00 | - |"),
            "{md}"
        );
    }
}
