//! Class-weighted BCE, plain SGD and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, MAX_LEN};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::models::{predict, Model, THRESHOLD};
use crate::params::{Ctx, Gradients, ParamStore};
use crate::tensor::PROB_CLAMP;

/// Balanced inverse-frequency weights `w_c = N / (2 N_c)`.
pub fn class_weights(n_certain: usize, n_uncertain: usize) -> Result<(f64, f64)> {
    if n_certain == 0 || n_uncertain == 0 {
        return Err(Error::Config(format!(
            "class weighting needs both classes present (certain {n_certain}, uncertain {n_uncertain})"
        )));
    }
    let n = (n_certain + n_uncertain) as f64;
    Ok((n / (2.0 * n_certain as f64), n / (2.0 * n_uncertain as f64)))
}

/// Loss of one prediction, `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn weighted_bce(p: f64, y: f64, w: (f64, f64)) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(w.1 * y * p.ln() + w.0 * (1.0 - y) * (1.0 - p).ln())
}

/// `p <- p - lr * g` for every parameter with a gradient. Row 0 of padding
/// tables is left alone. Nothing is updated if any gradient is non-finite.
pub fn sgd_step(store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for (p, &id) in store.iter().zip(&ids) {
        if let Some(g) = grads.get(id) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
    }
    for (p, &id) in store.iter_mut().zip(&ids) {
        let Some(g) = grads.get(id) else { continue };
        let skip = if p.pad_row {
            p.tensor.shape().get(1).copied().unwrap_or(0)
        } else {
            0
        };
        for (v, d) in p.tensor.data_mut().iter_mut().zip(g).skip(skip) {
            *v -= lr * d;
        }
        p.tensor.zero_grad();
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Fixed inverse-frequency weights.
    #[default]
    Static,
    /// Inverse-frequency weights rescaled at each checkpoint by the
    /// per-class training error rate observed since the last one.
    ErrorRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub eval_every: usize,
    pub sample_count: usize,
    pub sample_start: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub weighting: Weighting,
    /// Multiply the learning rate by this after `patience` checkpoints
    /// without a dev F1 improvement (1.0 disables).
    pub lr_decay: f64,
    pub patience: usize,
    pub max_len: usize,
    /// Also score the training set at each checkpoint.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 0.1,
            epochs: 490,
            eval_every: 10,
            sample_count: 10,
            sample_start: 400,
            seed: 1,
            class_weighting: true,
            weighting: Weighting::Static,
            lr_decay: 0.5,
            patience: 5,
            max_len: MAX_LEN,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.sample_start == 0 {
            return bad("sample_start must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub weights: (f64, f64),
    pub dev: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<CheckpointRecord>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Format {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainHistory { records })
    }

    pub fn best(&self) -> Option<&CheckpointRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&CheckpointRecord>, r| match best {
                Some(b) if b.dev.f1 >= r.dev.f1 => Some(b),
                _ => Some(r),
            })
    }
}

/// Mean dev F1 (x100) at epochs `start, start+every, ..., start+(n-1)*every`.
pub fn sample_mean_f1(history: &TrainHistory, start: usize, every: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut sum = 0.0;
    for k in 0..n {
        let epoch = start + k * every;
        let rec = history
            .records
            .iter()
            .find(|r| r.epoch == epoch)
            .ok_or_else(|| {
                let have: Vec<String> = history
                    .records
                    .iter()
                    .map(|r| r.epoch.to_string())
                    .collect();
                Error::Contract(format!(
                    "no checkpoint at epoch {epoch}; available: [{}]",
                    have.join(", ")
                ))
            })?;
        sum += rec.dev.f1_x100;
    }
    Ok(sum / n as f64)
}

/// Inference-mode metrics over `sentences` (empty ones count as certain).
pub fn evaluate(
    model: &Model,
    sentences: &[Sentence],
    max_len: usize,
    batch_size: usize,
) -> Result<MetricsReport> {
    let probs = model.predict_sentences(sentences, max_len, batch_size)?;
    let gold: Vec<_> = sentences.iter().map(|s| s.label).collect();
    MetricsReport::evaluate(&predict(&probs, THRESHOLD), &gold)
}

pub struct TrainOutcome {
    /// Parameters at the best dev checkpoint (the initial model if no
    /// checkpoint was reached).
    pub best: Model,
    pub last: Model,
    pub history: TrainHistory,
    pub best_epoch: Option<usize>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub aborted: Option<String>,
    /// Seconds since start at each checkpoint (kept out of the history so
    /// the history stays reproducible).
    pub wall_seconds: Vec<f64>,
}

/// Per-class misclassification counts since the last checkpoint.
#[derive(Default)]
struct ErrorTally {
    seen: [u64; 2],
    wrong: [u64; 2],
}

impl ErrorTally {
    fn rates(&self) -> [f64; 2] {
        let r = |c: usize| {
            let e = if self.seen[c] == 0 {
                0.0
            } else {
                self.wrong[c] as f64 / self.seen[c] as f64
            };
            e.max(1e-3)
        };
        [r(0), r(1)]
    }
}

pub fn train(
    model: Model,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set: Vec<&Sentence> = train_set.iter().filter(|s| !s.is_empty()).collect();
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::Contract("dev set is empty".into()));
    }
    let n_unc = train_set.iter().filter(|s| s.label.is_uncertain()).count();
    let base = if cfg.class_weighting {
        class_weights(train_set.len() - n_unc, n_unc)?
    } else {
        (1.0, 1.0)
    };

    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = model;
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut history = TrainHistory::default();
    let mut wall_seconds = Vec::new();
    let mut weights = base;
    let mut lr = cfg.lr;
    let mut stale = 0;
    let mut tally = ErrorTally::default();
    let mut aborted = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let train_copy: Option<Vec<Sentence>> = cfg
        .eval_train
        .then(|| train_set.iter().map(|s| (*s).clone()).collect());

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sentence> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = model.encode_batch(&refs, cfg.max_len, None)?;
            let mut ctx = Ctx::new(&model.store, true, &mut rng);
            let z = model.logits(&mut ctx, &batch)?;
            for (zi, y) in ctx.g.value(z).data().iter().zip(&batch.targets) {
                let c = usize::from(*y > 0.5);
                tally.seen[c] += 1;
                if (*zi >= 0.0) != (c == 1) {
                    tally.wrong[c] += 1;
                }
            }
            let loss = ctx.g.weighted_bce(z, &batch.targets, weights)?;
            let value = ctx.g.value(loss).data()[0];
            if !value.is_finite() {
                aborted = Some(format!("non-finite loss at epoch {epoch}"));
                break 'epochs;
            }
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
            let grads = ctx.backward(loss)?;
            if let Err(e) = sgd_step(&mut model.store, &grads, lr) {
                aborted = Some(format!("{e} at epoch {epoch}"));
                break 'epochs;
            }
        }

        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let dev = evaluate(&model, dev_set, cfg.max_len, cfg.batch_size)?;
        let train_metrics = match &train_copy {
            Some(t) => Some(evaluate(&model, t, cfg.max_len, cfg.batch_size)?),
            None => None,
        };
        history.records.push(CheckpointRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            lr,
            weights,
            dev,
            train: train_metrics,
        });
        wall_seconds.push(start.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: loss {:.4} dev F1 {:.2}",
            loss_sum / seen as f64,
            dev.f1_x100
        );

        if dev.f1 > best_f1 {
            best_f1 = dev.f1;
            best = model.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience && cfg.lr_decay < 1.0 {
                lr *= cfg.lr_decay;
                stale = 0;
            }
        }
        if cfg.weighting == Weighting::ErrorRate {
            let [e0, e1] = tally.rates();
            let mean = (e0 + e1) / 2.0;
            weights = (base.0 * e0 / mean, base.1 * e1 / mean);
        }
        tally = ErrorTally::default();
    }

    Ok(TrainOutcome {
        best,
        last: model,
        history,
        best_epoch,
        aborted,
        wall_seconds,
    })
}
