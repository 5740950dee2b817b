//! Central-difference checks of every layer's backward pass, over both its
//! inputs and its parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, Sentence};
use crate::embeddings::{EmbeddingTable, Vocab};
use crate::error::Result;
use crate::layers::{
    dropout, embedding_lookup, AttentionPool, BiRnn, CellKind, ConvBank, Dense, EmbedSource,
    MhsaBlock, SeqMask,
};
use crate::models::{build_model, joint_input_combine, preset};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Tensor, Var};

pub const EPS: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

type Forward = Box<dyn Fn(&mut Ctx, &[Var]) -> Result<Var>>;

/// One layer instance: parameters, differentiable inputs and a forward
/// closure. Outputs are reduced to a scalar by a fixed random projection.
pub struct LayerCheck {
    pub name: String,
    pub store: ParamStore,
    pub inputs: Vec<Tensor>,
    pub training: bool,
    pub forward: Forward,
}

impl LayerCheck {
    pub fn new(name: &str, store: ParamStore, inputs: Vec<Tensor>, forward: Forward) -> Self {
        LayerCheck {
            name: name.to_string(),
            store,
            inputs,
            training: false,
            forward,
        }
    }

    fn loss(&self, store: &ParamStore, inputs: &[Tensor]) -> Result<f64> {
        Ok(self.run(store, inputs, false)?.0)
    }

    /// Loss value and, when `grads` is set, per-input and per-parameter
    /// gradients.
    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        store: &ParamStore,
        inputs: &[Tensor],
        grads: bool,
    ) -> Result<(f64, Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>)> {
        // Same dropout masks on every evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut ctx = Ctx::new(store, self.training, &mut rng);
        let vars: Vec<Var> = inputs.iter().map(|t| ctx.g.param(t)).collect();
        let out = (self.forward)(&mut ctx, &vars)?;
        let shape = ctx.g.shape(out).to_vec();
        let mut prng = ChaCha8Rng::seed_from_u64(7);
        let proj = ctx
            .g
            .constant(Tensor::uniform(&shape, -1.0, 1.0, &mut prng));
        let weighted = ctx.g.mul(out, proj)?;
        let loss = ctx.g.sum(weighted)?;
        let value = ctx.g.value(loss).data()[0];
        if !grads {
            return Ok((value, None));
        }
        let (g, pg) = ctx.backward_with_graph(loss)?;
        let input_grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                g.grad(v)
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect();
        let param_grads = store
            .ids()
            .zip(store.iter())
            .map(|(id, p)| {
                pg.get(id)
                    .map_or_else(|| vec![0.0; p.tensor.numel()], <[f64]>::to_vec)
            })
            .collect();
        Ok((value, Some((input_grads, param_grads))))
    }

    /// Largest relative error `|a - n| / max(1e-8, |a| + |n|)` over every
    /// input and parameter coordinate, with `n` from extrapolated central
    /// differences.
    pub fn max_error(&self, eps: f64) -> Result<f64> {
        let (_, grads) = self.run(&self.store, &self.inputs, true)?;
        let (input_grads, param_grads) = grads.expect("requested");
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        let mut worst: f64 = 0.0;
        let mut inputs = self.inputs.clone();
        for (i, analytic) in input_grads.iter().enumerate() {
            for (k, &a) in analytic.iter().enumerate() {
                let orig = inputs[i].data()[k];
                let n = richardson(eps, |h| {
                    inputs[i].data_mut()[k] = orig + h;
                    let fp = self.loss(&self.store, &inputs)?;
                    inputs[i].data_mut()[k] = orig - h;
                    let fm = self.loss(&self.store, &inputs)?;
                    inputs[i].data_mut()[k] = orig;
                    Ok((fp - fm) / (2.0 * h))
                })?;
                worst = worst.max(rel(a, n));
                if worst.is_nan() {
                    return Ok(f64::NAN);
                }
            }
        }
        let mut store = self.store.clone();
        let ids: Vec<_> = store.ids().collect();
        for (id, analytic) in ids.into_iter().zip(&param_grads) {
            for (k, &a) in analytic.iter().enumerate() {
                let orig = store.get(id).data()[k];
                let n = richardson(eps, |h| {
                    store.get_mut(id).data_mut()[k] = orig + h;
                    let fp = self.loss(&store, &self.inputs)?;
                    store.get_mut(id).data_mut()[k] = orig - h;
                    let fm = self.loss(&store, &self.inputs)?;
                    store.get_mut(id).data_mut()[k] = orig;
                    Ok((fp - fm) / (2.0 * h))
                })?;
                worst = worst.max(rel(a, n));
                if worst.is_nan() {
                    return Ok(f64::NAN);
                }
            }
        }
        Ok(worst)
    }
}

/// Central differences at `eps` and `eps / 2` combined so the `eps^2`
/// truncation term cancels.
fn richardson(eps: f64, mut diff: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let coarse = diff(eps)?;
    let fine = diff(eps / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn seq_inputs(r: &mut ChaCha8Rng, steps: usize, batch: usize, dim: usize) -> Vec<Tensor> {
    (0..steps)
        .map(|_| Tensor::uniform(&[batch, dim], -1.0, 1.0, r))
        .collect()
}

/// Seeded small instances of every layer, plus one end-to-end model.
pub fn standard_checks(seed: u64) -> Result<Vec<LayerCheck>> {
    let mut checks = Vec::new();
    let mut r = rng(seed);
    let (b, t, d, h) = (2, 4, 3, 4);
    let mask = SeqMask::from_lengths(vec![4, 2], t)?;

    // Embedding lookup through a trainable table.
    let mut store = ParamStore::new();
    let table = store.add("table", Tensor::uniform(&[5, d], -1.0, 1.0, &mut r), true)?;
    checks.push(LayerCheck::new(
        "embedding",
        store,
        vec![],
        Box::new(move |ctx, _| {
            embedding_lookup(
                ctx,
                EmbedSource::Trainable(table),
                &[3, 1, 4, 0],
                &[true, true, true, false],
            )
        }),
    ));

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "dense", d, h, &mut r)?;
    checks.push(LayerCheck::new(
        "dense",
        store,
        vec![Tensor::uniform(&[b, d], -1.0, 1.0, &mut r)],
        Box::new(move |ctx, x| dense.forward(ctx, x[0])),
    ));

    for (name, kind) in [("gru", CellKind::Gru), ("lstm", CellKind::Lstm)] {
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(kind, &mut store, name, d, h, true, &mut r)?;
        let m = mask.clone();
        checks.push(LayerCheck::new(
            name,
            store,
            seq_inputs(&mut r, t, b, d),
            Box::new(move |ctx, xs| {
                let out = rnn.forward(ctx, xs, &m)?;
                let mut parts = out.states;
                parts.push(out.last);
                ctx.g.concat_cols(&parts)
            }),
        ));
    }

    let mut store = ParamStore::new();
    let att = AttentionPool::new(&mut store, "att", h, 3, &mut r)?;
    let live = mask.flat();
    checks.push(LayerCheck::new(
        "attention_pool",
        store,
        seq_inputs(&mut r, t, b, h),
        Box::new(move |ctx, xs| Ok(att.forward(ctx, xs, &live)?.0)),
    ));

    let mut store = ParamStore::new();
    let block = MhsaBlock::new(&mut store, "mhsa", h, 2, 2 * h, &mut r)?;
    let m = mask.clone();
    checks.push(LayerCheck::new(
        "mhsa",
        store,
        vec![Tensor::uniform(&[b * t, h], -1.0, 1.0, &mut r)],
        Box::new(move |ctx, x| Ok(block.forward(ctx, x[0], &m)?.states)),
    ));

    let conv_mask = SeqMask::from_lengths(vec![6, 4], 6)?;
    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, "cnn", d, &[2, 3], 3, &mut r)?;
    let m = conv_mask.clone();
    checks.push(LayerCheck::new(
        "conv1d_maxpool",
        store,
        seq_inputs(&mut r, 6, b, d),
        Box::new(move |ctx, xs| bank.forward_maxpool(ctx, xs, &m)),
    ));

    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, "cnn", d, &[2, 3], 3, &mut r)?;
    let pools = [
        AttentionPool::new(&mut store, "att2", 3, 2, &mut r)?,
        AttentionPool::new(&mut store, "att3", 3, 2, &mut r)?,
    ];
    let m = conv_mask;
    checks.push(LayerCheck::new(
        "conv1d_attention",
        store,
        seq_inputs(&mut r, 6, b, d),
        Box::new(move |ctx, xs| {
            let maps = bank.feature_maps(ctx, xs, &m)?;
            let parts = maps
                .iter()
                .zip(&pools)
                .map(|(fm, p)| Ok(p.forward(ctx, &fm.positions, &fm.live_flat())?.0))
                .collect::<Result<Vec<_>>>()?;
            ctx.g.concat_cols(&parts)
        }),
    ));

    let mut drop = LayerCheck::new(
        "dropout",
        ParamStore::new(),
        vec![Tensor::uniform(&[b, h], -1.0, 1.0, &mut r)],
        Box::new(|ctx, x| dropout(ctx, x[0], 0.5)),
    );
    drop.training = true;
    checks.push(drop);

    checks.push(LayerCheck::new(
        "joint_input_combine",
        ParamStore::new(),
        vec![
            Tensor::uniform(&[t, d], -1.0, 1.0, &mut r),
            Tensor::uniform(&[t, 2], -1.0, 1.0, &mut r),
        ],
        Box::new(|ctx, x| joint_input_combine(&mut ctx.g, x[0], x[1])),
    ));

    checks.push(model_check(seed)?);
    Ok(checks)
}

/// The best preset, shrunk, trained through its loss with dropout on.
fn model_check(seed: u64) -> Result<LayerCheck> {
    let mut spec = preset("joint-latent-gru-lstm-att")?;
    spec.hidden = 3;
    spec.attention_dim = 2;
    spec.pos_dim = 2;
    let words = ["may", "rain", "the", "sun"];
    let mut r = rng(seed ^ 0x5eed);
    let vocab = Vocab::from_tokens(words);
    let mut rows = Tensor::uniform(&[vocab.len(), 3], -1.0, 1.0, &mut r);
    rows.data_mut()[..3].iter_mut().for_each(|v| *v = 0.0);
    let table = EmbeddingTable::new(vocab, rows, false)?;
    let tags = vec!["AUX".to_string(), "DET".to_string(), "NOUN".to_string()];
    let model = build_model(&spec, Some(table), &tags, seed)?;
    let sent = |id: &str, toks: &[&str], pos: &[&str], label| {
        let mut s = Sentence::new(id, toks.iter().map(|s| s.to_string()).collect(), label);
        s.pos = pos.iter().map(|s| s.to_string()).collect();
        s
    };
    let a = sent(
        "a",
        &["the", "sun", "may", "rain"],
        &["DET", "NOUN", "AUX", "NOUN"],
        Label::Uncertain,
    );
    let c = sent("c", &["the", "rain"], &["DET", "NOUN"], Label::Certain);
    let batch = model.encode_batch(&[&a, &c], 64, None)?;
    let store = model.store.clone();
    let mut check = LayerCheck::new(
        "model_joint_latent_bce",
        store,
        vec![],
        Box::new(move |ctx, _| {
            let z = model.logits(ctx, &batch)?;
            ctx.g.weighted_bce(z, &batch.targets, (0.6, 2.2))
        }),
    );
    check.training = true;
    Ok(check)
}

pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

pub fn run_checks(checks: &[LayerCheck]) -> Result<Vec<CheckResult>> {
    checks
        .iter()
        .map(|c| {
            Ok(CheckResult {
                name: c.name.clone(),
                max_error: c.max_error(EPS)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass() {
        let results = run_checks(&standard_checks(3).unwrap()).unwrap();
        for r in &results {
            eprintln!("{:24} {:.3e}", r.name, r.max_error);
        }
        assert!(results.iter().all(CheckResult::passed));
    }
}
