//! Layer primitives: embeddings, GRU/LSTM cells, bidirectional recurrence,
//! additive attention pooling, multi-head self-attention, convolution with
//! max-over-time pooling, dropout and dense heads.
//!
//! Sequence layers work on batches. A recurrent sequence is time-major: one
//! `[B, D]` node per step. The transformer works on a batch-major
//! `[B*T, D]` node. Masked positions are never allowed to influence an
//! unmasked output, so padding a batch further leaves every live output
//! bit-identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Prefix padding mask for a batch of sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqMask {
    lengths: Vec<usize>,
    len: usize,
}

impl SeqMask {
    pub fn from_lengths(lengths: Vec<usize>, len: usize) -> Result<Self> {
        if lengths.is_empty() || len == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l > len) {
            return Err(Error::Contract(format!(
                "length {bad} exceeds padded length {len}"
            )));
        }
        Ok(SeqMask { lengths, len })
    }

    /// Builds from per-position flags (batch-major `[B*T]`), which must form
    /// a prefix in every row.
    pub fn from_flags(flags: &[bool], batch: usize) -> Result<Self> {
        if batch == 0 || !flags.len().is_multiple_of(batch) || flags.is_empty() {
            return Err(Error::Contract(
                "mask length is not a multiple of batch size".into(),
            ));
        }
        let len = flags.len() / batch;
        let mut lengths = Vec::with_capacity(batch);
        for (b, row) in flags.chunks(len).enumerate() {
            let l = row.iter().take_while(|&&f| f).count();
            if row[l..].iter().any(|&f| f) {
                return Err(Error::Contract(format!(
                    "mask row {b} is not a prefix mask"
                )));
            }
            lengths.push(l);
        }
        SeqMask::from_lengths(lengths, len)
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Live flags of every batch row at step `t`.
    pub fn at(&self, t: usize) -> Vec<bool> {
        self.lengths.iter().map(|&l| t < l).collect()
    }

    /// Batch-major `[B*T]` flags.
    pub fn flat(&self) -> Vec<bool> {
        self.lengths
            .iter()
            .flat_map(|&l| (0..self.len).map(move |t| t < l))
            .collect()
    }
}

/// Where embedding rows come from.
#[derive(Clone, Copy, Debug)]
pub enum EmbedSource<'t> {
    /// Not differentiated (pretrained word vectors by default).
    Frozen(&'t Tensor),
    Trainable(ParamId),
}

/// Rows of the table for `ids`, zero where `mask` is false.
pub fn embedding_lookup(
    ctx: &mut Ctx,
    table: EmbedSource,
    ids: &[usize],
    mask: &[bool],
) -> Result<Var> {
    match table {
        EmbedSource::Frozen(t) => ctx.g.gather_const(t, ids, mask),
        EmbedSource::Trainable(id) => {
            let t = ctx.p(id);
            ctx.g.gather(t, ids, mask)
        }
    }
}

/// Time-major lookup: one `[B, D]` node per step.
pub fn embed_sequence(
    ctx: &mut Ctx,
    table: EmbedSource,
    ids: &[usize],
    mask: &SeqMask,
) -> Result<Vec<Var>> {
    let (b, t) = (mask.batch(), mask.len());
    if ids.len() != b * t {
        return Err(Error::dim("embed_sequence", &[ids.len()], &[b, t]));
    }
    (0..t)
        .map(|step| {
            let col: Vec<usize> = (0..b).map(|r| ids[r * t + step]).collect();
            embedding_lookup(ctx, table, &col, &mask.at(step))
        })
        .collect()
}

/// Inverted dropout: at training time zero each entry with probability
/// `rate` and scale survivors by `1/(1-rate)`; identity otherwise.
pub fn dropout(ctx: &mut Ctx, x: Var, rate: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !ctx.training() || rate == 0.0 {
        return Ok(x);
    }
    let shape = ctx.g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let rng = ctx.rng();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = ctx.g.constant(Tensor::new(shape, mask)?);
    ctx.g.mul(x, m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Dense {
            w: store.weight(format!("{name}.w"), &[input, output], rng)?,
            b: store.bias(format!("{name}.b"), output)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        let y = ctx.g.matmul(x, w)?;
        ctx.g.add(y, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

/// GRU gate parameters: input weights `[D, H]`, recurrent weights `[H, H]`,
/// biases `[H]` for the update (z), reset (r) and candidate (h) paths.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub hidden: usize,
}

fn gate(ctx: &mut Ctx, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
    let (w, u, b) = (ctx.p(w), ctx.p(u), ctx.p(b));
    let xw = ctx.g.matmul(x, w)?;
    let hu = ctx.g.matmul(h, u)?;
    let s = ctx.g.add(xw, hu)?;
    ctx.g.add(s, b)
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = |g: &str, store: &mut ParamStore, rng: &mut R| {
            store.weight(format!("{name}.w_{g}"), &[input, hidden], rng)
        };
        let w_z = w("z", store, rng)?;
        let w_r = w("r", store, rng)?;
        let w_h = w("h", store, rng)?;
        let u = |g: &str, store: &mut ParamStore, rng: &mut R| {
            store.weight(format!("{name}.u_{g}"), &[hidden, hidden], rng)
        };
        let u_z = u("z", store, rng)?;
        let u_r = u("r", store, rng)?;
        let u_h = u("h", store, rng)?;
        Ok(GruCell {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: store.bias(format!("{name}.b_z"), hidden)?,
            b_r: store.bias(format!("{name}.b_r"), hidden)?,
            b_h: store.bias(format!("{name}.b_h"), hidden)?,
            hidden,
        })
    }

    /// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
    /// `h~ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1-z)⊙h + z⊙h~`.
    pub fn step(&self, ctx: &mut Ctx, x: Var, h: Var) -> Result<Var> {
        let z = gate(ctx, x, h, self.w_z, self.u_z, self.b_z)?;
        let z = ctx.g.sigmoid(z)?;
        let r = gate(ctx, x, h, self.w_r, self.u_r, self.b_r)?;
        let r = ctx.g.sigmoid(r)?;
        let rh = ctx.g.mul(r, h)?;
        let cand = gate(ctx, x, rh, self.w_h, self.u_h, self.b_h)?;
        let cand = ctx.g.tanh(cand)?;
        let keep = ctx.g.affine(z, -1.0, 1.0)?;
        let old = ctx.g.mul(keep, h)?;
        let new = ctx.g.mul(z, cand)?;
        ctx.g.add(old, new)
    }
}

/// LSTM gate parameters for input (i), forget (f), output (o) and
/// candidate (g) paths.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub hidden: usize,
}

const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for g in LSTM_GATES {
            w.push(store.weight(format!("{name}.w_{g}"), &[input, hidden], rng)?);
        }
        for g in LSTM_GATES {
            u.push(store.weight(format!("{name}.u_{g}"), &[hidden, hidden], rng)?);
        }
        for g in LSTM_GATES {
            b.push(store.bias(format!("{name}.b_{g}"), hidden)?);
        }
        let arr = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        Ok(LstmCell {
            w: arr(w),
            u: arr(u),
            b: arr(b),
            hidden,
        })
    }

    /// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
    pub fn step(&self, ctx: &mut Ctx, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let mut pre = Vec::with_capacity(4);
        for k in 0..4 {
            pre.push(gate(ctx, x, h, self.w[k], self.u[k], self.b[k])?);
        }
        let i = ctx.g.sigmoid(pre[0])?;
        let f = ctx.g.sigmoid(pre[1])?;
        let o = ctx.g.sigmoid(pre[2])?;
        let g = ctx.g.tanh(pre[3])?;
        let fc = ctx.g.mul(f, c)?;
        let ig = ctx.g.mul(i, g)?;
        let c_new = ctx.g.add(fc, ig)?;
        let tc = ctx.g.tanh(c_new)?;
        let h_new = ctx.g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl Cell {
    pub fn new<R: Rng + ?Sized>(
        kind: CellKind,
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            CellKind::Gru => Cell::Gru(GruCell::new(store, name, input, hidden, rng)?),
            CellKind::Lstm => Cell::Lstm(LstmCell::new(store, name, input, hidden, rng)?),
        })
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::Gru(c) => c.hidden,
            Cell::Lstm(c) => c.hidden,
        }
    }

    /// Runs one direction over the sequence. Returns per-step outputs (zero
    /// rows where masked) and the final carried state.
    fn run(
        &self,
        ctx: &mut Ctx,
        seq: &[Var],
        mask: &SeqMask,
        reverse: bool,
    ) -> Result<(Vec<Var>, Var)> {
        let b = mask.batch();
        let zeros = ctx.g.constant(Tensor::zeros(&[b, self.hidden()]));
        let mut h = zeros;
        let mut c = zeros;
        let mut out = vec![zeros; seq.len()];
        let order: Vec<usize> = if reverse {
            (0..seq.len()).rev().collect()
        } else {
            (0..seq.len()).collect()
        };
        for t in order {
            let live = mask.at(t);
            if !live.iter().any(|&l| l) {
                continue;
            }
            let (h_new, c_new) = match self {
                Cell::Gru(cell) => (cell.step(ctx, seq[t], h)?, c),
                Cell::Lstm(cell) => cell.step(ctx, seq[t], h, c)?,
            };
            h = ctx.g.select_rows(h_new, h, &live)?;
            if matches!(self, Cell::Lstm(_)) {
                c = ctx.g.select_rows(c_new, c, &live)?;
            }
            out[t] = ctx.g.select_rows(h_new, zeros, &live)?;
        }
        Ok((out, h))
    }
}

pub struct RnnOutput {
    /// Per-step `[B, H]` (or `[B, 2H]` when bidirectional) states.
    pub states: Vec<Var>,
    /// Final states: forward at the last live step, concatenated with
    /// backward at step 0 when bidirectional.
    pub last: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiRnn {
    pub fwd: Cell,
    pub bwd: Option<Cell>,
}

impl BiRnn {
    pub fn new<R: Rng + ?Sized>(
        kind: CellKind,
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fwd = Cell::new(kind, store, &format!("{name}.fwd"), input, hidden, rng)?;
        let bwd = if bidirectional {
            Some(Cell::new(
                kind,
                store,
                &format!("{name}.bwd"),
                input,
                hidden,
                rng,
            )?)
        } else {
            None
        };
        Ok(BiRnn { fwd, bwd })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden() * if self.bwd.is_some() { 2 } else { 1 }
    }

    pub fn forward(&self, ctx: &mut Ctx, seq: &[Var], mask: &SeqMask) -> Result<RnnOutput> {
        if seq.len() != mask.len() {
            return Err(Error::dim("birnn", &[seq.len()], &[mask.len()]));
        }
        let (fwd, h_f) = self.fwd.run(ctx, seq, mask, false)?;
        let Some(bwd_cell) = &self.bwd else {
            return Ok(RnnOutput {
                states: fwd,
                last: h_f,
            });
        };
        let (bwd, h_b) = bwd_cell.run(ctx, seq, mask, true)?;
        let states = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| ctx.g.concat_cols(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let last = ctx.g.concat_cols(&[h_f, h_b])?;
        Ok(RnnOutput { states, last })
    }
}

/// Additive attention pooling: `u_t = vᵀ tanh(W s_t)`, softmax over live
/// steps, context = weighted sum of states.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPool {
    pub w: ParamId,
    pub v: ParamId,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        state: usize,
        attn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if attn == 0 {
            return Err(Error::Config("attention dimension must be positive".into()));
        }
        Ok(AttentionPool {
            w: store.weight(format!("{name}.w"), &[state, attn], rng)?,
            v: store.weight(format!("{name}.v"), &[attn, 1], rng)?,
        })
    }

    /// `states` are time-major `[B, H]` nodes; `live` is batch-major
    /// `[B*T]`. Returns the `[B, H]` context and `[B, T]` weights.
    pub fn forward(&self, ctx: &mut Ctx, states: &[Var], live: &[bool]) -> Result<(Var, Var)> {
        let t = states.len();
        let first = *states
            .first()
            .ok_or_else(|| Error::Contract("attention over an empty sequence".into()))?;
        let b = ctx.g.value(first).dims2().0;
        if live.len() != b * t {
            return Err(Error::dim("attention_pool", &[b, t], &[live.len()]));
        }
        let (w, v) = (ctx.p(self.w), ctx.p(self.v));
        let stacked = ctx.g.concat_rows(states)?;
        let proj = ctx.g.matmul(stacked, w)?;
        let proj = ctx.g.tanh(proj)?;
        let scores = ctx.g.matmul(proj, v)?;
        let scores = ctx.g.reshape(scores, &[t, b])?;
        let scores = ctx.g.transpose(scores)?;
        let weights = ctx
            .g
            .softmax_masked(scores, live)
            .map_err(|_| Error::InvalidMask("attention over a fully masked sequence".into()))?;
        let mut context = None;
        for (step, &s) in states.iter().enumerate() {
            let a = ctx.g.slice_cols(weights, step, 1)?;
            let term = ctx.g.mul_col(s, a)?;
            context = Some(match context {
                None => term,
                Some(acc) => ctx.g.add(acc, term)?,
            });
        }
        Ok((context.expect("non-empty"), weights))
    }
}

/// Sinusoidal position table: `PE[t,2i] = sin(t/10000^(2i/D))`,
/// `PE[t,2i+1] = cos(t/10000^(2i/D))`.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    if len == 0 {
        return Err(Error::Config(
            "positional encoding needs at least one position".into(),
        ));
    }
    let mut data = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[t * dim + 2 * i] = angle.sin();
            data[t * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, dim], data)
}

/// One post-norm transformer encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaBlock {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff1: Dense,
    pub ff2: Dense,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

pub struct MhsaOutput {
    /// `[B*T, D]`, zero rows at masked positions.
    pub states: Var,
    /// One `[T, T]` weight matrix per (sentence, head), sentence-major.
    pub attention: Vec<Var>,
}

const LN_EPS: f64 = 1e-5;

impl MhsaBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MhsaBlock {
            heads,
            dim,
            wq: store.weight(format!("{name}.wq"), &[dim, dim], rng)?,
            wk: store.weight(format!("{name}.wk"), &[dim, dim], rng)?,
            wv: store.weight(format!("{name}.wv"), &[dim, dim], rng)?,
            wo: store.weight(format!("{name}.wo"), &[dim, dim], rng)?,
            ln1_gain: store.constant(format!("{name}.ln1.gain"), dim, 1.0)?,
            ln1_bias: store.bias(format!("{name}.ln1.bias"), dim)?,
            ff1: Dense::new(store, &format!("{name}.ff1"), dim, ff, rng)?,
            ff2: Dense::new(store, &format!("{name}.ff2"), ff, dim, rng)?,
            ln2_gain: store.constant(format!("{name}.ln2.gain"), dim, 1.0)?,
            ln2_bias: store.bias(format!("{name}.ln2.bias"), dim)?,
        })
    }

    fn norm(&self, ctx: &mut Ctx, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let (g, b) = (ctx.p(gain), ctx.p(bias));
        let n = ctx.g.layer_norm(x, LN_EPS)?;
        let n = ctx.g.mul(n, g)?;
        ctx.g.add(n, b)
    }

    /// `x` is batch-major `[B*T, D]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: &SeqMask) -> Result<MhsaOutput> {
        let (b, t) = (mask.batch(), mask.len());
        if ctx.g.shape(x) != [b * t, self.dim] {
            return Err(Error::dim("mhsa_block", ctx.g.shape(x), &[b * t, self.dim]));
        }
        if mask.lengths().contains(&0) {
            return Err(Error::InvalidMask(
                "mhsa over a fully masked sequence".into(),
            ));
        }
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (wq, wk, wv, wo) = (
            ctx.p(self.wq),
            ctx.p(self.wk),
            ctx.p(self.wv),
            ctx.p(self.wo),
        );
        let q = ctx.g.matmul(x, wq)?;
        let k = ctx.g.matmul(x, wk)?;
        let v = ctx.g.matmul(x, wv)?;

        let mut attention = Vec::with_capacity(b * self.heads);
        let mut sentences = Vec::with_capacity(b);
        for (s, &len) in mask.lengths().iter().enumerate() {
            let key_live: Vec<bool> = (0..t * t).map(|i| i % t < len).collect();
            let qs = ctx.g.slice_rows(q, s * t, t)?;
            let ks = ctx.g.slice_rows(k, s * t, t)?;
            let vs = ctx.g.slice_rows(v, s * t, t)?;
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = ctx.g.slice_cols(qs, h * dh, dh)?;
                let kh = ctx.g.slice_cols(ks, h * dh, dh)?;
                let vh = ctx.g.slice_cols(vs, h * dh, dh)?;
                let kt = ctx.g.transpose(kh)?;
                let scores = ctx.g.matmul(qh, kt)?;
                let scores = ctx.g.scale(scores, scale)?;
                let weights = ctx.g.softmax_masked(scores, &key_live)?;
                attention.push(weights);
                heads.push(ctx.g.matmul(weights, vh)?);
            }
            sentences.push(ctx.g.concat_cols(&heads)?);
        }
        let attended = ctx.g.concat_rows(&sentences)?;
        let projected = ctx.g.matmul(attended, wo)?;
        let res = ctx.g.add(x, projected)?;
        let y = self.norm(ctx, res, self.ln1_gain, self.ln1_bias)?;
        let f = self.ff1.forward(ctx, y)?;
        let f = ctx.g.relu(f)?;
        let f = self.ff2.forward(ctx, f)?;
        let res = ctx.g.add(y, f)?;
        let z = self.norm(ctx, res, self.ln2_gain, self.ln2_bias)?;
        let zeros = ctx.g.constant(Tensor::zeros(&[b * t, self.dim]));
        let states = ctx.g.select_rows(z, zeros, &mask.flat())?;
        Ok(MhsaOutput { states, attention })
    }
}

/// Kim-style convolution bank: one filter bank per window width.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank {
    /// `(width, weights [width, D, F], bias [F])`.
    pub windows: Vec<(usize, ParamId, ParamId)>,
    pub input: usize,
    pub filters: usize,
}

/// Per-window feature maps: position-indexed `[B, F]` nodes and, for each
/// position, which batch rows it is valid for.
pub struct FeatureMap {
    pub width: usize,
    pub positions: Vec<Var>,
    pub valid: Vec<Vec<bool>>,
}

impl FeatureMap {
    /// Batch-major `[B*P]` validity flags.
    pub fn live_flat(&self) -> Vec<bool> {
        let b = self.valid.first().map_or(0, Vec::len);
        (0..b)
            .flat_map(|r| self.valid.iter().map(move |v| v[r]))
            .collect()
    }
}

impl ConvBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        filters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || filters == 0 {
            return Err(Error::Config(
                "convolution needs positive widths and filters".into(),
            ));
        }
        let mut windows = Vec::with_capacity(widths.len());
        for &w in widths {
            windows.push((
                w,
                store.weight(format!("{name}.w{w}"), &[w, input, filters], rng)?,
                store.bias(format!("{name}.b{w}"), filters)?,
            ));
        }
        Ok(ConvBank {
            windows,
            input,
            filters,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.windows.len() * self.filters
    }

    fn max_width(&self) -> usize {
        self.windows.iter().map(|w| w.0).max().unwrap_or(1)
    }

    /// Valid convolution + relu. Sequences shorter than the widest window are
    /// zero-padded up to it.
    pub fn feature_maps(
        &self,
        ctx: &mut Ctx,
        seq: &[Var],
        mask: &SeqMask,
    ) -> Result<Vec<FeatureMap>> {
        if seq.len() != mask.len() {
            return Err(Error::dim("conv1d", &[seq.len()], &[mask.len()]));
        }
        let b = mask.batch();
        let wmax = self.max_width();
        let zeros = ctx.g.constant(Tensor::zeros(&[b, self.input]));
        let mut seq = seq.to_vec();
        // Short sentences read pad slots up to the widest window; zero them.
        for (t, x) in seq.iter_mut().enumerate().take(wmax) {
            let live = mask.at(t);
            if live.iter().any(|&l| !l) {
                *x = ctx.g.select_rows(*x, zeros, &live)?;
            }
        }
        if seq.len() < wmax {
            seq.resize(wmax, zeros);
        }
        let effective: Vec<usize> = mask.lengths().iter().map(|&l| l.max(wmax)).collect();
        let mut maps = Vec::with_capacity(self.windows.len());
        for &(width, w, bias) in &self.windows {
            let wv = ctx.p(w);
            let wv = ctx.g.reshape(wv, &[width * self.input, self.filters])?;
            let bv = ctx.p(bias);
            let mut positions = Vec::new();
            let mut valid = Vec::new();
            for p in 0..=seq.len() - width {
                let ok: Vec<bool> = effective.iter().map(|&l| p + width <= l).collect();
                if !ok.iter().any(|&o| o) {
                    continue;
                }
                let window = ctx.g.concat_cols(&seq[p..p + width])?;
                let y = ctx.g.matmul(window, wv)?;
                let y = ctx.g.add(y, bv)?;
                positions.push(ctx.g.relu(y)?);
                valid.push(ok);
            }
            maps.push(FeatureMap {
                width,
                positions,
                valid,
            });
        }
        Ok(maps)
    }

    /// Max-over-time per window, concatenated: `[B, windows * F]`.
    pub fn forward_maxpool(&self, ctx: &mut Ctx, seq: &[Var], mask: &SeqMask) -> Result<Var> {
        let maps = self.feature_maps(ctx, seq, mask)?;
        let pooled = maps
            .iter()
            .map(|m| ctx.g.max_of(&m.positions, &m.valid))
            .collect::<Result<Vec<_>>>()?;
        ctx.g.concat_cols(&pooled)
    }
}
