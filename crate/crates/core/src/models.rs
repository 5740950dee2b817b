//! Sentence classifiers assembled from the layer primitives.
//!
//! Every model ends in a single-unit dense head producing one logit per
//! sentence. The encoder in front of it is a stacked (bi)RNN, a Kim-style
//! CNN or a small transformer, fed with word vectors, POS tag vectors, or
//! both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Sentence};
use crate::embeddings::{init_pos_table, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::layers::{
    dropout, embedding_lookup, positional_encoding, AttentionPool, BiRnn, CellKind, ConvBank,
    Dense, EmbedSource, MhsaBlock, SeqMask,
};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::{sigmoid_scalar, Graph, Tensor, Var};

/// Which inputs feed the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Words,
    PosOnly,
    /// Word and POS vectors concatenated per token before one network.
    JointInput,
    /// Separate word and POS networks joined at their sentence vectors.
    JointLatent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Gru,
    Lstm,
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub encoder: EncoderKind,
    pub attention: bool,
}

impl Branch {
    pub const fn new(encoder: EncoderKind, attention: bool) -> Self {
        Branch { encoder, attention }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// The network, or the word branch for joint-latent models.
    pub branch: Branch,
    /// POS branch of joint-latent models.
    #[serde(default)]
    pub pos_branch: Option<Branch>,
    pub hidden: usize,
    pub layers: usize,
    pub pos_dim: usize,
    pub dropout: f64,
    pub bidirectional: bool,
    pub attention_dim: usize,
    pub cnn_windows: Vec<usize>,
    pub cnn_filters: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Train the word table too (frozen by default).
    #[serde(default)]
    pub finetune_words: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, branch: Branch) -> Self {
        ModelSpec {
            kind,
            branch,
            pos_branch: None,
            hidden: 64,
            layers: 2,
            pos_dim: 8,
            dropout: 0.5,
            bidirectional: true,
            attention_dim: 64,
            cnn_windows: vec![3, 4, 5],
            cnn_filters: 64,
            heads: 4,
            ff_mult: 4,
            finetune_words: false,
        }
    }

    pub fn uses_words(&self) -> bool {
        self.kind != ModelKind::PosOnly
    }

    pub fn uses_pos(&self) -> bool {
        self.kind != ModelKind::Words
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.layers == 0 || self.attention_dim == 0 {
            return bad("hidden, layers and attention_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.uses_pos() && self.pos_dim == 0 {
            return bad("pos_dim must be positive".into());
        }
        match (self.kind, self.pos_branch) {
            (ModelKind::JointLatent, None) => {
                return bad("joint-latent models need a POS branch".into())
            }
            (ModelKind::JointLatent, Some(_)) | (_, None) => {}
            (_, Some(_)) => return bad("only joint-latent models take a POS branch".into()),
        }
        for b in std::iter::once(self.branch).chain(self.pos_branch) {
            match b.encoder {
                EncoderKind::Transformer => {
                    if b.attention {
                        return bad("transformer encoders pool by mean, not attention".into());
                    }
                    if self.heads == 0
                        || !self.hidden.is_multiple_of(self.heads)
                        || !self.hidden.is_multiple_of(2)
                    {
                        return bad(format!(
                            "transformer width {} must be even and divisible by {} heads",
                            self.hidden, self.heads
                        ));
                    }
                }
                EncoderKind::Cnn => {
                    if self.cnn_windows.is_empty()
                        || self.cnn_windows.contains(&0)
                        || self.cnn_filters == 0
                    {
                        return bad("cnn needs positive window widths and filters".into());
                    }
                }
                EncoderKind::Gru | EncoderKind::Lstm => {}
            }
        }
        Ok(())
    }

    /// Closed-form count of trainable scalars.
    ///
    /// RNN layer: `dirs * gates * (in*H + H*H + H)` with 3 gates for GRU and
    /// 4 for LSTM, `in` being the input width for layer 1 and `dirs*H`
    /// after. Attention pool: `S*A + A` over state width `S`. CNN: per
    /// window `w*in*F + F`, plus one pool per window with attention.
    /// Transformer: input projection `in*D + D`, then per block
    /// `4D² + D*ff + ff + ff*D + D + 4D`. Head: `out + 1`. POS table:
    /// `(tags + 2) * pos_dim`; fine-tuned word table `V * Dw`.
    pub fn param_count(&self, word_dim: usize, word_rows: usize, n_tags: usize) -> usize {
        let branch_in = |words: bool, pos: bool| {
            (if words { word_dim } else { 0 }) + (if pos { self.pos_dim } else { 0 })
        };
        let (mut total, mut out) = (0, 0);
        let mut add = |b: Branch, input: usize| {
            let (p, o) = self.branch_count(b, input);
            total += p;
            out += o;
        };
        match self.kind {
            ModelKind::Words => add(self.branch, branch_in(true, false)),
            ModelKind::PosOnly => add(self.branch, branch_in(false, true)),
            ModelKind::JointInput => add(self.branch, branch_in(true, true)),
            ModelKind::JointLatent => {
                add(self.branch, branch_in(true, false));
                add(self.pos_branch.expect("validated"), branch_in(false, true));
            }
        }
        total += out + 1;
        if self.uses_pos() {
            total += (n_tags + 2) * self.pos_dim;
        }
        if self.uses_words() && self.finetune_words {
            total += word_rows * word_dim;
        }
        total
    }

    fn branch_count(&self, b: Branch, input: usize) -> (usize, usize) {
        let (h, a) = (self.hidden, self.attention_dim);
        match b.encoder {
            EncoderKind::Gru | EncoderKind::Lstm => {
                let gates = if b.encoder == EncoderKind::Gru { 3 } else { 4 };
                let dirs = if self.bidirectional { 2 } else { 1 };
                let mut n = 0;
                for l in 0..self.layers {
                    let inp = if l == 0 { input } else { dirs * h };
                    n += dirs * gates * (inp * h + h * h + h);
                }
                let s = dirs * h;
                if b.attention {
                    n += s * a + a;
                }
                (n, s)
            }
            EncoderKind::Cnn => {
                let f = self.cnn_filters;
                let mut n = 0;
                for &w in &self.cnn_windows {
                    n += w * input * f + f;
                    if b.attention {
                        n += f * a + a;
                    }
                }
                (n, self.cnn_windows.len() * f)
            }
            EncoderKind::Transformer => {
                let ff = self.ff_mult * h;
                let block = 4 * h * h + h * ff + ff + ff * h + h + 4 * h;
                (input * h + h + self.layers * block, h)
            }
        }
    }
}

/// Named configurations covering every architecture in the result tables.
pub const PRESETS: [&str; 18] = [
    "cnn",
    "gru",
    "lstm",
    "transformer",
    "cnn-att",
    "gru-att",
    "lstm-att",
    "pos-gru",
    "pos-lstm",
    "pos-gru-att",
    "pos-lstm-att",
    "joint-input-gru",
    "joint-input-lstm",
    "joint-input-gru-att",
    "joint-input-lstm-att",
    "joint-latent-gru-att",
    "joint-latent-lstm-att",
    "joint-latent-gru-lstm-att",
];

pub fn preset(name: &str) -> Result<ModelSpec> {
    use EncoderKind::*;
    let b = Branch::new;
    let spec = match name {
        "cnn" => ModelSpec::new(ModelKind::Words, b(Cnn, false)),
        "gru" => ModelSpec::new(ModelKind::Words, b(Gru, false)),
        "lstm" => ModelSpec::new(ModelKind::Words, b(Lstm, false)),
        "transformer" => ModelSpec::new(ModelKind::Words, b(Transformer, false)),
        "cnn-att" => ModelSpec::new(ModelKind::Words, b(Cnn, true)),
        "gru-att" => ModelSpec::new(ModelKind::Words, b(Gru, true)),
        "lstm-att" => ModelSpec::new(ModelKind::Words, b(Lstm, true)),
        "pos-gru" => ModelSpec::new(ModelKind::PosOnly, b(Gru, false)),
        "pos-lstm" => ModelSpec::new(ModelKind::PosOnly, b(Lstm, false)),
        "pos-gru-att" => ModelSpec::new(ModelKind::PosOnly, b(Gru, true)),
        "pos-lstm-att" => ModelSpec::new(ModelKind::PosOnly, b(Lstm, true)),
        "joint-input-gru" => ModelSpec::new(ModelKind::JointInput, b(Gru, false)),
        "joint-input-lstm" => ModelSpec::new(ModelKind::JointInput, b(Lstm, false)),
        "joint-input-gru-att" => ModelSpec::new(ModelKind::JointInput, b(Gru, true)),
        "joint-input-lstm-att" => ModelSpec::new(ModelKind::JointInput, b(Lstm, true)),
        "joint-latent-gru-att" | "joint-latent-lstm-att" | "joint-latent-gru-lstm-att" => {
            let (w, p) = match name {
                "joint-latent-gru-att" => (Gru, Gru),
                "joint-latent-lstm-att" => (Lstm, Lstm),
                _ => (Gru, Lstm),
            };
            let mut s = ModelSpec::new(ModelKind::JointLatent, b(w, true));
            s.pos_branch = Some(b(p, true));
            s
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}`; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Rnn {
        layers: Vec<BiRnn>,
        attention: Option<AttentionPool>,
    },
    Cnn {
        bank: ConvBank,
        attention: Option<Vec<AttentionPool>>,
    },
    Transformer {
        proj: Dense,
        blocks: Vec<MhsaBlock>,
    },
}

impl Encoder {
    fn new(
        spec: &ModelSpec,
        b: Branch,
        store: &mut ParamStore,
        name: &str,
        input: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, usize)> {
        let h = spec.hidden;
        match b.encoder {
            EncoderKind::Gru | EncoderKind::Lstm => {
                let cell = if b.encoder == EncoderKind::Gru {
                    CellKind::Gru
                } else {
                    CellKind::Lstm
                };
                let mut layers = Vec::with_capacity(spec.layers);
                let mut width = input;
                for l in 0..spec.layers {
                    let layer = BiRnn::new(
                        cell,
                        store,
                        &format!("{name}.rnn{l}"),
                        width,
                        h,
                        spec.bidirectional,
                        rng,
                    )?;
                    width = layer.output_dim();
                    layers.push(layer);
                }
                let attention = if b.attention {
                    Some(AttentionPool::new(
                        store,
                        &format!("{name}.att"),
                        width,
                        spec.attention_dim,
                        rng,
                    )?)
                } else {
                    None
                };
                Ok((Encoder::Rnn { layers, attention }, width))
            }
            EncoderKind::Cnn => {
                let bank = ConvBank::new(
                    store,
                    &format!("{name}.cnn"),
                    input,
                    &spec.cnn_windows,
                    spec.cnn_filters,
                    rng,
                )?;
                let attention = if b.attention {
                    let pools = spec
                        .cnn_windows
                        .iter()
                        .map(|w| {
                            AttentionPool::new(
                                store,
                                &format!("{name}.att{w}"),
                                spec.cnn_filters,
                                spec.attention_dim,
                                rng,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(pools)
                } else {
                    None
                };
                let width = bank.output_dim();
                Ok((Encoder::Cnn { bank, attention }, width))
            }
            EncoderKind::Transformer => {
                let proj = Dense::new(store, &format!("{name}.proj"), input, h, rng)?;
                let blocks = (0..spec.layers)
                    .map(|l| {
                        MhsaBlock::new(
                            store,
                            &format!("{name}.block{l}"),
                            h,
                            spec.heads,
                            spec.ff_mult * h,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Encoder::Transformer { proj, blocks }, h))
            }
        }
    }

    fn time_major(&self) -> bool {
        !matches!(self, Encoder::Transformer { .. })
    }

    /// `input` is time-major (`[B, D]` per step) for RNN/CNN encoders and a
    /// single batch-major `[B*T, D]` node for the transformer.
    fn forward(&self, ctx: &mut Ctx, input: Vec<Var>, mask: &SeqMask, rate: f64) -> Result<Var> {
        let seq = input
            .into_iter()
            .map(|x| dropout(ctx, x, rate))
            .collect::<Result<Vec<_>>>()?;
        let pooled = match self {
            Encoder::Rnn { layers, attention } => {
                let mut seq = seq;
                let mut last = None;
                for (l, layer) in layers.iter().enumerate() {
                    let out = layer.forward(ctx, &seq, mask)?;
                    last = Some(out.last);
                    seq = if l + 1 < layers.len() {
                        out.states
                            .into_iter()
                            .map(|x| dropout(ctx, x, rate))
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        out.states
                    };
                }
                match attention {
                    Some(att) => att.forward(ctx, &seq, &mask.flat())?.0,
                    None => last.expect("at least one layer"),
                }
            }
            Encoder::Cnn { bank, attention } => match attention {
                None => bank.forward_maxpool(ctx, &seq, mask)?,
                Some(pools) => {
                    let maps = bank.feature_maps(ctx, &seq, mask)?;
                    let contexts = maps
                        .iter()
                        .zip(pools)
                        .map(|(m, att)| Ok(att.forward(ctx, &m.positions, &m.live_flat())?.0))
                        .collect::<Result<Vec<_>>>()?;
                    ctx.g.concat_cols(&contexts)?
                }
            },
            Encoder::Transformer { proj, blocks } => {
                let (b, t) = (mask.batch(), mask.len());
                let x = proj.forward(ctx, seq[0])?;
                let dim = ctx.g.shape(x)[1];
                let pe = positional_encoding(t, dim)?;
                let tiled: Vec<f64> = (0..b).flat_map(|_| pe.data().iter().copied()).collect();
                let pe = ctx.g.constant(Tensor::new(vec![b * t, dim], tiled)?);
                let mut x = ctx.g.add(x, pe)?;
                for block in blocks {
                    let out = block.forward(ctx, x, mask)?;
                    x = dropout(ctx, out.states, rate)?;
                }
                mean_pool(&mut ctx.g, x, mask)?
            }
        };
        dropout(ctx, pooled, rate)
    }
}

/// Mean over the live rows of each sentence in a batch-major `[B*T, D]`.
fn mean_pool(g: &mut Graph, x: Var, mask: &SeqMask) -> Result<Var> {
    let t = mask.len();
    let rows = mask
        .lengths()
        .iter()
        .enumerate()
        .map(|(s, &len)| {
            let weights = Tensor::new(vec![1, len], vec![1.0 / len as f64; len])?;
            let w = g.constant(weights);
            let live = g.slice_rows(x, s * t, len)?;
            g.matmul(w, live)
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat_rows(&rows)
}

/// Row-wise concatenation of per-token word and POS vectors.
pub fn joint_input_combine(g: &mut Graph, word: Var, pos: Var) -> Result<Var> {
    let (wr, pr) = (g.shape(word)[0], g.shape(pos)[0]);
    if wr != pr {
        return Err(Error::dim(
            "joint_input_combine",
            g.shape(word),
            g.shape(pos),
        ));
    }
    g.concat_cols(&[word, pos])
}

/// Concatenation of the two branch sentence vectors.
pub fn joint_latent_combine(g: &mut Graph, word: Option<Var>, pos: Option<Var>) -> Result<Var> {
    match (word, pos) {
        (Some(w), Some(p)) => g.concat_cols(&[w, p]),
        _ => Err(Error::Contract(
            "joint latent model is missing a branch".into(),
        )),
    }
}

/// A padded batch. Ids are batch-major `[B*T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
    pub mask: SeqMask,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.mask.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.batch() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Net {
    Single(Encoder),
    Latent { word: Encoder, pos: Encoder },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub seed: u64,
    pub store: ParamStore,
    words: Option<EmbeddingTable>,
    word_param: Option<ParamId>,
    tags: Vocab,
    tagset: Vec<String>,
    pos_param: Option<ParamId>,
    net: Net,
    head: Dense,
}

pub const WORD_TABLE_PARAM: &str = "embed.words";
pub const POS_TABLE_PARAM: &str = "embed.pos";

/// Builds a freshly initialised model. Parameter draws come from one
/// generator seeded with `seed`, so equal seeds give bit-identical models.
pub fn build_model(
    spec: &ModelSpec,
    words: Option<EmbeddingTable>,
    tagset: &[String],
    seed: u64,
) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let words = if spec.uses_words() {
        Some(words.ok_or_else(|| Error::Config("this model needs a word embedding table".into()))?)
    } else {
        None
    };
    let word_dim = words.as_ref().map_or(0, EmbeddingTable::dim);
    let word_param = match &words {
        Some(t) if spec.finetune_words => {
            Some(store.add(WORD_TABLE_PARAM, t.rows().clone(), true)?)
        }
        _ => None,
    };
    let (pos_param, tags) = if spec.uses_pos() {
        if tagset.is_empty() {
            return Err(Error::Config(
                "joint and POS-only models need a POS tagset".into(),
            ));
        }
        let table = init_pos_table(tagset, spec.pos_dim, rng.gen())?;
        let id = store.add(POS_TABLE_PARAM, table.rows().clone(), true)?;
        (Some(id), table.vocab().clone())
    } else {
        (None, Vocab::default())
    };

    let (net, out) = match spec.kind {
        ModelKind::Words => {
            let (e, o) = Encoder::new(spec, spec.branch, &mut store, "enc", word_dim, &mut rng)?;
            (Net::Single(e), o)
        }
        ModelKind::PosOnly => {
            let (e, o) =
                Encoder::new(spec, spec.branch, &mut store, "enc", spec.pos_dim, &mut rng)?;
            (Net::Single(e), o)
        }
        ModelKind::JointInput => {
            let (e, o) = Encoder::new(
                spec,
                spec.branch,
                &mut store,
                "enc",
                word_dim + spec.pos_dim,
                &mut rng,
            )?;
            (Net::Single(e), o)
        }
        ModelKind::JointLatent => {
            let pb = spec.pos_branch.expect("validated");
            let (w, ow) = Encoder::new(spec, spec.branch, &mut store, "word", word_dim, &mut rng)?;
            let (p, op) = Encoder::new(spec, pb, &mut store, "pos", spec.pos_dim, &mut rng)?;
            (Net::Latent { word: w, pos: p }, ow + op)
        }
    };
    let head = Dense::new(&mut store, "head", out, 1, &mut rng)?;
    Ok(Model {
        spec: spec.clone(),
        seed,
        store,
        words,
        word_param,
        tags,
        tagset: tagset.to_vec(),
        pos_param,
        net,
        head,
    })
}

impl Model {
    pub fn word_table(&self) -> Option<&EmbeddingTable> {
        self.words.as_ref()
    }

    pub fn tagset(&self) -> &[String] {
        &self.tagset
    }

    pub fn tag_vocab(&self) -> &Vocab {
        &self.tags
    }

    /// Pads `sentences` to their longest (capped) length, or to `pad_to`
    /// when that is larger. Sentences must be non-empty.
    pub fn encode_batch(
        &self,
        sentences: &[&Sentence],
        max_len: usize,
        pad_to: Option<usize>,
    ) -> Result<Batch> {
        let mut t = 0;
        for s in sentences {
            if s.tokens.is_empty() {
                return Err(Error::InvalidMask(format!(
                    "sentence {} has no tokens",
                    s.id
                )));
            }
            if self.spec.uses_pos() && s.pos.len() != s.tokens.len() {
                return Err(Error::Alignment {
                    id: s.id.clone(),
                    message: format!("{} tags for {} tokens", s.pos.len(), s.tokens.len()),
                });
            }
            t = t.max(s.tokens.len().min(max_len));
        }
        let t = t.max(pad_to.unwrap_or(0));
        let b = sentences.len();
        let mut words = vec![0; b * t];
        let mut tags = vec![0; b * t];
        let mut lengths = Vec::with_capacity(b);
        for (r, s) in sentences.iter().enumerate() {
            let len = s.tokens.len().min(max_len);
            lengths.push(len);
            for i in 0..len {
                if let Some(table) = &self.words {
                    words[r * t + i] = table.id(&s.tokens[i]);
                }
                if self.spec.uses_pos() {
                    tags[r * t + i] = self.tags.id(&s.pos[i]);
                }
            }
        }
        Ok(Batch {
            words,
            tags,
            mask: SeqMask::from_lengths(lengths, t)?,
            targets: sentences.iter().map(|s| s.label.as_target()).collect(),
        })
    }

    fn word_source(&self) -> EmbedSource<'_> {
        match (self.word_param, &self.words) {
            (Some(id), _) => EmbedSource::Trainable(id),
            (None, Some(t)) => EmbedSource::Frozen(t.rows()),
            (None, None) => unreachable!("word source requested for a model without words"),
        }
    }

    /// Embedded inputs in the layout the encoder wants.
    fn inputs(
        &self,
        ctx: &mut Ctx,
        batch: &Batch,
        words: bool,
        pos: bool,
        time_major: bool,
    ) -> Result<Vec<Var>> {
        let (b, t) = (batch.mask.batch(), batch.mask.len());
        let lookup =
            |ctx: &mut Ctx, rows: &dyn Fn(&[usize]) -> Vec<usize>, live: &[bool]| -> Result<Var> {
                let mut parts = Vec::with_capacity(2);
                if words {
                    parts.push(embedding_lookup(
                        ctx,
                        self.word_source(),
                        &rows(&batch.words),
                        live,
                    )?);
                }
                if pos {
                    let id = self.pos_param.expect("pos model");
                    parts.push(embedding_lookup(
                        ctx,
                        EmbedSource::Trainable(id),
                        &rows(&batch.tags),
                        live,
                    )?);
                }
                match parts[..] {
                    [one] => Ok(one),
                    [w, p] => joint_input_combine(&mut ctx.g, w, p),
                    _ => unreachable!("at least one input"),
                }
            };
        if time_major {
            (0..t)
                .map(|step| {
                    let pick = |ids: &[usize]| (0..b).map(|r| ids[r * t + step]).collect();
                    lookup(ctx, &pick, &batch.mask.at(step))
                })
                .collect()
        } else {
            let all = |ids: &[usize]| ids.to_vec();
            Ok(vec![lookup(ctx, &all, &batch.mask.flat())?])
        }
    }

    /// Sentence vectors fed to the head, `[B, out]`.
    pub fn features(&self, ctx: &mut Ctx, batch: &Batch) -> Result<Var> {
        let rate = self.spec.dropout;
        match &self.net {
            Net::Single(enc) => {
                let (w, p) = (self.spec.uses_words(), self.spec.uses_pos());
                let x = self.inputs(ctx, batch, w, p, enc.time_major())?;
                enc.forward(ctx, x, &batch.mask, rate)
            }
            Net::Latent { word, pos } => {
                let xw = self.inputs(ctx, batch, true, false, word.time_major())?;
                let hw = word.forward(ctx, xw, &batch.mask, rate)?;
                let xp = self.inputs(ctx, batch, false, true, pos.time_major())?;
                let hp = pos.forward(ctx, xp, &batch.mask, rate)?;
                joint_latent_combine(&mut ctx.g, Some(hw), Some(hp))
            }
        }
    }

    /// Logits `[B, 1]`.
    pub fn logits(&self, ctx: &mut Ctx, batch: &Batch) -> Result<Var> {
        let h = self.features(ctx, batch)?;
        self.head.forward(ctx, h)
    }

    /// Inference-mode P(uncertain) per sentence.
    pub fn probabilities(&self, batch: &Batch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(&self.store, false, &mut rng);
        let z = self.logits(&mut ctx, batch)?;
        Ok(ctx
            .g
            .value(z)
            .data()
            .iter()
            .map(|&v| sigmoid_scalar(v))
            .collect())
    }

    /// Probabilities for arbitrary sentences, batched in order. Empty
    /// sentences get probability 0 (predicted certain).
    pub fn predict_sentences(
        &self,
        sentences: &[Sentence],
        max_len: usize,
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        let mut probs = vec![0.0; sentences.len()];
        let live: Vec<usize> = (0..sentences.len())
            .filter(|&i| !sentences[i].is_empty())
            .collect();
        for chunk in live.chunks(batch_size.max(1)) {
            let refs: Vec<&Sentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            let batch = self.encode_batch(&refs, max_len, None)?;
            for (&i, p) in chunk.iter().zip(self.probabilities(&batch)?) {
                probs[i] = p;
            }
        }
        Ok(probs)
    }
}

pub const THRESHOLD: f64 = 0.5;

/// Uncertain iff `p >= threshold`.
pub fn predict(probabilities: &[f64], threshold: f64) -> Vec<Label> {
    probabilities
        .iter()
        .map(|&p| {
            if p >= threshold {
                Label::Uncertain
            } else {
                Label::Certain
            }
        })
        .collect()
}
