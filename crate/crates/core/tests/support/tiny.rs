//! Tiny models and random sentences for invariance and round-trip tests.

use hedge_core::corpus::{Label, Sentence};
use hedge_core::embeddings::{EmbeddingTable, Vocab};
use hedge_core::models::{build_model, preset, Model, ModelSpec};
use hedge_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 12] = [
    "the", "river", "may", "flow", "north", "some", "believe", "it", "is", "old", "city",
    "possibly",
];
pub const TAGS: [&str; 5] = ["ADJ", "ADV", "DET", "NOUN", "VERB"];
pub const WORD_DIM: usize = 6;

pub fn tagset() -> Vec<String> {
    TAGS.iter().map(|t| t.to_string()).collect()
}

/// Random vectors for [`WORDS`] (plus PAD/UNK rows).
pub fn word_table(seed: u64) -> EmbeddingTable {
    let vocab = Vocab::from_tokens(WORDS.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Tensor::uniform(&[vocab.len(), WORD_DIM], -1.0, 1.0, &mut rng);
    rows.data_mut()[..WORD_DIM]
        .iter_mut()
        .for_each(|v| *v = 0.0);
    EmbeddingTable::new(vocab, rows, false).unwrap()
}

/// A preset shrunk to test size.
pub fn small_spec(name: &str) -> ModelSpec {
    let mut spec = preset(name).unwrap();
    spec.hidden = 4;
    spec.attention_dim = 4;
    spec.cnn_filters = 3;
    spec.cnn_windows = vec![2, 3];
    spec.heads = 2;
    spec.ff_mult = 2;
    spec.pos_dim = 3;
    spec
}

pub fn small_model(name: &str, seed: u64) -> Model {
    let spec = small_spec(name);
    let words = spec.uses_words().then(|| word_table(seed + 100));
    build_model(&spec, words, &tagset(), seed).unwrap()
}

/// Random sentence of `len` tokens; an occasional out-of-vocabulary word
/// exercises the UNK row.
pub fn sentence(rng: &mut ChaCha8Rng, id: usize, len: usize) -> Sentence {
    let tokens: Vec<String> = (0..len)
        .map(|_| {
            if rng.gen_bool(0.1) {
                "zebra".to_string()
            } else {
                WORDS.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    let pos = (0..len)
        .map(|_| TAGS.choose(rng).unwrap().to_string())
        .collect();
    let label = if rng.gen_bool(0.3) {
        Label::Uncertain
    } else {
        Label::Certain
    };
    let mut s = Sentence::new(format!("s{id}"), tokens, label);
    s.pos = pos;
    s
}

pub fn sentences(seed: u64, lengths: &[usize]) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .enumerate()
        .map(|(i, &l)| sentence(&mut rng, i, l))
        .collect()
}

pub fn to_mat(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.dims2();
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

/// Largest probability drift of `model` under pad-length changes and batch
/// regrouping, relative to scoring each sentence alone.
pub fn invariance_drift(model: &Model, seed: u64) -> f64 {
    let sents = sentences(seed, &[1, 7, 3, 2, 9, 4, 1, 6, 5]);
    let alone: Vec<f64> = sents
        .iter()
        .map(|s| {
            let b = model.encode_batch(&[s], 64, None).unwrap();
            model.probabilities(&b).unwrap()[0]
        })
        .collect();
    let mut drift: f64 = 0.0;
    let all: Vec<&Sentence> = sents.iter().collect();
    for pad in [None, Some(12), Some(20)] {
        let b = model.encode_batch(&all, 64, pad).unwrap();
        for (p, q) in model.probabilities(&b).unwrap().iter().zip(&alone) {
            drift = drift.max((p - q).abs());
        }
    }
    // Regroup: reversed order, uneven chunks, extra padding.
    let order: Vec<usize> = (0..sents.len()).rev().collect();
    for chunk in order.chunks(4) {
        let group: Vec<&Sentence> = chunk.iter().map(|&i| &sents[i]).collect();
        let b = model.encode_batch(&group, 64, Some(10)).unwrap();
        for (&i, p) in chunk.iter().zip(model.probabilities(&b).unwrap()) {
            drift = drift.max((p - alone[i]).abs());
        }
    }
    drift
}
