//! Vocabularies and embedding tables.
//!
//! Word vectors come from the plain text format shared by GloVe and
//! word2vec (`token v1 ... vd` per line, with an optional `count dim`
//! header). Only rows for tokens in the corpus vocabulary are kept.
//!
//! Ids 0 and 1 are reserved for PAD and UNK in every vocabulary. The PAD row
//! is all zeros and never trained.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Builds a vocabulary from non-reserved tokens in id order (ids start at 2).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens: all, index }
    }

    /// Assigns ids by descending frequency, ties broken lexicographically.
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s.as_ref() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocab::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// All tokens in id order, including the reserved ones.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content hash over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for t in &self.tokens[2..] {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Vocab::from_tokens(text.lines().map(str::to_string)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnkInit {
    /// Mean of all loaded vectors.
    #[default]
    Mean,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocab,
    rows: Tensor,
    trainable: bool,
}

/// Counts gathered while reading a vector file.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LoadReport {
    pub lines: usize,
    pub loaded: usize,
    pub malformed: usize,
    pub requested: usize,
}

impl LoadReport {
    /// Fraction of requested corpus tokens that found a vector.
    pub fn coverage(&self) -> f64 {
        if self.requested == 0 {
            1.0
        } else {
            self.loaded as f64 / self.requested as f64
        }
    }
}

impl EmbeddingTable {
    pub fn new(vocab: Vocab, rows: Tensor, trainable: bool) -> Result<Self> {
        if rows.shape().len() != 2 || rows.shape()[0] != vocab.len() {
            return Err(Error::dim("embedding table", rows.shape(), &[vocab.len()]));
        }
        if rows.row(PAD).iter().any(|&v| v != 0.0) {
            return Err(Error::Contract("PAD row must be zero".into()));
        }
        Ok(EmbeddingTable {
            vocab,
            rows,
            trainable,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Tensor {
        &mut self.rows
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, flag: bool) {
        self.trainable = flag;
    }

    pub fn id(&self, token: &str) -> usize {
        self.vocab.id(token)
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.rows.row(self.id(token))
    }

    /// Writes the binary cache format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TABLE_MAGIC)?;
        binio::write_u32(w, TABLE_VERSION)?;
        binio::write_u8(w, self.trainable as u8)?;
        binio::write_str(w, &self.vocab.hash())?;
        binio::write_u64(w, self.vocab.len() as u64)?;
        for t in &self.vocab.tokens()[2..] {
            binio::write_str(w, t)?;
        }
        binio::write_tensor(w, &self.rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format {
                line: 0,
                message: format!("{} is not an embedding table cache", path.display()),
            });
        }
        let io = |e| Error::io(path, e);
        let version = binio::read_u32(&mut r).map_err(io)?;
        if version != TABLE_VERSION {
            return Err(Error::Format {
                line: 0,
                message: format!("unsupported table cache version {version}"),
            });
        }
        let trainable = binio::read_u8(&mut r).map_err(io)? != 0;
        let hash = binio::read_str(&mut r).map_err(io)?;
        let n = binio::read_u64(&mut r).map_err(io)? as usize;
        let mut tokens = Vec::with_capacity(n.saturating_sub(2));
        for _ in 2..n {
            tokens.push(binio::read_str(&mut r).map_err(io)?);
        }
        let vocab = Vocab::from_tokens(tokens);
        if vocab.hash() != hash {
            return Err(Error::VocabMismatch {
                expected: hash,
                found: vocab.hash(),
            });
        }
        let rows = binio::read_tensor(&mut r).map_err(io)??;
        EmbeddingTable::new(vocab, rows, trainable)
    }
}

const TABLE_MAGIC: &[u8; 8] = b"HEDGEEMB";
const TABLE_VERSION: u32 = 1;

/// Loads a text-format vector file, keeping only tokens from `corpus_vocab`.
pub fn load_vectors(
    path: &Path,
    corpus_vocab: &Vocab,
    unk: UnkInit,
) -> Result<(EmbeddingTable, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors(BufReader::new(file), corpus_vocab, unk)
}

/// Reader-level twin of [`load_vectors`].
///
/// Table rows follow the corpus vocabulary's id order, so the result does
/// not depend on the order of lines in the file. A repeated token keeps its
/// first vector.
pub fn read_vectors<R: BufRead>(
    reader: R,
    corpus_vocab: &Vocab,
    unk: UnkInit,
) -> Result<(EmbeddingTable, LoadReport)> {
    let mut report = LoadReport {
        requested: corpus_vocab.len().saturating_sub(2),
        ..Default::default()
    };
    let mut dim: Option<usize> = None;
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<vectors>", e))?;
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        report.lines += 1;
        if lineno == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let d = *dim.get_or_insert(fields.len() - 1);
        if d == 0 || fields.len() < d + 1 {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected {} values, found {}", d, fields.len() - 1),
            });
        }
        // Tokens may contain spaces in some distributions; the vector is
        // always the trailing `d` fields.
        let split = fields.len() - d;
        let values: std::result::Result<Vec<f64>, _> =
            fields[split..].iter().map(|v| v.parse::<f64>()).collect();
        let Ok(values) = values else {
            report.malformed += 1;
            continue;
        };
        let token = fields[..split].join(" ");
        if let Some(id) = corpus_vocab.get(&token) {
            if id >= 2 {
                found.entry(id).or_insert(values);
            }
        }
    }

    let dim = dim.ok_or_else(|| Error::Format {
        line: 0,
        message: "vector file contains no vectors".into(),
    })?;
    let mut ids: Vec<usize> = found.keys().copied().collect();
    ids.sort_unstable();
    report.loaded = ids.len();

    let mut data = vec![0.0; (ids.len() + 2) * dim];
    let mut mean = vec![0.0; dim];
    for (row, id) in ids.iter().enumerate() {
        let v = &found[id];
        data[(row + 2) * dim..(row + 3) * dim].copy_from_slice(v);
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    if unk == UnkInit::Mean && !ids.is_empty() {
        let n = ids.len() as f64;
        data[UNK * dim..(UNK + 1) * dim]
            .iter_mut()
            .zip(&mean)
            .for_each(|(d, m)| *d = m / n);
    }
    let vocab = Vocab::from_tokens(
        ids.iter()
            .map(|&id| corpus_vocab.token(id).expect("id from vocab").to_string()),
    );
    let rows = Tensor::new(vec![ids.len() + 2, dim], data)?;
    Ok((EmbeddingTable::new(vocab, rows, false)?, report))
}

/// Trainable tag table: uniform(-0.1, 0.1) rows, PAD row zero.
pub fn init_pos_table(tagset: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if tagset.is_empty() {
        return Err(Error::Config("POS tagset is empty".into()));
    }
    if dim == 0 {
        return Err(Error::Config("POS embedding dim must be positive".into()));
    }
    let vocab = Vocab::from_tokens(tagset.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Tensor::uniform(&[vocab.len(), dim], -0.1, 0.1, &mut rng);
    rows.data_mut()[..dim].iter_mut().for_each(|v| *v = 0.0);
    EmbeddingTable::new(vocab, rows, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexically() {
        let s = vec![words(&["a", "b", "a"])];
        let v = Vocab::build(&s);
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), Some(3));

        let s = vec![words(&["z", "y", "x", "y"])];
        let v = Vocab::build(&s);
        assert_eq!(&v.tokens()[2..], &words(&["y", "x", "z"])[..]);
        assert_eq!(v, Vocab::build(&s));
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let v = Vocab::build(Vec::<Vec<String>>::new().iter());
        assert_eq!(v.tokens(), &words(&[PAD_TOKEN, UNK_TOKEN])[..]);
        assert!(v.is_empty());
    }

    #[test]
    fn loads_plain_format() {
        let vocab = Vocab::from_tokens(["a", "b"]);
        let (t, rep) =
            read_vectors("a 1.0 0.0\nb 0.0 1.0\n".as_bytes(), &vocab, UnkInit::Mean).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 4);
        assert_eq!(t.vector("a"), &[1.0, 0.0]);
        assert_eq!(t.vector("b"), &[0.0, 1.0]);
        assert_eq!(t.rows().row(PAD), &[0.0, 0.0]);
        assert_eq!(t.rows().row(UNK), &[0.5, 0.5]);
        assert_eq!(rep.coverage(), 1.0);
        assert!(!t.trainable());
    }

    #[test]
    fn missing_tokens_map_to_unk() {
        let vocab = Vocab::from_tokens(["a", "zzz"]);
        let (t, rep) =
            read_vectors("a 1.0 0.0\nb 0.0 1.0\n".as_bytes(), &vocab, UnkInit::Zero).unwrap();
        assert_eq!(t.id("zzz"), UNK);
        assert_eq!(t.vector("zzz"), &[0.0, 0.0]);
        assert_eq!(rep.loaded, 1);
        assert_eq!(rep.coverage(), 0.5);
    }

    #[test]
    fn header_is_detected() {
        let vocab = Vocab::from_tokens(["a"]);
        let (t, _) =
            read_vectors("2 3\na 1 2 3\nb 4 5 6\n".as_bytes(), &vocab, UnkInit::Mean).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vector("a"), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn inconsistent_dims_name_the_line() {
        let vocab = Vocab::from_tokens(["a"]);
        let err = read_vectors("a 1 2 3\nb 4 5\n".as_bytes(), &vocab, UnkInit::Mean).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_values_are_skipped_and_counted() {
        let vocab = Vocab::from_tokens(["a", "b"]);
        let (t, rep) = read_vectors("a 1 x\nb 0 1\n".as_bytes(), &vocab, UnkInit::Mean).unwrap();
        assert_eq!(rep.malformed, 1);
        assert_eq!(t.id("a"), UNK);
    }

    #[test]
    fn line_order_does_not_matter() {
        let vocab = Vocab::from_tokens(["c", "a", "b"]);
        let one = "a 0.1 0.2\nb 0.3 0.4\nc 0.5 0.6\nq 9 9\n";
        let two = "q 9 9\nc 0.5 0.6\nb 0.3 0.4\na 0.1 0.2\n";
        let (t1, _) = read_vectors(one.as_bytes(), &vocab, UnkInit::Mean).unwrap();
        let (t2, _) = read_vectors(two.as_bytes(), &vocab, UnkInit::Mean).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn pos_table_shape_and_determinism() {
        let tags: Vec<String> = (0..17).map(|i| format!("T{i}")).collect();
        let t = init_pos_table(&tags, 8, 3).unwrap();
        assert_eq!(t.rows().shape(), &[19, 8]);
        assert!(t.rows().row(PAD).iter().all(|&v| v == 0.0));
        assert!(t.rows().data().iter().all(|v| v.abs() <= 0.1));
        assert!(t.trainable());
        assert_eq!(t, init_pos_table(&tags, 8, 3).unwrap());
        assert!(init_pos_table(&[], 8, 3).is_err());
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let tags: Vec<String> = ["DET", "NOUN", "VERB"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let t = init_pos_table(&tags, 8, 11).unwrap();
        t.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(t, back);
        let bits = |t: &EmbeddingTable| {
            t.rows()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&t), bits(&back));
    }
}
