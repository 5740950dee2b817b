//! CoNLL-2010 Wikipedia corpus ingestion.
//!
//! Sentences are parsed from the shared-task XML, cleaned and tokenized,
//! tagged with coarse POS tags, split into train/dev and written as JSON
//! lines (`{id, tokens, pos, label, cues}`), which is the only format the
//! rest of the toolkit reads.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{Vocab, PAD};
use crate::error::{Error, Result};

/// Sentence length cap (in tokens) applied before batching.
pub const MAX_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Certain,
    Uncertain,
}

impl Label {
    pub fn is_uncertain(self) -> bool {
        self == Label::Uncertain
    }

    pub fn as_target(self) -> f64 {
        if self.is_uncertain() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub pos: Vec<String>,
    pub label: Label,
    /// Half-open token intervals of cue phrases.
    #[serde(default)]
    pub cues: Vec<(usize, usize)>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: Label) -> Self {
        Sentence {
            id: id.into(),
            tokens,
            pos: Vec::new(),
            label,
            cues: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Characters treated as web noise. A token made only of these is removed.
pub const DEFAULT_NOISE: &str = "<>/-*|=_~^#[]{}\\`";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CleanConfig {
    pub lowercase: bool,
    pub noise: String,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            lowercase: true,
            noise: DEFAULT_NOISE.to_string(),
        }
    }
}

/// A token with its byte span in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Tokenizes and drops noise tokens, keeping byte offsets.
///
/// Words are runs of alphanumerics, optionally joined by a single inner
/// `-`, `'` or `.` (so "well-known", "don't" and "3.5" stay whole). Every
/// other non-space character is a token of its own.
pub fn tokenize_spans(raw: &str, cfg: &CleanConfig) -> Vec<Span> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(raw.len(), |c| c.0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        if c.is_alphanumeric() {
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                } else if matches!(cj, '-' | '\'' | '.')
                    && chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric())
                {
                    j += 2;
                } else {
                    break;
                }
            }
        }
        let text = &raw[start..end_of(j)];
        if !text.chars().all(|ch| cfg.noise.contains(ch)) {
            let text = if cfg.lowercase {
                text.to_lowercase()
            } else {
                text.to_string()
            };
            out.push(Span {
                text,
                start,
                end: end_of(j),
            });
        }
        i = j;
    }
    out
}

pub fn tokenize_clean(raw: &str, cfg: &CleanConfig) -> Result<Vec<String>> {
    let tokens: Vec<String> = tokenize_spans(raw, cfg)
        .into_iter()
        .map(|s| s.text)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

#[derive(Debug, Default)]
pub struct ParseOutput {
    pub sentences: Vec<Sentence>,
    pub warnings: Vec<String>,
}

fn is_sentence(name: &[u8]) -> bool {
    name.eq_ignore_ascii_case(b"sentence")
}

fn is_cue(name: &[u8]) -> bool {
    name.eq_ignore_ascii_case(b"ccue") || name.eq_ignore_ascii_case(b"cue")
}

/// Parses shared-task XML. Each `<Sentence>` yields one [`Sentence`],
/// labelled uncertain iff it contains at least one cue element. Sentences
/// that clean down to nothing are returned with empty `tokens`.
pub fn parse_conll_xml(doc: &[u8], cfg: &CleanConfig) -> Result<ParseOutput> {
    let mut reader = Reader::from_reader(doc);
    let mut out = ParseOutput::default();
    let mut buf = Vec::new();

    struct Open {
        id: String,
        text: String,
        cues: Vec<(usize, usize)>,
        open_cues: Vec<usize>,
    }
    let mut current: Option<Open> = None;
    let parse_err = |reader: &Reader<&[u8]>, e: &dyn std::fmt::Display| Error::Parse {
        offset: reader.buffer_position(),
        message: e.to_string(),
    };

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| parse_err(&reader, &e))?;
        match event {
            Event::Start(e) if is_sentence(e.local_name().as_ref()) => {
                if current.is_some() {
                    return Err(parse_err(&reader, &"nested <Sentence> element"));
                }
                let mut id = None;
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| parse_err(&reader, &e))?;
                    if attr.key.local_name().as_ref().eq_ignore_ascii_case(b"id") {
                        let v = attr.unescape_value().map_err(|e| parse_err(&reader, &e))?;
                        id = Some(v.into_owned());
                    }
                }
                current = Some(Open {
                    id: id.unwrap_or_else(|| format!("s{}", out.sentences.len())),
                    text: String::new(),
                    cues: Vec::new(),
                    open_cues: Vec::new(),
                });
            }
            Event::Empty(e) if is_sentence(e.local_name().as_ref()) => {
                out.warnings.push(format!(
                    "empty sentence element at byte {}",
                    reader.buffer_position()
                ));
            }
            Event::Start(e) if is_cue(e.local_name().as_ref()) => {
                if let Some(s) = current.as_mut() {
                    s.open_cues.push(s.text.len());
                }
            }
            Event::Empty(e) if is_cue(e.local_name().as_ref()) => {
                if let Some(s) = current.as_mut() {
                    s.cues.push((s.text.len(), s.text.len()));
                }
            }
            Event::End(e) if is_cue(e.local_name().as_ref()) => {
                if let Some(s) = current.as_mut() {
                    if let Some(start) = s.open_cues.pop() {
                        s.cues.push((start, s.text.len()));
                    }
                }
            }
            Event::Text(t) => {
                if let Some(s) = current.as_mut() {
                    let text = t.unescape().map_err(|e| parse_err(&reader, &e))?;
                    s.text.push_str(&text);
                }
            }
            Event::CData(t) => {
                if let Some(s) = current.as_mut() {
                    s.text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(e) if is_sentence(e.local_name().as_ref()) => {
                let s = current.take().expect("matched start");
                out.sentences.push(finish_sentence(
                    s.id,
                    &s.text,
                    &s.cues,
                    cfg,
                    &mut out.warnings,
                ));
            }
            Event::Eof => {
                if current.is_some() {
                    return Err(parse_err(&reader, &"unterminated <Sentence> element"));
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(out)
}

fn finish_sentence(
    id: String,
    text: &str,
    cue_bytes: &[(usize, usize)],
    cfg: &CleanConfig,
    warnings: &mut Vec<String>,
) -> Sentence {
    let spans = tokenize_spans(text, cfg);
    let label = if cue_bytes.is_empty() {
        Label::Certain
    } else {
        Label::Uncertain
    };
    let mut cues = Vec::new();
    for &(cs, ce) in cue_bytes {
        let hit: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, s)| s.start < ce && s.end > cs)
            .map(|(i, _)| i)
            .collect();
        match (hit.first(), hit.last()) {
            (Some(&a), Some(&b)) => cues.push((a, b + 1)),
            _ => warnings.push(format!(
                "{id}: cue at bytes {cs}..{ce} covers no token, span dropped"
            )),
        }
    }
    if spans.is_empty() {
        warnings.push(format!("{id}: sentence is empty after cleaning"));
    }
    Sentence {
        id,
        tokens: spans.into_iter().map(|s| s.text).collect(),
        pos: Vec::new(),
        label,
        cues,
    }
}

/// The 17 coarse universal POS tags.
pub const UNIVERSAL_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

const DET: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "some", "any", "every", "each", "no",
    "all", "both", "either", "neither", "another", "such", "what", "which", "whose", "many",
    "much", "few", "several", "most", "more", "less",
];
const PRON: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "me",
    "him",
    "her",
    "us",
    "them",
    "my",
    "your",
    "his",
    "its",
    "our",
    "their",
    "mine",
    "yours",
    "hers",
    "ours",
    "theirs",
    "myself",
    "yourself",
    "himself",
    "herself",
    "itself",
    "ourselves",
    "themselves",
    "who",
    "whom",
    "someone",
    "somebody",
    "anyone",
    "everyone",
    "everybody",
    "nobody",
    "something",
    "anything",
    "everything",
    "nothing",
    "one",
    "others",
];
const ADP: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "about", "over",
    "under", "between", "among", "through", "during", "before", "after", "above", "below",
    "against", "without", "within", "across", "behind", "beyond", "near", "upon", "around",
    "along", "toward", "towards", "despite", "via", "per", "like",
];
const AUX: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "have", "has", "had", "do", "does",
    "did", "may", "might", "can", "could", "will", "would", "shall", "should", "must", "ought",
];
const CCONJ: &[&str] = &["and", "or", "but", "nor", "yet", "so"];
const SCONJ: &[&str] = &[
    "if", "because", "although", "though", "while", "whether", "since", "unless", "until",
    "whereas", "as", "than", "once",
];
const PART: &[&str] = &["not", "n't", "'s", "to"];
const INTJ: &[&str] = &["oh", "yes", "hello", "wow", "ah", "hey"];
const ADV: &[&str] = &[
    "very",
    "also",
    "often",
    "never",
    "always",
    "sometimes",
    "however",
    "perhaps",
    "still",
    "already",
    "just",
    "even",
    "only",
    "too",
    "quite",
    "rather",
    "almost",
    "here",
    "there",
    "now",
    "then",
    "thus",
    "probably",
    "possibly",
    "apparently",
    "arguably",
    "well",
    "soon",
    "ever",
    "again",
    "where",
    "when",
    "why",
    "how",
];

/// Deterministic rule-based tagger over the universal tagset: a closed-class
/// lexicon, then punctuation/number checks, then suffix rules, defaulting to
/// NOUN. It is a stand-in for a statistical tagger and is approximate.
pub fn heuristic_pos_tag(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| tag_one(t).to_string()).collect()
}

fn tag_one(token: &str) -> &'static str {
    let t = token.to_lowercase();
    let t = t.as_str();
    // "to" is ambiguous; ADP is the more common reading in running text.
    for (words, tag) in [
        (DET, "DET"),
        (PRON, "PRON"),
        (ADP, "ADP"),
        (AUX, "AUX"),
        (CCONJ, "CCONJ"),
        (SCONJ, "SCONJ"),
        (PART, "PART"),
        (INTJ, "INTJ"),
        (ADV, "ADV"),
    ] {
        if words.contains(&t) {
            return tag;
        }
    }
    if t.chars()
        .all(|c| c.is_ascii_punctuation() || !c.is_alphanumeric())
    {
        return if t.chars().any(|c| "$%&+@§°".contains(c)) {
            "SYM"
        } else {
            "PUNCT"
        };
    }
    if t.chars().next().is_some_and(|c| c.is_ascii_digit())
        && t.chars().all(|c| c.is_ascii_digit() || ".,-".contains(c))
    {
        return "NUM";
    }
    let long = t.chars().count() > 4;
    if long && t.ends_with("ly") {
        "ADV"
    } else if long && (t.ends_with("ed") || t.ends_with("ing")) {
        "VERB"
    } else if long
        && ["ous", "ful", "able", "ible", "ive", "ical", "less", "ish"]
            .iter()
            .any(|s| t.ends_with(s))
    {
        "ADJ"
    } else if long && ["ize", "ise", "ify", "ate"].iter().any(|s| t.ends_with(s)) {
        "VERB"
    } else {
        "NOUN"
    }
}

/// Tags every sentence with [`heuristic_pos_tag`].
pub fn attach_heuristic_pos(sentences: &mut [Sentence]) {
    for s in sentences {
        s.pos = heuristic_pos_tag(&s.tokens);
    }
}

/// Attaches POS tags from a sidecar: one line per sentence, space-separated
/// tags aligned to the cleaned tokens. Returns the sorted tagset seen.
pub fn attach_pos(sentences: &mut [Sentence], sidecar: &str) -> Result<Vec<String>> {
    let lines: Vec<&str> = sidecar.lines().collect();
    if lines.len() != sentences.len() {
        let id = sentences
            .get(lines.len().min(sentences.len().saturating_sub(1)))
            .map_or("<none>".to_string(), |s| s.id.clone());
        return Err(Error::Alignment {
            id,
            message: format!(
                "sidecar has {} lines for {} sentences",
                lines.len(),
                sentences.len()
            ),
        });
    }
    let mut tags = Vec::with_capacity(sentences.len());
    for (s, line) in sentences.iter().zip(&lines) {
        let t: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if t.len() != s.tokens.len() {
            return Err(Error::Alignment {
                id: s.id.clone(),
                message: format!("{} tags for {} tokens", t.len(), s.tokens.len()),
            });
        }
        tags.push(t);
    }
    for (s, t) in sentences.iter_mut().zip(tags) {
        s.pos = t;
    }
    Ok(tagset(sentences))
}

/// Sorted distinct POS tags across sentences.
pub fn tagset(sentences: &[Sentence]) -> Vec<String> {
    let set: BTreeSet<&str> = sentences
        .iter()
        .flat_map(|s| s.pos.iter().map(String::as_str))
        .collect();
    set.into_iter().map(str::to_string).collect()
}

/// Seeded unstratified split. `round(ratio * n)` sentences go to dev; both
/// parts keep the input order.
pub fn split_train_dev(
    sentences: Vec<Sentence>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = sentences.len();
    let n_dev = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..n_dev] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::with_capacity(n - n_dev), Vec::with_capacity(n_dev));
    for (s, d) in sentences.into_iter().zip(is_dev) {
        if d {
            dev.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, dev))
}

/// Keeps the first `max_len` ids and pads with PAD up to `max_len`.
pub fn truncate_pad(ids: &[usize], max_len: usize) -> (Vec<usize>, Vec<bool>) {
    let keep = ids.len().min(max_len);
    let mut out = ids[..keep].to_vec();
    out.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < keep).collect();
    (out, mask)
}

/// Fraction of sentences labelled certain.
pub fn class_distribution(sentences: &[Sentence]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Contract(
            "class distribution of an empty list".into(),
        ));
    }
    let certain = sentences.iter().filter(|s| !s.label.is_uncertain()).count();
    Ok(certain as f64 / sentences.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sentences: usize,
    pub certain: usize,
    pub uncertain: usize,
    pub certain_fraction: f64,
    pub empty_after_cleaning: usize,
    pub mean_length: f64,
    pub truncated: usize,
    /// Token-count histogram in buckets of 8 (`[0,8)`, `[8,16)`, ...).
    pub length_histogram: Vec<usize>,
}

impl SplitStats {
    pub fn of(sentences: &[Sentence], max_len: usize) -> Self {
        let n = sentences.len();
        let certain = sentences.iter().filter(|s| !s.label.is_uncertain()).count();
        let mut hist = Vec::new();
        let mut total = 0usize;
        for s in sentences {
            let b = s.tokens.len() / 8;
            if hist.len() <= b {
                hist.resize(b + 1, 0);
            }
            hist[b] += 1;
            total += s.tokens.len();
        }
        SplitStats {
            sentences: n,
            certain,
            uncertain: n - certain,
            certain_fraction: if n == 0 {
                0.0
            } else {
                certain as f64 / n as f64
            },
            empty_after_cleaning: sentences.iter().filter(|s| s.is_empty()).count(),
            mean_length: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            truncated: sentences
                .iter()
                .filter(|s| s.tokens.len() > max_len)
                .count(),
            length_histogram: hist,
        }
    }
}

pub fn write_jsonl(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sentence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentence = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

/// Where POS tags come from during preparation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PosSource {
    /// Directory holding `train.pos` and `eval.pos`, one line per source
    /// sentence in document order.
    Sidecar(PathBuf),
    Heuristic,
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub train_xml: PathBuf,
    pub eval_xml: PathBuf,
    pub out_dir: PathBuf,
    pub pos: PosSource,
    pub clean: CleanConfig,
    pub dev_ratio: f64,
    pub seed: u64,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub format_version: u32,
    pub seed: u64,
    pub dev_ratio: f64,
    pub lowercase: bool,
    pub noise: String,
    pub pos_source: String,
    pub max_len: usize,
    pub source_train: SplitStats,
    /// Train and dev sizes straight out of the split, before empty
    /// sentences are dropped.
    pub split_sizes: (usize, usize),
    pub dropped_empty: usize,
    pub train: SplitStats,
    pub dev: SplitStats,
    pub eval: SplitStats,
    /// Certain fraction over the source training file plus the eval file.
    pub certain_fraction_all: f64,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub tagset: Vec<String>,
    pub warnings: usize,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TAGSET_FILE: &str = "tagset.txt";
pub const STATS_FILE: &str = "stats.json";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Full preparation pipeline. Writes the split JSON-lines files, the
/// vocabulary, the tagset and `stats.json` into `out_dir`.
///
/// The split runs over every source training sentence, so its sizes match
/// the source count exactly. Sentences emptied by cleaning are then dropped
/// from train and dev but kept in eval (they are predicted certain).
pub fn prepare(opts: &PrepareOptions) -> Result<(CorpusStats, Vec<String>)> {
    let train_doc = read_file(&opts.train_xml)?;
    let eval_doc = read_file(&opts.eval_xml)?;
    let mut train = parse_conll_xml(&train_doc, &opts.clean)?;
    let mut eval = parse_conll_xml(&eval_doc, &opts.clean)?;
    let mut warnings = std::mem::take(&mut train.warnings);
    warnings.append(&mut eval.warnings);
    let (mut train, mut eval) = (train.sentences, eval.sentences);

    let pos_source = match &opts.pos {
        PosSource::Sidecar(dir) => {
            for (name, set) in [("train.pos", &mut train), ("eval.pos", &mut eval)] {
                let path = dir.join(name);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                attach_pos(set, &text)?;
            }
            format!("sidecar:{}", dir.display())
        }
        PosSource::Heuristic => {
            attach_heuristic_pos(&mut train);
            attach_heuristic_pos(&mut eval);
            "heuristic".to_string()
        }
    };

    let source_train = SplitStats::of(&train, opts.max_len);
    let all_certain = train
        .iter()
        .chain(&eval)
        .filter(|s| !s.label.is_uncertain())
        .count();
    let certain_fraction_all = all_certain as f64 / (train.len() + eval.len()).max(1) as f64;

    let (mut train_split, mut dev_split) = split_train_dev(train, opts.dev_ratio, opts.seed)?;
    let split_sizes = (train_split.len(), dev_split.len());
    let dropped = train_split
        .iter()
        .chain(&dev_split)
        .filter(|s| s.is_empty())
        .count();
    if dropped > 0 {
        log::warn!("dropping {dropped} train/dev sentences that are empty after cleaning");
    }
    train_split.retain(|s| !s.is_empty());
    dev_split.retain(|s| !s.is_empty());
    let eval_empty = eval.iter().filter(|s| s.is_empty()).count();
    if eval_empty > 0 {
        log::warn!(
            "{eval_empty} eval sentences are empty after cleaning; they will be predicted certain"
        );
    }

    let vocab = Vocab::build(
        train_split
            .iter()
            .chain(&dev_split)
            .chain(&eval)
            .map(|s| &s.tokens),
    );
    let mut all = train_split.clone();
    all.extend(dev_split.iter().cloned());
    all.extend(eval.iter().cloned());
    let tags = tagset(&all);

    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    write_jsonl(&opts.out_dir.join(TRAIN_FILE), &train_split)?;
    write_jsonl(&opts.out_dir.join(DEV_FILE), &dev_split)?;
    write_jsonl(&opts.out_dir.join(EVAL_FILE), &eval)?;
    vocab.write(&opts.out_dir.join(VOCAB_FILE))?;
    let tag_path = opts.out_dir.join(TAGSET_FILE);
    std::fs::write(&tag_path, tags.join("\n") + "\n").map_err(|e| Error::io(&tag_path, e))?;

    let stats = CorpusStats {
        format_version: 1,
        seed: opts.seed,
        dev_ratio: opts.dev_ratio,
        lowercase: opts.clean.lowercase,
        noise: opts.clean.noise.clone(),
        pos_source,
        max_len: opts.max_len,
        source_train,
        split_sizes,
        dropped_empty: dropped,
        train: SplitStats::of(&train_split, opts.max_len),
        dev: SplitStats::of(&dev_split, opts.max_len),
        eval: SplitStats::of(&eval, opts.max_len),
        certain_fraction_all,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        tagset: tags,
        warnings: warnings.len(),
    };
    let stats_path = opts.out_dir.join(STATS_FILE);
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")
        .map_err(|e| Error::io(&stats_path, e))?;
    Ok((stats, warnings))
}

/// A prepared corpus directory loaded back into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub eval: Vec<Sentence>,
    pub vocab: Vocab,
    pub tagset: Vec<String>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let tag_path = dir.join(TAGSET_FILE);
        let tags = std::fs::read_to_string(&tag_path).map_err(|e| Error::io(&tag_path, e))?;
        Ok(Corpus {
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            dev: read_jsonl(&dir.join(DEV_FILE))?,
            eval: read_jsonl(&dir.join(EVAL_FILE))?,
            vocab: Vocab::read(&dir.join(VOCAB_FILE))?,
            tagset: tags
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        })
    }

    pub fn split(&self, name: &str) -> Option<&[Sentence]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "eval" => Some(&self.eval),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        let cfg = CleanConfig::default();
        assert_eq!(
            tokenize_clean("the <> facts", &cfg).unwrap(),
            toks(&["the", "facts"])
        );
        assert_eq!(
            tokenize_clean("Some believe this.", &cfg).unwrap(),
            toks(&["some", "believe", "this", "."])
        );
        assert!(matches!(
            tokenize_clean("***", &cfg),
            Err(Error::EmptySentence)
        ));
        assert_eq!(
            tokenize_clean("a well-known -- fact / 3.5 don't", &cfg).unwrap(),
            toks(&["a", "well-known", "fact", "3.5", "don't"])
        );
        let cased = CleanConfig {
            lowercase: false,
            ..Default::default()
        };
        assert_eq!(tokenize_clean("Some", &cased).unwrap(), toks(&["Some"]));
    }

    #[test]
    fn parse_labels_and_cues() {
        let xml = br#"<?xml version="1.0"?>
<Annotation><DocumentSet><Document><DocumentPart>
<Sentence certainty="certain" id="S1">The cat sat.</Sentence>
<Sentence certainty="uncertain" id="S2">Some <ccue>believe</ccue> that it <ccue>may</ccue> rain &amp; snow.</Sentence>
<Sentence id="S3">***</Sentence>
</DocumentPart></Document></DocumentSet></Annotation>"#;
        let out = parse_conll_xml(xml, &CleanConfig::default()).unwrap();
        assert_eq!(out.sentences.len(), 3);
        let s1 = &out.sentences[0];
        assert_eq!(s1.label, Label::Certain);
        assert!(s1.cues.is_empty());
        let s2 = &out.sentences[1];
        assert_eq!(s2.id, "S2");
        assert_eq!(s2.label, Label::Uncertain);
        assert_eq!(s2.tokens[1], "believe");
        assert_eq!(s2.cues, vec![(1, 2), (4, 5)]);
        assert!(s2.tokens.contains(&"&".to_string()));
        assert!(out.sentences[2].is_empty());
    }

    #[test]
    fn noise_only_cue_is_dropped_but_label_kept() {
        let xml = br#"<r><Sentence id="a">x <ccue>**</ccue> y</Sentence></r>"#;
        let out = parse_conll_xml(xml, &CleanConfig::default()).unwrap();
        assert_eq!(out.sentences[0].label, Label::Uncertain);
        assert!(out.sentences[0].cues.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn malformed_xml_reports_offset() {
        let xml = br#"<r><Sentence id="a">x</Sentenc></r>"#;
        let err = parse_conll_xml(xml, &CleanConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn heuristic_tags() {
        assert_eq!(heuristic_pos_tag(&toks(&["the"])), toks(&["DET"]));
        assert_eq!(heuristic_pos_tag(&toks(&["quickly"])), toks(&["ADV"]));
        assert_eq!(heuristic_pos_tag(&toks(&["flurble"])), toks(&["NOUN"]));
        assert_eq!(
            heuristic_pos_tag(&toks(&["it", "might", "be", "raining", ",", "42"])),
            toks(&["PRON", "AUX", "AUX", "VERB", "PUNCT", "NUM"])
        );
        for t in heuristic_pos_tag(&toks(&["x", "!", "$", "the", "running", "ugly"])) {
            assert!(UNIVERSAL_TAGS.contains(&t.as_str()));
        }
    }

    #[test]
    fn sidecar_alignment() {
        let mut s = vec![Sentence::new(
            "s1",
            toks(&["some", "believe"]),
            Label::Uncertain,
        )];
        let tags = attach_pos(&mut s, "DET VERB\n").unwrap();
        assert_eq!(s[0].pos, toks(&["DET", "VERB"]));
        assert_eq!(tags, toks(&["DET", "VERB"]));
        let err = attach_pos(&mut s, "DET VERB NOUN\n").unwrap_err();
        assert!(matches!(err, Error::Alignment { ref id, .. } if id == "s1"));
        assert!(attach_pos(&mut s, "").is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let sents: Vec<Sentence> = (0..11_110)
            .map(|i| Sentence::new(format!("s{i}"), toks(&["x"]), Label::Certain))
            .collect();
        let (train, dev) = split_train_dev(sents.clone(), 0.1, 7).unwrap();
        assert_eq!((train.len(), dev.len()), (9_999, 1_111));
        let (_, dev2) = split_train_dev(sents.clone(), 0.1, 7).unwrap();
        assert_eq!(dev, dev2);
        let (_, dev3) = split_train_dev(sents, 0.1, 8).unwrap();
        assert_ne!(dev, dev3);
        assert!(split_train_dev(vec![], 1.0, 0).is_err());
    }

    #[test]
    fn truncate_and_pad() {
        let ids: Vec<usize> = (2..82).collect();
        let (out, mask) = truncate_pad(&ids, 64);
        assert_eq!(out, (2..66).collect::<Vec<_>>());
        assert!(mask.iter().all(|&m| m));
        let (out, mask) = truncate_pad(&ids[..10], 64);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 10);
        assert_eq!(mask.iter().filter(|&&m| !m).count(), 54);
        assert!(out[10..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn class_fractions() {
        let c = Sentence::new("a", toks(&["x"]), Label::Certain);
        let u = Sentence::new("b", toks(&["x"]), Label::Uncertain);
        assert_eq!(class_distribution(&[c.clone(), c.clone()]).unwrap(), 1.0);
        assert_eq!(class_distribution(&[c, u]).unwrap(), 0.5);
        assert!(class_distribution(&[]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut s = Sentence::new("a", toks(&["some", "believe"]), Label::Uncertain);
        s.pos = toks(&["DET", "VERB"]);
        s.cues = vec![(0, 2)];
        write_jsonl(&p, &[s.clone()]).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), vec![s]);
        let line = std::fs::read_to_string(&p).unwrap();
        for key in [
            "\"id\"",
            "\"tokens\"",
            "\"pos\"",
            "\"label\":\"uncertain\"",
            "\"cues\"",
        ] {
            assert!(line.contains(key), "{line}");
        }
    }
}
