//! Tiny synthetic corpus in the shared-task XML layout, with a matching
//! vector file and POS sidecar, for tests and demos.
//!
//! Uncertain sentences carry one of a handful of cue phrases; certain ones
//! are plain factual templates. A few sentences contain web noise and one
//! eval sentence cleans down to nothing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hedge_core::corpus::{heuristic_pos_tag, parse_conll_xml, CleanConfig};
use hedge_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOUNS: [&str; 12] = [
    "river", "city", "council", "album", "player", "species", "bridge", "company", "army",
    "theory", "museum", "festival",
];
const PAST: [&str; 8] = [
    "built",
    "won",
    "described",
    "founded",
    "released",
    "joined",
    "crossed",
    "studied",
];
const BASE: [&str; 8] = [
    "build", "win", "describe", "found", "release", "join", "cross", "study",
];
const ADJ: [&str; 5] = ["large", "famous", "ancient", "popular", "small"];
const NOISE: [&str; 4] = ["&lt;&gt;", "--", "*", "/"];

/// Words deliberately missing from the vector file (they map to UNK).
pub const MISSING_WORDS: [&str; 2] = ["festival", "studied"];

pub const VECTOR_DIM: usize = 16;

fn pick<'a>(r: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(r).expect("non-empty")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| {
        f.to_uppercase().collect::<String>() + c.as_str()
    })
}

fn certain(r: &mut ChaCha8Rng) -> String {
    let year = r.gen_range(1900..2010);
    let (n1, n2) = (pick(r, &NOUNS), pick(r, &NOUNS));
    let (a1, a2) = (pick(r, &ADJ), pick(r, &ADJ));
    let v = pick(r, &PAST);
    match r.gen_range(0..3) {
        0 => format!("The {a1} {n1} {v} the {n2} in {year}."),
        1 => format!("In {year}, the {n1} {v} a {a1} {n2}."),
        _ => format!("The {n1} is {a1} and {a2}."),
    }
}

fn uncertain(r: &mut ChaCha8Rng) -> String {
    let year = r.gen_range(1900..2010);
    let (n1, n2) = (pick(r, &NOUNS), pick(r, &NOUNS));
    let a = pick(r, &ADJ);
    let i = r.gen_range(0..PAST.len());
    let (vp, vb) = (PAST[i], BASE[i]);
    match r.gen_range(0..5) {
        0 => format!("The {n1} <ccue>may</ccue> {vb} the {n2}."),
        1 => format!("<ccue>Some believe</ccue> that the {n1} {vp} the {n2}."),
        2 => format!("The {a} {n1} <ccue>possibly</ccue> {vp} a {n2} in {year}."),
        3 => format!("It is <ccue>widely considered</ccue> that the {n1} is {a}."),
        _ => format!("The {n1} <ccue>might</ccue> have {vp} the {n2}."),
    }
}

fn with_noise(r: &mut ChaCha8Rng, s: String) -> String {
    if r.gen_bool(0.15) {
        let noise = pick(r, &NOISE);
        s.replacen(" the ", &format!(" {noise} the "), 1)
    } else {
        s
    }
}

fn document(
    r: &mut ChaCha8Rng,
    prefix: &str,
    n_certain: usize,
    n_uncertain: usize,
    extra: &[&str],
) -> String {
    let mut labels: Vec<bool> = std::iter::repeat_n(false, n_certain)
        .chain(std::iter::repeat_n(true, n_uncertain))
        .collect();
    labels.shuffle(r);
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Annotation type=\"Wikipedia\">\n<DocumentSet>\n<Document type=\"Wikipedia\">\n<DocumentPart type=\"Text\">\n");
    for (i, &u) in labels.iter().enumerate() {
        let text = if u { uncertain(r) } else { certain(r) };
        let text = with_noise(r, text).replace(" & ", " &amp; ");
        let cert = if u { "uncertain" } else { "certain" };
        writeln!(
            xml,
            "<Sentence certainty=\"{cert}\" id=\"{prefix}{i}\">{}</Sentence>",
            capitalize(&text)
        )
        .unwrap();
    }
    for (j, text) in extra.iter().enumerate() {
        writeln!(
            xml,
            "<Sentence certainty=\"certain\" id=\"{prefix}x{j}\">{text}</Sentence>"
        )
        .unwrap();
    }
    xml.push_str("</DocumentPart>\n</Document>\n</DocumentSet>\n</Annotation>\n");
    xml
}

fn sidecar(xml: &str) -> Result<String> {
    let parsed = parse_conll_xml(xml.as_bytes(), &CleanConfig::default())?;
    let mut out = String::new();
    for s in parsed.sentences {
        out.push_str(&heuristic_pos_tag(&s.tokens).join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn vectors(r: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = NOUNS
        .iter()
        .chain(&PAST)
        .chain(&BASE)
        .chain(&ADJ)
        .chain(&[
            "the",
            "a",
            "in",
            "is",
            "and",
            "that",
            "it",
            "have",
            "may",
            "might",
            "some",
            "believe",
            "possibly",
            "widely",
            "considered",
            ".",
            ",",
            "unrelated",
            "zebra",
        ])
        .filter(|w| !MISSING_WORDS.contains(w))
        .map(|w| w.to_string())
        .collect();
    words.sort();
    words.dedup();
    let mut out = format!("{} {VECTOR_DIM}\n", words.len());
    for w in words {
        out.push_str(&w);
        for _ in 0..VECTOR_DIM {
            write!(out, " {:.6}", r.gen_range(-1.0..1.0)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Paths of a written fixture.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub train_xml: PathBuf,
    pub eval_xml: PathBuf,
    pub vectors: PathBuf,
    pub pos_dir: PathBuf,
}

pub const TRAIN_SENTENCES: usize = 64;
pub const EVAL_SENTENCES: usize = 41;

/// Writes `train.xml` (64 sentences, 20 uncertain), `eval.xml` (40 plus
/// one all-noise sentence), `vectors.txt` and `pos/{train,eval}.pos`.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<Fixture> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let train = document(&mut r, "t", 44, 20, &[]);
    let eval = document(&mut r, "e", 28, 12, &["* -- * /"]);
    let vecs = vectors(&mut r);
    let pos_dir = dir.join("pos");
    std::fs::create_dir_all(&pos_dir).map_err(|e| Error::io(&pos_dir, e))?;
    let fx = Fixture {
        train_xml: dir.join("train.xml"),
        eval_xml: dir.join("eval.xml"),
        vectors: dir.join("vectors.txt"),
        pos_dir: pos_dir.clone(),
    };
    let files = [
        (fx.train_xml.clone(), train.clone()),
        (fx.eval_xml.clone(), eval.clone()),
        (fx.vectors.clone(), vecs),
        (pos_dir.join("train.pos"), sidecar(&train)?),
        (pos_dir.join("eval.pos"), sidecar(&eval)?),
    ];
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(fx)
}
