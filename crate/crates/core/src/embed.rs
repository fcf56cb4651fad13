//! Word embeddings, the SentiWordNet lexicon and joint k-gram representations.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 300;

/// What an out-of-vocabulary word resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    #[default]
    Zero,
    /// Uniform in `[-0.25, 0.25]`, drawn from a generator seeded by the word
    /// and `seed`, so a word always gets the same vector.
    SeededRandom { seed: u64 },
}

impl OovPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            OovPolicy::Zero => "zero",
            OovPolicy::SeededRandom { .. } => "seeded_random",
        }
    }

    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "zero" => Ok(OovPolicy::Zero),
            "seeded_random" => Ok(OovPolicy::SeededRandom { seed }),
            other => Err(Error::Config(format!("unknown oov policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable<T> {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<T>,
    pub oov: OovPolicy,
}

impl<T: Scalar> WordEmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        WordEmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            oov: OovPolicy::Zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Adds `word`; returns false (and keeps the existing vector) when the
    /// word is already present.
    pub fn insert(&mut self, word: &str, vector: &[T]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Mismatch(format!(
                "vector for {word:?} has length {} but the table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_owned(), self.words.len());
        self.words.push(word.to_owned());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Writes the vector for `word` into `out`, resolving [`PAD`] to zeros
    /// and unknown words through the OOV policy.
    pub fn write_vector(&self, word: &str, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.dim);
        if word == PAD {
            out.fill(T::zero());
            return;
        }
        match (self.get(word), self.oov) {
            (Some(v), _) => out.copy_from_slice(v),
            (None, OovPolicy::Zero) => out.fill(T::zero()),
            (None, OovPolicy::SeededRandom { seed }) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(word.as_bytes()));
                for x in out.iter_mut() {
                    *x = T::of(rng.random_range(-0.25..=0.25));
                }
            }
        }
    }

    pub fn vector(&self, word: &str) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.write_vector(word, &mut out);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.words
            .iter()
            .zip(self.vectors.chunks_exact(self.dim.max(1)))
            .map(|(w, v)| (w.as_str(), v))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Byte reader that remembers how far it has read.
struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: BufRead> Counting<R> {
    fn read_until(&mut self, delim: u8, buf: &mut Vec<u8>) -> std::io::Result<usize> {
        let n = self.inner.read_until(delim, buf)?;
        self.offset += n as u64;
        Ok(n)
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> std::io::Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..])? {
                0 => {
                    self.offset += filled as u64;
                    return Err(std::io::ErrorKind::UnexpectedEof.into());
                }
                n => filled += n,
            }
        }
        self.offset += filled as u64;
        Ok(())
    }

    fn peek(&mut self) -> std::io::Result<Option<u8>> {
        Ok(self.inner.fill_buf()?.first().copied())
    }

    fn consume(&mut self, n: usize) {
        self.inner.consume(n);
        self.offset += n as u64;
    }
}

/// Reads the word2vec binary format: an ASCII `<vocab_size> <dim>\n` header
/// followed by `<word> ` and `dim` little-endian `f32`s per entry, each entry
/// optionally terminated by `\n`.
///
/// When `keep` is given only those words are stored; the rest are skipped.
/// Duplicate words keep their first vector.
pub fn read_word2vec_binary<T: Scalar, R: BufRead>(
    reader: R,
    keep: Option<&HashSet<String>>,
) -> Result<WordEmbeddingTable<T>> {
    let mut r = Counting {
        inner: reader,
        offset: 0,
    };
    let header_err = |offset: u64, message: &str| Error::Word2Vec {
        offset,
        word: String::new(),
        message: message.to_owned(),
    };
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)
        .map_err(|e| header_err(0, &e.to_string()))?;
    if header.last() != Some(&b'\n') {
        return Err(header_err(r.offset, "missing header line"));
    }
    let header = String::from_utf8_lossy(&header);
    let mut fields = header.split_whitespace().map(str::parse::<usize>);
    let (vocab_size, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(Ok(v)), Some(Ok(d)), None) if d > 0 => (v, d),
        _ => return Err(header_err(0, "header must be `<vocab_size> <dim>`")),
    };

    let mut table = WordEmbeddingTable::new(dim);
    let mut raw = vec![0u8; dim * 4];
    let mut vector = vec![T::zero(); dim];
    let mut duplicates = 0usize;
    for entry in 0..vocab_size {
        while let Some(b) = r.peek().map_err(|e| header_err(r.offset, &e.to_string()))? {
            if b == b'\n' {
                r.consume(1);
            } else {
                break;
            }
        }
        let start = r.offset;
        let mut word = Vec::new();
        r.read_until(b' ', &mut word)
            .map_err(|e| header_err(start, &e.to_string()))?;
        if word.pop() != Some(b' ') {
            return Err(Error::Word2Vec {
                offset: r.offset,
                word: String::from_utf8_lossy(&word).into_owned(),
                message: format!("file ends inside entry {entry} of {vocab_size}"),
            });
        }
        let word = String::from_utf8_lossy(&word).into_owned();
        if r.read_exact(&mut raw).is_err() {
            return Err(Error::Word2Vec {
                offset: r.offset,
                word,
                message: format!("vector truncated, expected {} bytes", dim * 4),
            });
        }
        if keep.is_some_and(|k| !k.contains(&word)) {
            continue;
        }
        for (x, bytes) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *x = T::of_f32(f32::from_le_bytes(bytes.try_into().unwrap()));
        }
        if !table.insert(&word, &vector)? {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("word2vec: {duplicates} duplicate words ignored (first occurrence kept)");
    }
    Ok(table)
}

pub fn load_word2vec_binary<T: Scalar>(
    path: &Path,
    keep: Option<&HashSet<String>>,
) -> Result<WordEmbeddingTable<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_binary(BufReader::new(file), keep)
}

/// Writes `table` in the word2vec binary format, one `\n` after each vector.
pub fn write_word2vec_binary<T: Scalar, W: Write>(
    table: &WordEmbeddingTable<T>,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{} {}", table.len(), table.dim())?;
    for (word, vector) in table.iter() {
        w.write_all(word.as_bytes())?;
        w.write_all(b" ")?;
        for &x in vector {
            let x = x.to_f32().unwrap_or(f32::NAN);
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_word2vec_binary<T: Scalar>(table: &WordEmbeddingTable<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_word2vec_binary(table, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Per-word sentiment sense pairs `(positive, negative)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentiLexicon {
    senses: HashMap<String, Vec<(f64, f64)>>,
}

impl SentiLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_sense(&mut self, word: &str, pos: f64, neg: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&pos) || !(0.0..=1.0).contains(&neg) {
            return Err(Error::Validation(format!(
                "sentiment scores for {word:?} must lie in [0,1], got ({pos}, {neg})"
            )));
        }
        self.senses
            .entry(word.to_owned())
            .or_default()
            .push((pos, neg));
        Ok(())
    }

    pub fn senses(&self, word: &str) -> &[(f64, f64)] {
        self.senses.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.senses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senses.is_empty()
    }

    /// SentiWordNet-style TSV with one line per sense, words in sorted order.
    /// Scores print in shortest round-trip form, so parsing the text back
    /// yields the same lexicon bit for bit.
    pub fn to_sentiwordnet_text(&self) -> String {
        let mut words: Vec<&String> = self.senses.keys().collect();
        words.sort();
        let mut out = String::from("# POS\tID\tPosScore\tNegScore\tSynsetTerms\tGloss\n");
        let mut id = 0;
        for w in words {
            for (i, (p, n)) in self.senses[w].iter().enumerate() {
                id += 1;
                out.push_str(&format!("a\t{id:08}\t{p}\t{n}\t{w}#{}\t\n", i + 1));
            }
        }
        out
    }

    /// Element-wise maximum over every sense of `word`; `(0, 0)` if unknown.
    pub fn senti_score(&self, word: &str) -> (f64, f64) {
        self.senses(word)
            .iter()
            .fold((0.0, 0.0), |(p, n), &(sp, sn)| (p.max(sp), n.max(sn)))
    }
}

/// Parses SentiWordNet 3.0 TSV text:
/// `POS\tID\tPosScore\tNegScore\tSynsetTerms\tGloss`, `#` starts a comment.
pub fn parse_sentiwordnet(text: &str, source_name: &str) -> Result<SentiLexicon> {
    let mut lexicon = SentiLexicon::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected at least 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let score = |s: &str, what: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(source_name, lineno, format!("bad {what} {s:?}")))
        };
        let pos = score(fields[2], "PosScore")?;
        let neg = score(fields[3], "NegScore")?;
        for term in fields[4].split_whitespace() {
            let word = term.rsplit_once('#').map_or(term, |(w, _)| w).to_lowercase();
            lexicon
                .insert_sense(&word, pos, neg)
                .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        }
    }
    Ok(lexicon)
}

pub fn load_sentiwordnet(path: &Path) -> Result<SentiLexicon> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sentiwordnet(&text, &path.display().to_string())
}

/// Joint representation of one k-gram.
#[derive(Debug, Clone, PartialEq)]
pub struct KGramRepr<T> {
    /// Concatenated word vectors, length `d * k`.
    pub w2v: Vec<T>,
    /// Concatenated `(pos, neg)` pairs, length `2 * k`.
    pub senti: Vec<T>,
}

impl<T: Scalar> KGramRepr<T> {
    pub fn width(&self) -> usize {
        self.senti.len() / 2
    }
}

pub fn kgram_repr<T: Scalar, S: AsRef<str>>(
    words: &[S],
    table: &WordEmbeddingTable<T>,
    lexicon: &SentiLexicon,
) -> KGramRepr<T> {
    let d = table.dim();
    let mut w2v = vec![T::zero(); d * words.len()];
    let mut senti = Vec::with_capacity(2 * words.len());
    for (word, slot) in words.iter().zip(w2v.chunks_exact_mut(d.max(1))) {
        let word = word.as_ref();
        table.write_vector(word, slot);
        let (p, n) = lexicon.senti_score(word);
        senti.push(T::of(p));
        senti.push(T::of(n));
    }
    KGramRepr { w2v, senti }
}
