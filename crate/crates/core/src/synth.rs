//! Small synthetic sentiment corpus with matching embeddings and lexicons,
//! for demos and end-to-end tests without external assets.
//!
//! Every sentence is filler words plus one planted trigram
//! `<intensifier> <polar word> <noun>` whose polar word decides the label.
//! Polar words point along the first coordinate; filler vectors are large and
//! random, and also noisy along that coordinate, so a plain sentence average
//! is unreliable while anything that can focus on the polar word separates
//! the classes.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Sentence, Split};
use crate::embed::{save_word2vec_binary, SentiLexicon, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::select::OpinionLexicon;

pub const POSITIVE: [&str; 5] = ["great", "superb", "lovely", "charming", "brilliant"];
pub const NEGATIVE: [&str; 5] = ["awful", "dull", "boring", "clumsy", "bleak"];
pub const INTENSIFIERS: [&str; 3] = ["very", "truly", "so"];
pub const NOUNS: [&str; 4] = ["film", "movie", "plot", "cast"];
pub const FILLERS: [&str; 13] = [
    "the", "a", "this", "it", "was", "and", "with", "of", "in", "some", "scene", "actor", "story",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub dim: usize,
    /// Filler words per sentence, inclusive range.
    pub fillers: (usize, usize),
    /// Sentences held out for validation and for test.
    pub n_val: usize,
    pub n_test: usize,
    /// Half-width of the uniform range of non-polar word vectors.
    pub filler_scale: f64,
    /// Same, for the polarity coordinate (the first one) only.
    pub filler_polarity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sentences: 200,
            dim: 10,
            fillers: (5, 9),
            n_val: 40,
            n_test: 40,
            filler_scale: 2.0,
            filler_polarity: 0.8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub table: WordEmbeddingTable<f64>,
    pub senti: SentiLexicon,
    pub opinion: OpinionLexicon,
}

/// Paths written by [`SynthCorpus::write_to`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub w2v: PathBuf,
    pub sentiwordnet: PathBuf,
    pub positive: PathBuf,
    pub negative: PathBuf,
}

pub fn vocabulary() -> Vec<&'static str> {
    let mut v = Vec::new();
    v.extend(POSITIVE);
    v.extend(NEGATIVE);
    v.extend(INTENSIFIERS);
    v.extend(NOUNS);
    v.extend(FILLERS);
    v
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.dim < 2 || config.n_val + config.n_test >= config.n_sentences {
        return Err(Error::Config("synthetic corpus needs dim >= 2 and a non-empty training split".into()));
    }
    let (lo, hi) = config.fillers;
    if lo > hi {
        return Err(Error::Config("bad filler range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;

    let mut table = WordEmbeddingTable::new(d);
    let polar = |sign: f64, rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
        v[0] = sign * rng.random_range(1.2..1.8);
        v
    };
    for w in POSITIVE {
        let v = polar(1.0, &mut rng);
        table.insert(w, &v)?;
    }
    for w in NEGATIVE {
        let v = polar(-1.0, &mut rng);
        table.insert(w, &v)?;
    }
    for w in INTENSIFIERS.iter().chain(&NOUNS).chain(&FILLERS) {
        let r = config.filler_scale;
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-r..=r)).collect();
        v[0] *= config.filler_polarity / r;
        table.insert(w, &v)?;
    }

    let mut senti = SentiLexicon::new();
    for w in POSITIVE {
        senti.insert_sense(w, 0.75, 0.0)?;
    }
    for w in NEGATIVE {
        senti.insert_sense(w, 0.0, 0.75)?;
    }
    for w in INTENSIFIERS {
        senti.insert_sense(w, 0.125, 0.0)?;
    }
    let opinion = OpinionLexicon::from_lists(&POSITIVE.join("\n"), &NEGATIVE.join("\n"));

    let others: Vec<&str> = NOUNS.iter().chain(&FILLERS).copied().collect();
    let mut sentences: Vec<Sentence> = (0..config.n_sentences)
        .map(|i| {
            let label = i % 2;
            let polar_words = if label == 1 { &POSITIVE } else { &NEGATIVE };
            let n_fill = rng.random_range(lo..=hi);
            let mut tokens: Vec<String> = (0..n_fill)
                .map(|_| others[rng.random_range(0..others.len())].to_string())
                .collect();
            let at = rng.random_range(0..=n_fill);
            let trigram = [
                INTENSIFIERS[rng.random_range(0..INTENSIFIERS.len())],
                polar_words[rng.random_range(0..polar_words.len())],
                NOUNS[rng.random_range(0..NOUNS.len())],
            ];
            tokens.splice(at..at, trigram.iter().map(|s| s.to_string()));
            Sentence { tokens, label }
        })
        .collect();
    sentences.shuffle(&mut rng);

    let n_train = config.n_sentences - config.n_val - config.n_test;
    let test = sentences.split_off(n_train + config.n_val);
    let val = sentences.split_off(n_train);
    Ok(SynthCorpus {
        train: Dataset::new("synth_train", sentences, 2, Split::Train)?,
        val: Dataset::new("synth_val", val, 2, Split::Validation)?,
        test: Dataset::new("synth_test", test, 2, Split::Test)?,
        table,
        senti,
        opinion,
    })
}

impl SynthCorpus {
    /// SentiWordNet-style TSV covering every scored word.
    pub fn sentiwordnet_text(&self) -> String {
        self.senti.to_sentiwordnet_text()
    }

    /// Writes the splits, embeddings and lexicons into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles> {
        let files = SynthFiles {
            train: dir.join("train.tsv"),
            val: dir.join("val.tsv"),
            test: dir.join("test.tsv"),
            w2v: dir.join("vectors.bin"),
            sentiwordnet: dir.join("sentiwordnet.txt"),
            positive: dir.join("positive-words.txt"),
            negative: dir.join("negative-words.txt"),
        };
        let write = |path: &Path, text: String| std::fs::write(path, text).map_err(|e| Error::io(path, e));
        write(&files.train, self.train.to_tsv())?;
        write(&files.val, self.val.to_tsv())?;
        write(&files.test, self.test.to_tsv())?;
        write(&files.sentiwordnet, self.sentiwordnet_text())?;
        write(&files.positive, POSITIVE.join("\n") + "\n")?;
        write(&files.negative, NEGATIVE.join("\n") + "\n")?;
        save_word2vec_binary(&self.table, &files.w2v)?;
        Ok(files)
    }
}
