//! Dataset ingestion, tokenization, folds and padding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Reserved padding token. The tokenizer lowercases its input, so it can never
/// produce this string.
pub const PAD: &str = "<PAD>";

/// Default cap on sentence length; longer inputs are truncated.
pub const DEFAULT_MAX_LEN: usize = 400;

const SPLIT_CHARS: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '\'', '"'];

/// Lowercases `raw_text`, splits on whitespace and gives each punctuation
/// character in `. , ! ? ; : ( ) ' "` its own token.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in raw_text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut current = String::new();
        for ch in lower.chars() {
            if SPLIT_CHARS.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Appends [`PAD`] up to `target_len`, or truncates to `target_len` when the
/// sequence is longer.
pub fn pad_to_length<S: AsRef<str>>(tokens: &[S], target_len: usize) -> Vec<String> {
    let mut out: Vec<String> = tokens
        .iter()
        .take(target_len)
        .map(|t| t.as_ref().to_owned())
        .collect();
    out.resize(target_len, PAD.to_owned());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `<label>\t<text>` per line.
    LabeledTsv,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled_tsv" => Ok(DatasetFormat::LabeledTsv),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub sentences: Vec<Sentence>,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        sentences: Vec<Sentence>,
        n_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Validation("dataset needs at least one class".into()));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.label >= n_classes {
                return Err(Error::Validation(format!(
                    "sentence {i} has label {} but the dataset has {n_classes} classes",
                    s.label
                )));
            }
            if s.tokens.is_empty() {
                return Err(Error::Validation(format!("sentence {i} has no tokens")));
            }
        }
        Ok(Dataset {
            name: name.into(),
            sentences,
            n_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Copies the sentences at `indices` into a new dataset with the given split.
    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        Dataset {
            name: self.name.clone(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            n_classes: self.n_classes,
            split,
        }
    }

    /// Word counts over all sentences, most frequent first, ties
    /// lexicographic. [`PAD`] is never counted.
    pub fn vocabulary(&self) -> Vec<(String, usize)> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &self.sentences {
            for t in &s.tokens {
                if t != PAD {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut out: Vec<(String, usize)> =
            counts.into_iter().map(|(w, c)| (w.to_owned(), c)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Fraction of the most common label.
    /// `<label>\t<space-joined tokens>` lines, readable by
    /// [`parse_labeled_tsv`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.label.to_string());
            out.push('\t');
            out.push_str(&s.tokens.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn majority_fraction(&self) -> f64 {
        if self.sentences.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.n_classes];
        for s in &self.sentences {
            counts[s.label] += 1;
        }
        *counts.iter().max().unwrap() as f64 / self.sentences.len() as f64
    }
}

/// Parses `<label>\t<text>` lines. Blank lines are skipped. When `n_classes`
/// is `None` it is inferred as the largest label plus one.
pub fn parse_labeled_tsv(
    text: &str,
    name: &str,
    n_classes: Option<usize>,
    max_len: usize,
    split: Split,
) -> Result<Dataset> {
    let mut sentences = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(name, lineno, "expected `<label>\\t<text>`"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(name, lineno, format!("bad label {label:?}")))?;
        let mut tokens = tokenize(body);
        if tokens.is_empty() {
            return Err(Error::parse(name, lineno, "text has no tokens"));
        }
        tokens.truncate(max_len);
        if let Some(k) = n_classes {
            if label >= k {
                return Err(Error::Validation(format!(
                    "{name}:{lineno}: label {label} is not below the class count {k}"
                )));
            }
        }
        sentences.push(Sentence { tokens, label });
    }
    let n_classes = match n_classes {
        Some(k) => k,
        None => sentences.iter().map(|s| s.label + 1).max().unwrap_or(1),
    };
    Dataset::new(name, sentences, n_classes, split)
}

pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    n_classes: Option<usize>,
    max_len: usize,
    split: Split,
) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        DatasetFormat::LabeledTsv => parse_labeled_tsv(&text, &name, n_classes, max_len, split),
    }
}

/// Reads the optional class-name sidecar: one name per line, line `i` naming
/// label `i`.
pub fn load_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    /// `assignments[i]` is the fold of sentence `i`.
    pub assignments: Vec<usize>,
}

/// Shuffles sentence indices with `seed` and deals them round-robin into
/// `n_folds` folds.
pub fn make_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_folds > dataset.len() {
        return Err(Error::Validation(format!(
            "{n_folds} folds requested for {} sentences",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; dataset.len()];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        seed,
        assignments,
    })
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(training indices, held-out indices)` for `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.assignments.iter().enumerate() {
            writeln!(out, "{i} {f}").unwrap();
        }
        out
    }

    pub fn parse(text: &str, seed: u64) -> Result<FoldPlan> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse("folds", idx + 1, "expected `<index> <fold>`"))
            };
            pairs.push((parse(it.next())?, parse(it.next())?));
        }
        let n = pairs.len();
        let mut assignments = vec![usize::MAX; n];
        for (i, f) in pairs {
            if i >= n || assignments[i] != usize::MAX {
                return Err(Error::Validation(format!("fold plan index {i} repeated or out of range")));
            }
            assignments[i] = f;
        }
        let n_folds = assignments.iter().max().map_or(0, |m| m + 1);
        Ok(FoldPlan {
            n_folds,
            seed,
            assignments,
        })
    }
}

/// Seeded random split of `indices` into `(kept, held_out)` with
/// `round(fraction * len)` held out.
pub fn holdout(indices: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_out = ((indices.len() as f64) * fraction).round() as usize;
    let held = shuffled.split_off(indices.len() - n_out.min(indices.len()));
    let mut kept = shuffled;
    kept.sort_unstable();
    let mut held = held;
    held.sort_unstable();
    (kept, held)
}
