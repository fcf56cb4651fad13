//! Candidate k-gram extraction and shortlisting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Dataset, PAD};
use crate::embed::{kgram_repr, KGramRepr, SentiLexicon, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_WIDTHS: [usize; 3] = [3, 4, 5];
pub const DEFAULT_SAMPLE_BUDGET: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KGram {
    pub words: Vec<String>,
    /// Corpus frequency; 0 for k-grams that only came from an external list.
    pub count: usize,
}

impl KGram {
    pub fn width(&self) -> usize {
        self.words.len()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Unique k-grams per width, each list in canonical order.
pub type KGramSets = BTreeMap<usize, Vec<KGram>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    /// Keep k-grams containing an opinion word.
    OpinionFilter,
    /// Take k-grams from an external list only.
    ExternalList,
    /// Uniform sample of the extracted k-grams.
    Sample,
}

impl std::str::FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opinion_filter" => Ok(Heuristic::OpinionFilter),
            "external_list" => Ok(Heuristic::ExternalList),
            "sample" => Ok(Heuristic::Sample),
            other => Err(Error::Config(format!("unknown selection heuristic {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub widths: Vec<usize>,
    pub heuristic: Heuristic,
    pub sample_budget: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            widths: DEFAULT_WIDTHS.to_vec(),
            heuristic: Heuristic::OpinionFilter,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
            min_count: 1,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_budget == 0 {
            return Err(Error::Config("sample budget must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("bad k-gram widths {:?}", self.widths)));
        }
        Ok(())
    }
}

fn canonical_order(a: &KGram, b: &KGram) -> std::cmp::Ordering {
    b.count.cmp(&a.count).then_with(|| a.words.cmp(&b.words))
}

fn sorted(counts: HashMap<Vec<String>, usize>) -> Vec<KGram> {
    let mut out: Vec<KGram> = counts
        .into_iter()
        .map(|(words, count)| KGram { words, count })
        .collect();
    out.sort_by(canonical_order);
    out
}

/// Counts every sliding window of each width, skipping windows that touch
/// [`PAD`]. Results are sorted by count descending, then lexicographically.
pub fn extract_kgrams(dataset: &Dataset, widths: &[usize]) -> KGramSets {
    let mut out = KGramSets::new();
    for &k in widths {
        if k == 0 {
            continue;
        }
        // Summation of shard maps is associative and commutative; the sort
        // afterwards fixes the order.
        let counts = dataset
            .sentences
            .par_chunks(256)
            .map(|chunk| {
                let mut m: HashMap<Vec<String>, usize> = HashMap::new();
                for s in chunk {
                    for w in s.tokens.windows(k) {
                        if w.iter().any(|t| t == PAD) {
                            continue;
                        }
                        *m.entry(w.to_vec()).or_default() += 1;
                    }
                }
                m
            })
            .reduce(HashMap::new, |mut a, b| {
                for (key, c) in b {
                    *a.entry(key).or_default() += c;
                }
                a
            });
        out.insert(k, sorted(counts));
    }
    out
}

pub fn drop_rare(kgrams: &[KGram], min_count: usize) -> Vec<KGram> {
    kgrams
        .iter()
        .filter(|g| g.count >= min_count)
        .cloned()
        .collect()
}

/// Hu–Liu style positive/negative word lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpinionLexicon {
    pub positive_words: HashSet<String>,
    pub negative_words: HashSet<String>,
}

fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_lowercase)
        .collect()
}

impl OpinionLexicon {
    pub fn from_lists(positive: &str, negative: &str) -> Self {
        let lex = OpinionLexicon {
            positive_words: parse_word_list(positive),
            negative_words: parse_word_list(negative),
        };
        let both = lex.positive_words.intersection(&lex.negative_words).count();
        if both > 0 {
            warn!("opinion lexicon: {both} words are listed as both positive and negative");
        }
        lex
    }

    pub fn load(positive: &Path, negative: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Ok(Self::from_lists(&read(positive)?, &read(negative)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.positive_words.contains(word) || self.negative_words.contains(word)
    }
}

/// Keeps a k-gram iff at least one of its words is an opinion word.
pub fn filter_by_opinion_lexicon(kgrams: &[KGram], lexicon: &OpinionLexicon) -> Vec<KGram> {
    kgrams
        .iter()
        .filter(|g| g.words.iter().any(|w| lexicon.contains(w)))
        .cloned()
        .collect()
}

/// Uniform sample of `budget` k-grams without replacement; the input order is
/// preserved among the survivors.
pub fn sample_kgrams(kgrams: &[KGram], budget: usize, seed: u64) -> Vec<KGram> {
    if budget >= kgrams.len() {
        return kgrams.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, kgrams.len(), budget).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| kgrams[i].clone()).collect()
}

/// Parses an external k-gram list (one space-separated k-gram per line).
/// Lines whose width is not in `widths` are skipped and counted.
pub fn parse_kgram_list(text: &str, widths: &[usize]) -> (KGramSets, usize) {
    let mut sets: BTreeMap<usize, Vec<Vec<String>>> = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut skipped = 0;
    for line in text.lines() {
        let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            continue;
        }
        if !widths.contains(&words.len()) || words.iter().any(|w| w == PAD) {
            skipped += 1;
            continue;
        }
        if seen.insert(words.clone()) {
            sets.entry(words.len()).or_default().push(words);
        }
    }
    let sets = sets
        .into_iter()
        .map(|(k, list)| {
            let list = list
                .into_iter()
                .map(|words| KGram { words, count: 0 })
                .collect();
            (k, list)
        })
        .collect();
    (sets, skipped)
}

/// Adds every k-gram of `external` that `base` does not already hold.
pub fn union_kgrams(base: &mut KGramSets, external: KGramSets) {
    for (k, list) in external {
        let entry = base.entry(k).or_default();
        let present: HashSet<Vec<String>> = entry.iter().map(|g| g.words.clone()).collect();
        entry.extend(list.into_iter().filter(|g| !present.contains(&g.words)));
        entry.sort_by(canonical_order);
    }
}

/// Merges the k-gram list at `path` into `kgrams`. Returns the number of
/// lines skipped for having an unconfigured width.
pub fn merge_external_kgrams(kgrams: &mut KGramSets, path: &Path, widths: &[usize]) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (external, skipped) = parse_kgram_list(&text, widths);
    if skipped > 0 {
        warn!(
            "{}: skipped {skipped} k-grams with widths outside {widths:?}",
            path.display()
        );
    }
    union_kgrams(kgrams, external);
    Ok(skipped)
}

pub fn kgram_list_text(kgrams: &KGramSets) -> String {
    let mut out = String::new();
    for list in kgrams.values() {
        for g in list {
            writeln!(out, "{}", g.text()).unwrap();
        }
    }
    out
}

/// Runs the configured shortlist heuristic, then merges `external` when it is
/// given and the heuristic is not already the external list.
pub fn select_kgrams(
    dataset: &Dataset,
    config: &SelectionConfig,
    opinion: Option<&OpinionLexicon>,
    external: Option<&Path>,
) -> Result<KGramSets> {
    config.validate()?;
    let mut sets = match config.heuristic {
        Heuristic::ExternalList => KGramSets::new(),
        heuristic => {
            let mut extracted = extract_kgrams(dataset, &config.widths);
            for (k, list) in extracted.iter_mut() {
                let kept = drop_rare(list, config.min_count);
                *list = match heuristic {
                    Heuristic::OpinionFilter => {
                        let lex = opinion.ok_or_else(|| {
                            Error::Config("opinion_filter needs an opinion lexicon".into())
                        })?;
                        filter_by_opinion_lexicon(&kept, lex)
                    }
                    _ => sample_kgrams(&kept, config.sample_budget, config.seed ^ *k as u64),
                };
            }
            extracted
        }
    };
    match (config.heuristic, external) {
        (Heuristic::ExternalList, None) => {
            return Err(Error::Config("external_list needs a k-gram list file".into()))
        }
        (_, Some(path)) => {
            merge_external_kgrams(&mut sets, path, &config.widths)?;
        }
        _ => {}
    }
    for &k in &config.widths {
        sets.entry(k).or_default();
    }
    Ok(sets)
}

/// Selected k-grams of one width with their joint representations.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthPool<T> {
    pub width: usize,
    pub kgrams: Vec<KGram>,
    pub reprs: Vec<KGramRepr<T>>,
}

impl<T: Scalar> WidthPool<T> {
    pub fn len(&self) -> usize {
        self.kgrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kgrams.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KGramPool<T> {
    pub dim: usize,
    pub widths: BTreeMap<usize, WidthPool<T>>,
}

impl<T: Scalar> KGramPool<T> {
    pub fn build(sets: &KGramSets, table: &WordEmbeddingTable<T>, lexicon: &SentiLexicon) -> Self {
        let widths = sets
            .iter()
            .map(|(&k, list)| {
                let reprs = list
                    .iter()
                    .map(|g| kgram_repr(&g.words, table, lexicon))
                    .collect();
                (
                    k,
                    WidthPool {
                        width: k,
                        kgrams: list.clone(),
                        reprs,
                    },
                )
            })
            .collect();
        KGramPool {
            dim: table.dim(),
            widths,
        }
    }

    pub fn width(&self, k: usize) -> Option<&WidthPool<T>> {
        self.widths.get(&k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Split};
    use proptest::prelude::*;

    fn ds(sentences: &[&[&str]]) -> Dataset {
        Dataset::new(
            "t",
            sentences
                .iter()
                .map(|s| Sentence {
                    tokens: s.iter().map(|t| t.to_string()).collect(),
                    label: 0,
                })
                .collect(),
            1,
            Split::Train,
        )
        .unwrap()
    }

    fn kg(words: &[&str], count: usize) -> KGram {
        KGram {
            words: words.iter().map(|w| w.to_string()).collect(),
            count,
        }
    }

    fn lexicon() -> OpinionLexicon {
        OpinionLexicon::from_lists(";comment\nliked\ngood\n", "; c\nbad\n")
    }

    #[test]
    fn single_window() {
        let sets = extract_kgrams(&ds(&[&["a", "b", "c"]]), &[3]);
        assert_eq!(sets[&3], vec![kg(&["a", "b", "c"], 1)]);
    }

    #[test]
    fn hand_count() {
        let sets = extract_kgrams(&ds(&[&["a", "b", "a", "b"]]), &[2]);
        assert_eq!(sets[&2], vec![kg(&["a", "b"], 2), kg(&["b", "a"], 1)]);
    }

    #[test]
    fn skips_pad_and_short() {
        let sets = extract_kgrams(&ds(&[&["a", "b", PAD], &["x"]]), &[2, 3]);
        assert_eq!(sets[&2], vec![kg(&["a", "b"], 1)]);
        assert!(sets[&3].is_empty());
    }

    #[test]
    fn opinion_filter() {
        let lex = lexicon();
        let input = vec![kg(&["liked", "this", "film"], 1), kg(&["the", "of", "a"], 4)];
        assert_eq!(
            filter_by_opinion_lexicon(&input, &lex),
            vec![kg(&["liked", "this", "film"], 1)]
        );
        assert!(lex.negative_words.contains("bad"));
        assert!(!lex.positive_words.contains(";comment"));
    }

    #[test]
    fn sample_examples() {
        let pool: Vec<KGram> = (0..10).map(|i| kg(&[&format!("w{i}")], 1)).collect();
        assert_eq!(sample_kgrams(&pool, 10, 1), pool);
        assert_eq!(sample_kgrams(&pool, 30, 1), pool);
        let a = sample_kgrams(&pool, 3, 42);
        assert_eq!(a.len(), 3);
        assert_eq!(a, sample_kgrams(&pool, 3, 42));
    }

    #[test]
    fn sample_is_uniform() {
        let pool: Vec<KGram> = (0..10).map(|i| kg(&[&format!("w{i:02}")], 1)).collect();
        let mut hits = HashMap::new();
        for seed in 0..1000u64 {
            for g in sample_kgrams(&pool, 3, seed) {
                *hits.entry(g.words[0].clone()).or_insert(0usize) += 1;
            }
        }
        for g in &pool {
            let f = hits[&g.words[0]] as f64 / 1000.0;
            assert!((f - 0.3).abs() <= 0.05, "{} selected with frequency {f}", g.words[0]);
        }
    }

    #[test]
    fn external_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.txt");
        std::fs::write(&path, "x y z\nx y\na b c\nx y z\n").unwrap();
        let mut base = KGramSets::new();
        base.insert(3, vec![kg(&["a", "b", "c"], 2)]);
        let skipped = merge_external_kgrams(&mut base, &path, &[3, 4, 5]).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(base[&3], vec![kg(&["a", "b", "c"], 2), kg(&["x", "y", "z"], 0)]);
        assert!(merge_external_kgrams(&mut base, &dir.path().join("missing"), &[3]).is_err());
    }

    #[test]
    fn select_modes() {
        let d = ds(&[&["i", "liked", "this", "film", "a", "lot"], &["the", "of", "a", "b"]]);
        let lex = lexicon();
        let mut cfg = SelectionConfig {
            widths: vec![3],
            ..Default::default()
        };
        let sets = select_kgrams(&d, &cfg, Some(&lex), None).unwrap();
        assert_eq!(sets[&3].len(), 2);
        assert!(select_kgrams(&d, &cfg, None, None).is_err());
        cfg.heuristic = Heuristic::Sample;
        cfg.sample_budget = 1;
        assert_eq!(select_kgrams(&d, &cfg, None, None).unwrap()[&3].len(), 1);
        cfg.heuristic = Heuristic::ExternalList;
        assert!(select_kgrams(&d, &cfg, None, None).is_err());
    }

    #[test]
    fn pool_repr_lengths() {
        let mut table = WordEmbeddingTable::<f64>::new(4);
        table.insert("a", &[1.0; 4]).unwrap();
        let sets = extract_kgrams(&ds(&[&["a", "b", "c", "a", "b"]]), &[2, 3]);
        let pool = KGramPool::build(&sets, &table, &SentiLexicon::new());
        for (k, wp) in &pool.widths {
            for r in &wp.reprs {
                assert_eq!(r.w2v.len(), 4 * k);
                assert_eq!(r.senti.len(), 2 * k);
            }
        }
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_subset(words in proptest::collection::vec("[a-e]|good|bad", 3..30)) {
            let d = ds(&[&words.iter().map(String::as_str).collect::<Vec<_>>()]);
            let sets = extract_kgrams(&d, &[3]);
            let lex = lexicon();
            let once = filter_by_opinion_lexicon(&sets[&3], &lex);
            let twice = filter_by_opinion_lexicon(&once, &lex);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|g| sets[&3].contains(g)));
        }

        #[test]
        fn pipeline_deterministic(words in proptest::collection::vec("[a-f]", 3..60), seed in any::<u64>()) {
            let d = ds(&[&words.iter().map(String::as_str).collect::<Vec<_>>()]);
            let cfg = SelectionConfig { widths: vec![3, 4], heuristic: Heuristic::Sample, sample_budget: 5, min_count: 1, seed };
            prop_assert_eq!(select_kgrams(&d, &cfg, None, None).unwrap(), select_kgrams(&d, &cfg, None, None).unwrap());
        }
    }
}
