//! Sentiment-polarized k-gram clustering and filter coherence scoring.
//!
//! Clustering runs Lloyd's algorithm on the concatenation
//! `[sqrt(h1) * w2v, sqrt(h2) * senti]`, i.e. weighted squared Euclidean
//! distance. Coherence uses the unsquared weighted distance
//! `h1 * |a.w2v - b.w2v| + h2 * |a.senti - b.senti|`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::KGramRepr;
use crate::error::{Error, Result};
use crate::scalar::{dot, euclidean, norm, Scalar};
use crate::select::{KGramPool, WidthPool};

pub const DEFAULT_CLUSTERS_PER_WIDTH: usize = 100;
pub const DEFAULT_W2V_WEIGHT: f64 = 1.0;
pub const DEFAULT_SENTI_WEIGHT: f64 = 10.0;
/// Number of best-matching k-grams a filter's coherence is measured on.
pub const COHERENCE_TOP_N: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub n_clusters_per_width: usize,
    /// Weight of the Word2Vec block (`h1`).
    pub w2v_weight: f64,
    /// Weight of the SentiWordNet block (`h2`).
    pub senti_weight: f64,
    pub max_iters: usize,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub n_init: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_clusters_per_width: DEFAULT_CLUSTERS_PER_WIDTH,
            w2v_weight: DEFAULT_W2V_WEIGHT,
            senti_weight: DEFAULT_SENTI_WEIGHT,
            max_iters: 100,
            n_init: 3,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let (h1, h2) = (self.w2v_weight, self.senti_weight);
        if !(h1 >= 0.0 && h2 >= 0.0 && h1 + h2 > 0.0) {
            return Err(Error::Config(format!(
                "distance weights must be non-negative with a positive sum, got h1={h1} h2={h2}"
            )));
        }
        if self.n_clusters_per_width == 0 {
            return Err(Error::Config("need at least one cluster per width".into()));
        }
        if self.n_init == 0 {
            return Err(Error::Config("need at least one k-means restart".into()));
        }
        Ok(())
    }
}

/// `h1 * |a.w2v - b.w2v| + h2 * |a.senti - b.senti|`.
pub fn weighted_distance<T: Scalar>(a: &KGramRepr<T>, b: &KGramRepr<T>, h1: T, h2: T) -> Result<T> {
    if a.w2v.len() != b.w2v.len() || a.senti.len() != b.senti.len() {
        return Err(Error::Mismatch(format!(
            "k-gram widths differ ({} vs {})",
            a.width(),
            b.width()
        )));
    }
    Ok(h1 * euclidean(&a.w2v, &b.w2v) + h2 * euclidean(&a.senti, &b.senti))
}

/// Point in the scaled joint space.
pub fn scaled_point<T: Scalar>(r: &KGramRepr<T>, h1: T, h2: T) -> Vec<T> {
    let (s1, s2) = (h1.sqrt(), h2.sqrt());
    r.w2v
        .iter()
        .map(|&x| x * s1)
        .chain(r.senti.iter().map(|&x| x * s2))
        .collect()
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Nearest centroid, lowest index on ties.
fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Sum of squared distances of each point to its assigned centroid.
pub fn kmeans_objective<T: Scalar>(points: &[Vec<T>], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .fold(T::zero(), |a, b| a + b)
}

/// Result of k-means on plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Objective after each Lloyd iteration of the winning restart.
    pub history: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> KMeansResult<T> {
    pub fn objective(&self) -> T {
        self.history.last().copied().unwrap_or_else(T::infinity)
    }
}

fn kmeans_plus_plus<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<T> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let next = if total > T::zero() {
            let mut target = T::of(rng.random::<f64>()) * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (di, p) in d2.iter_mut().zip(points) {
            let d = sq_dist(p, c);
            if d < *di {
                *di = d;
            }
        }
    }
    centroids
}

fn update_centroids<T: Scalar>(points: &[Vec<T>], assignments: &[usize], k: usize) -> (Vec<Vec<T>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    // Fixed point order keeps the reduction reproducible.
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            let inv = T::one() / T::of(c as f64);
            s.iter_mut().for_each(|x| *x *= inv);
        }
    }
    (sums, counts)
}

/// Gives every empty cluster the member of the currently largest cluster that
/// lies farthest from its centroid.
fn repair_empty<T: Scalar>(points: &[Vec<T>], assignments: &mut [usize], k: usize) -> Vec<Vec<T>> {
    loop {
        let (mut centroids, counts) = update_centroids(points, assignments, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centroids;
        };
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        let mut far = (usize::MAX, -T::one());
        for (i, p) in points.iter().enumerate() {
            if assignments[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        assignments[far.0] = empty;
        centroids[empty] = points[far.0].clone();
    }
}

fn lloyd<T: Scalar>(points: &[Vec<T>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> KMeansResult<T> {
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = repair_empty(points, &mut assignments, k);
        history.push(kmeans_objective(points, &assignments, &centroids));
        iterations += 1;
    }
    KMeansResult {
        assignments,
        centroids,
        history,
        iterations,
    }
}

/// Seeded k-means++ / Lloyd clustering of `points` into `k` non-empty
/// clusters, keeping the best of `n_init` restarts.
pub fn kmeans_points<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    max_iters: usize,
    n_init: usize,
    seed: u64,
) -> Result<KMeansResult<T>> {
    if k == 0 || points.len() < k {
        return Err(Error::Validation(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..n_init.max(1) {
        let run = lloyd(points, k, max_iters, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthClustering<T> {
    pub width: usize,
    /// Cluster of each pool k-gram, indexed like the pool.
    pub assignments: Vec<usize>,
    /// Member pool indices per cluster, ascending.
    pub members: Vec<Vec<usize>>,
    /// Centroids in the scaled joint space.
    pub centroids: Vec<Vec<T>>,
    pub history: Vec<T>,
}

/// Clusters one width of the pool.
pub fn kmeans<T: Scalar>(pool: &WidthPool<T>, config: &ClusterConfig) -> Result<WidthClustering<T>> {
    config.validate()?;
    let k = config.n_clusters_per_width;
    if pool.len() < k {
        return Err(Error::Validation(format!(
            "width {} has {} k-grams, fewer than the {k} clusters requested",
            pool.width,
            pool.len()
        )));
    }
    let (h1, h2) = (T::of(config.w2v_weight), T::of(config.senti_weight));
    let points: Vec<Vec<T>> = pool.reprs.iter().map(|r| scaled_point(r, h1, h2)).collect();
    let seed = config.seed ^ (pool.width as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let result = kmeans_points(&points, k, config.max_iters, config.n_init, seed)?;
    let mut members = vec![Vec::new(); k];
    for (i, &a) in result.assignments.iter().enumerate() {
        members[a].push(i);
    }
    Ok(WidthClustering {
        width: pool.width,
        assignments: result.assignments,
        members,
        centroids: result.centroids,
        history: result.history,
    })
}

/// Member k-grams of every cluster: width → cluster → member token lists.
pub type ClusterMembership = BTreeMap<usize, Vec<Vec<Vec<String>>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    pub widths: BTreeMap<usize, WidthClustering<T>>,
}

impl<T: Scalar> Clustering<T> {
    pub fn build(pool: &KGramPool<T>, config: &ClusterConfig) -> Result<Self> {
        let mut widths = BTreeMap::new();
        for (&k, wp) in &pool.widths {
            widths.insert(k, kmeans(wp, config)?);
        }
        Ok(Clustering { widths })
    }

    pub fn membership(&self, pool: &KGramPool<T>) -> ClusterMembership {
        self.widths
            .iter()
            .map(|(&k, wc)| {
                let wp = &pool.widths[&k];
                let clusters = wc
                    .members
                    .iter()
                    .map(|m| m.iter().map(|&i| wp.kgrams[i].words.clone()).collect())
                    .collect();
                (k, clusters)
            })
            .collect()
    }
}

/// One line per k-gram: `<width> <cluster_index> <tokens...>`.
pub fn membership_text(membership: &ClusterMembership) -> String {
    let mut out = String::new();
    for (k, clusters) in membership {
        for (j, members) in clusters.iter().enumerate() {
            for words in members {
                writeln!(out, "{k} {j} {}", words.join(" ")).unwrap();
            }
        }
    }
    out
}

pub fn parse_membership(text: &str) -> Result<ClusterMembership> {
    let mut out = ClusterMembership::new();
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::parse("clustering", idx + 1, m);
        let width: usize = fields[0].parse().map_err(|_| bad("bad width"))?;
        let cluster: usize = fields
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad cluster index"))?;
        let words: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
        if words.len() != width {
            return Err(bad(&format!("expected {width} tokens, found {}", words.len())));
        }
        let clusters = out.entry(width).or_default();
        if clusters.len() <= cluster {
            clusters.resize(cluster + 1, Vec::new());
        }
        clusters[cluster].push(words);
    }
    for (k, clusters) in &out {
        if let Some(j) = clusters.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("width {k} cluster {j} has no members")));
        }
    }
    Ok(out)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot(a, b) / (na * nb)
}

/// Pool indices ranked by cosine similarity between `kernel` and each
/// k-gram's Word2Vec block, best first; ties go to the lexicographically
/// smaller k-gram.
pub fn top_matching_kgrams<T: Scalar>(kernel: &[T], pool: &WidthPool<T>, top_n: usize) -> Vec<(usize, T)> {
    let mut scored: Vec<(usize, T)> = pool
        .reprs
        .iter()
        .enumerate()
        .map(|(i, r)| (i, cosine(kernel, &r.w2v)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| pool.kgrams[a.0].words.cmp(&pool.kgrams[b.0].words))
    });
    scored.truncate(top_n);
    scored
}

/// Mean weighted distance over all unordered pairs of `reprs`.
pub fn mean_pairwise_distance<T: Scalar>(reprs: &[&KGramRepr<T>], h1: T, h2: T) -> Result<T> {
    let mut total = T::zero();
    let mut pairs = 0usize;
    for i in 0..reprs.len() {
        for j in i + 1..reprs.len() {
            total += weighted_distance(reprs[i], reprs[j], h1, h2)?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Ok(T::zero());
    }
    Ok(total / T::of(pairs as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoherence<T> {
    pub filter_id: usize,
    pub width: usize,
    /// Mean pairwise weighted distance of the top k-grams.
    pub g: T,
    /// `1 - g / max g` over the report.
    pub s: T,
    /// `(k-gram text, cosine)` best first.
    pub top_kgrams: Vec<(String, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport<T> {
    pub filters: Vec<FilterCoherence<T>>,
}

impl<T: Scalar> CoherenceReport<T> {
    pub fn scores(&self) -> Vec<T> {
        self.filters.iter().map(|f| f.s).collect()
    }

    /// CSV `filter_id,width,G,S`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter_id,width,G,S\n");
        for f in &self.filters {
            writeln!(out, "{},{},{},{}", f.filter_id, f.width, f.g, f.s).unwrap();
        }
        out
    }

    /// CSV `filter_id,width,rank,similarity,kgram` with the first `n` matches
    /// per filter.
    pub fn top_kgrams_csv(&self, n: usize) -> String {
        let mut out = String::from("filter_id,width,rank,similarity,kgram\n");
        for f in &self.filters {
            for (rank, (text, sim)) in f.top_kgrams.iter().take(n).enumerate() {
                writeln!(out, "{},{},{},{},\"{}\"", f.filter_id, f.width, rank + 1, sim, text.replace('"', "\"\"")).unwrap();
            }
        }
        out
    }
}

/// Converts raw mean distances into scores `1 - g / max g`; every score is
/// 1 when all distances are zero.
pub fn normalize_coherence<T: Scalar>(g: &[T]) -> Vec<T> {
    let max = g.iter().copied().fold(T::zero(), T::max);
    if max <= T::zero() {
        return vec![T::one(); g.len()];
    }
    g.iter()
        .map(|&x| (T::one() - x / max).max(T::zero()).min(T::one()))
        .collect()
}

/// Coherence of each `(width, kernel vector)` filter against the pool
/// k-grams of matching width.
pub fn coherence_scores<T: Scalar>(
    kernels: &[(usize, Vec<T>)],
    pool: &KGramPool<T>,
    h1: T,
    h2: T,
    top_n: usize,
) -> Result<CoherenceReport<T>> {
    let mut raw = Vec::with_capacity(kernels.len());
    for (filter_id, (width, v)) in kernels.iter().enumerate() {
        let wp = pool
            .width(*width)
            .ok_or_else(|| Error::Mismatch(format!("pool has no k-grams of width {width}")))?;
        if wp.len() < 2 {
            return Err(Error::Validation(format!(
                "coherence needs at least 2 k-grams of width {width}, pool has {}",
                wp.len()
            )));
        }
        if v.len() != wp.reprs[0].w2v.len() {
            return Err(Error::Mismatch(format!(
                "filter {filter_id} has length {} but width-{width} k-grams have {}",
                v.len(),
                wp.reprs[0].w2v.len()
            )));
        }
        let top = top_matching_kgrams(v, wp, top_n);
        let reprs: Vec<&KGramRepr<T>> = top.iter().map(|&(i, _)| &wp.reprs[i]).collect();
        let g = mean_pairwise_distance(&reprs, h1, h2)?;
        let top_kgrams = top.iter().map(|&(i, s)| (wp.kgrams[i].text(), s)).collect();
        raw.push(FilterCoherence {
            filter_id,
            width: *width,
            g,
            s: T::zero(),
            top_kgrams,
        });
    }
    let gs: Vec<T> = raw.iter().map(|f| f.g).collect();
    for (f, s) in raw.iter_mut().zip(normalize_coherence(&gs)) {
        f.s = s;
    }
    Ok(CoherenceReport { filters: raw })
}
