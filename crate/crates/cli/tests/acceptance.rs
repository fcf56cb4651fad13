//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Library properties are checked against small independent oracles; the
//! desk-scale pipeline, transfer and determinism criteria drive the built
//! `cohkern` binary on a generated corpus.
//!
//! Run with `cargo test -p cohkern-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cohkern::cluster::{coherence_scores, kmeans_objective, kmeans_points, ClusterMembership, COHERENCE_TOP_N};
use cohkern::embed::{load_sentiwordnet, read_word2vec_binary, write_word2vec_binary, KGramRepr, WordEmbeddingTable};
use cohkern::explain::{normalize_intensity, render_html, ExplanationDoc, WeightMode};
use cohkern::model::{feature_map, init_model, softmax, Checkpoint, EncodedSentence, KernelBank, Model, ModelConfig, ModelKind};
use cohkern::select::{KGram, KGramPool, WidthPool};
use cohkern::train::{add_l1_subgradient, objective, transfer_model, TransferMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

// ---------------------------------------------------------------- 1

fn gradient_oracle() -> Outcome {
    const H: f64 = 1e-4;
    const LAMBDA: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut table = WordEmbeddingTable::new(4);
    for w in ["a", "b", "c", "d", "e"] {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        table.insert(w, &v).map_err(|e| e.to_string())?;
    }
    let mut m = ClusterMembership::new();
    m.insert(
        2,
        vec![
            vec![words(&["a", "b"]), words(&["b", "c"])],
            vec![words(&["c", "d"]), words(&["d", "e"]), words(&["e", "a"])],
            vec![words(&["a", "e"]), words(&["b", "d"])],
        ],
    );
    let mut bank = KernelBank::from_membership(&m, &table, false).map_err(|e| e.to_string())?;
    bank.add_free(&[2], 3, 9);
    for k in &mut bank.kernels {
        for v in k.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut model = Model::with_bank(ModelKind::WkaFf, bank, 2, true);
    for w in model.classifier.w.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    for b in model.classifier.bias.as_mut().unwrap() {
        *b = rng.random_range(-0.5..0.5);
    }
    let batch = vec![model.encode(&["a", "c", "b", "e", "d"], 1, &table)];

    let composed = model.compose().map_err(|e| e.to_string())?;
    let refs: Vec<&EncodedSentence<f64>> = batch.iter().collect();
    let (_, mut g) = model.batch_gradient(&composed, &refs, None, None).map_err(|e| e.to_string())?;
    add_l1_subgradient(&model, &mut g, LAMBDA);
    let trainable = model.trainable();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (t, grad) in g.tensors.iter().enumerate() {
        if !trainable[t] {
            continue;
        }
        for (i, &a) in grad.iter().enumerate() {
            let at = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[t][i] += delta;
                objective(&m, &batch, LAMBDA).unwrap()
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst < 1e-4, "worst relative error {worst:.3e}");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}, {secs:.2} s"))
}

// ---------------------------------------------------------------- 2

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..8);
        let k = rng.random_range(1..5);
        let n = rng.random_range(k..k + 12);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let v: Vec<f64> = (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = feature_map(&v, &x.concat(), d).map_err(|e| e.to_string())?;
        ensure!(got.len() == n - k + 1, "length {} for n={n} k={k}", got.len());
        for i in 0..=n - k {
            let mut s = 0.0;
            for r in 0..k {
                for c in 0..d {
                    s += v[r * d + c] * x[i + r][c];
                }
            }
            worst = worst.max((got[i] - s.max(0.0)).abs());
        }
    }
    ensure!(worst <= 1e-12, "max abs difference {worst:.3e}");
    Ok(format!("100 instances, max abs difference {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn softmax_objective() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..10);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = softmax(&s);
        ensure!(p.iter().all(|&x| (0.0..=1.0).contains(&x)), "probability out of range");
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst <= 1e-12, "probability sum off by {worst:.3e}");

    let mut table = WordEmbeddingTable::new(3);
    table.insert("x", &[1.0, -2.0, 0.5]).map_err(|e| e.to_string())?;
    let mut model = Model::simple_avg(3, 2, true);
    model.classifier.w.iter_mut().for_each(|w| *w = 0.0);
    model.classifier.bias.as_mut().unwrap().iter_mut().for_each(|b| *b = 0.0);
    let batch = vec![model.encode(&["x"], 0, &table), model.encode(&["x", "x"], 1, &table)];
    let j = objective(&model, &batch, 0.0).map_err(|e| e.to_string())?;
    let err = (j - std::f64::consts::LN_2).abs();
    ensure!(err <= 1e-12, "uniform objective {j} vs ln 2");
    Ok(format!("sum error {worst:.1e}, uniform objective - ln 2 = {err:.1e}"))
}

// ---------------------------------------------------------------- 4

/// Lloyd from random distinct seeds, best of many restarts.
fn brute_force_kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let idx = rand::seq::index::sample(&mut rng, points.len(), k);
        let mut centroids: Vec<Vec<f64>> = idx.iter().map(|i| points[i].clone()).collect();
        for _ in 0..200 {
            let assign: Vec<usize> = points
                .iter()
                .map(|p| {
                    (0..k)
                        .min_by(|&a, &b| sq(p, &centroids[a]).total_cmp(&sq(p, &centroids[b])))
                        .unwrap()
                })
                .collect();
            let mut next = centroids.clone();
            for (c, slot) in next.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> =
                    points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for (j, s) in slot.iter_mut().enumerate() {
                        *s = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            if next == centroids {
                break;
            }
            centroids = next;
        }
        let obj: f64 = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq(p, c)).fold(f64::INFINITY, f64::min))
            .sum();
        best = best.min(obj);
    }
    best
}

fn kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for t in 0..50 {
        let n = rng.random_range(10..60);
        let dim = rng.random_range(1..6);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let k = rng.random_range(1..8);
        let r = kmeans_points(&points, k, 100, 1, t).map_err(|e| e.to_string())?;
        for w in r.history.windows(2) {
            ensure!(w[1] <= w[0] * (1.0 + 1e-12), "instance {t}: objective rose {} -> {}", w[0], w[1]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let points: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let mut worst = 0.0f64;
    for k in [2, 3, 4] {
        let ours = kmeans_points(&points, k, 100, 3, 7).map_err(|e| e.to_string())?;
        let obj = kmeans_objective(&points, &ours.assignments, &ours.centroids);
        let oracle = brute_force_kmeans(&points, k, 500, 99);
        worst = worst.max(obj / oracle - 1.0);
        ensure!(obj <= oracle * 1.05, "k={k}: {obj} vs oracle {oracle}");
        ensure!(kmeans_points(&points, k, 100, 3, 7).unwrap() == ours, "k={k}: not deterministic");
    }
    Ok(format!("50 monotone runs, worst gap to oracle {:.2}%", worst * 100.0))
}

// ---------------------------------------------------------------- 5

fn pool_from(width: usize, reprs: Vec<KGramRepr<f64>>) -> KGramPool<f64> {
    let dim = reprs[0].w2v.len() / width;
    let kgrams = (0..reprs.len())
        .map(|i| KGram {
            words: (0..width).map(|j| format!("g{i:03}w{j}")).collect(),
            count: 1,
        })
        .collect();
    let mut widths = BTreeMap::new();
    widths.insert(width, WidthPool { width, kgrams, reprs });
    KGramPool { dim, widths }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (sq(a, &vec![0.0; a.len()]).sqrt() * sq(b, &vec![0.0; b.len()]).sqrt())
}

fn reference_coherence(kernels: &[Vec<f64>], reprs: &[KGramRepr<f64>], top: usize, h1: f64, h2: f64) -> Vec<f64> {
    let g: Vec<f64> = kernels
        .iter()
        .map(|v| {
            let mut order: Vec<usize> = (0..reprs.len()).collect();
            order.sort_by(|&a, &b| cos(v, &reprs[b].w2v).total_cmp(&cos(v, &reprs[a].w2v)));
            order.truncate(top);
            let (mut sum, mut n) = (0.0, 0);
            for (i, &a) in order.iter().enumerate() {
                for &b in &order[i + 1..] {
                    sum += h1 * sq(&reprs[a].w2v, &reprs[b].w2v).sqrt() + h2 * sq(&reprs[a].senti, &reprs[b].senti).sqrt();
                    n += 1;
                }
            }
            sum / n as f64
        })
        .collect();
    let max = g.iter().cloned().fold(0.0, f64::max);
    g.iter().map(|x| 1.0 - x / max).collect()
}

fn coherence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (width, d) = (2, 3);
    let reprs: Vec<KGramRepr<f64>> = (0..10)
        .map(|_| KGramRepr {
            w2v: (0..width * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            senti: (0..2 * width).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let pool = pool_from(width, reprs.clone());
    let kernels: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..width * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let tagged: Vec<(usize, Vec<f64>)> = kernels.iter().map(|v| (width, v.clone())).collect();
    let mut worst = 0.0f64;
    for top in [4, COHERENCE_TOP_N] {
        let report = coherence_scores(&tagged, &pool, 1.0, 10.0, top).map_err(|e| e.to_string())?;
        let want = reference_coherence(&kernels, &reprs, top, 1.0, 10.0);
        for (f, w) in report.filters.iter().zip(&want) {
            ensure!((0.0..=1.0).contains(&f.s), "S = {} out of [0,1]", f.s);
            worst = worst.max((f.s - w).abs());
        }
    }
    ensure!(worst <= 1e-12, "reference difference {worst:.3e}");

    // Four planted clusters of 25 k-grams in two polarity groups.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (width, d) = (2, 4);
    let len = width * d;
    let mut reprs = Vec::new();
    let mut kernels = Vec::new();
    for c in 0..4 {
        let group = c / 2;
        let mut center = vec![0.0; len];
        center[0] = if group == 0 { 3.0 } else { -3.0 };
        center[1 + group] = if c % 2 == 0 { 1.5 } else { -1.5 };
        let senti: Vec<f64> = (0..2 * width).map(|j| if (j + group) % 2 == 0 { 0.8 } else { 0.1 }).collect();
        let members: Vec<KGramRepr<f64>> = (0..25)
            .map(|_| KGramRepr {
                w2v: center.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect(),
                senti: senti.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect(),
            })
            .collect();
        let mean: Vec<f64> = (0..len).map(|j| members.iter().map(|m| m.w2v[j]).sum::<f64>() / 25.0).collect();
        kernels.push((width, mean));
        reprs.extend(members);
    }
    for _ in 0..4 {
        kernels.push((width, (0..len).map(|_| rng.random_range(-0.01..0.01)).collect()));
    }
    let report = coherence_scores(&kernels, &pool_from(width, reprs), 1.0, 10.0, COHERENCE_TOP_N)
        .map_err(|e| e.to_string())?;
    let s = report.scores();
    ensure!(s.iter().all(|x| (0.0..=1.0).contains(x)), "S out of [0,1]: {s:?}");
    let cluster = s[..4].iter().sum::<f64>() / 4.0;
    let random = s[4..].iter().sum::<f64>() / 4.0;
    ensure!(cluster > random, "cluster kernels {cluster:.3} vs random {random:.3}");
    Ok(format!("reference difference {worst:.1e}; planted mean S {cluster:.3} > random {random:.3}"))
}

// ---------------------------------------------------------------- CLI helpers

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    /// Every successful invocation, in order.
    runs: Vec<(Vec<String>, PathBuf)>,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root, runs: Vec::new() }
    }

    fn exec(&self, args: &[&str]) -> std::process::Output {
        Command::new(env!("CARGO_BIN_EXE_cohkern"))
            .args(args)
            .current_dir(&self.root)
            .env_remove("COHKERN_SEED")
            .output()
            .expect("cohkern runs")
    }

    /// Runs a command that must succeed and remembers it with its manifest.
    fn run(&mut self, args: &[&str], manifest: &str) -> Result<Value, String> {
        let out = self.exec(args);
        ensure!(
            out.status.success(),
            "`cohkern {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        );
        let path = self.root.join(manifest);
        self.runs.push((args.iter().map(|s| s.to_string()).collect(), path.clone()));
        read_json(&path)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn mean_seconds(csv: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(csv).map_err(|e| e.to_string())?;
    let secs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    ensure!(!secs.is_empty(), "{} has no epochs", csv.display());
    Ok(secs.iter().sum::<f64>() / secs.len() as f64)
}

const FIT: [&str; 10] = [
    "--train",
    "data/train.tsv",
    "--val",
    "data/val.tsv",
    "--test",
    "data/test.tsv",
    "--w2v",
    "data/vectors.bin",
    "--batch",
    "10",
];

fn with_fit<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(FIT.iter()).chain(tail).copied().collect()
}

// ---------------------------------------------------------------- 6

fn desk_training(ws: &mut Workspace) -> Outcome {
    let start = Instant::now();
    ws.run(&["synth", "--out", "data"], "data/manifest.json")?;
    let vocab = std::fs::read_to_string(ws.path("data/train.tsv")).map_err(|e| e.to_string())?;
    let n: usize = ["data/train.tsv", "data/val.tsv", "data/test.tsv"]
        .iter()
        .map(|p| std::fs::read_to_string(ws.path(p)).unwrap().lines().count())
        .sum();
    ensure!(n == 200, "corpus has {n} sentences");
    let mut words: Vec<&str> = vocab.lines().flat_map(|l| l.split('\t').nth(1).unwrap().split(' ')).collect();
    words.sort();
    words.dedup();
    ensure!(words.len() <= 30, "vocabulary of {}", words.len());

    ws.run(
        &[
            "cluster", "--data", "data/train.tsv", "--w2v", "data/vectors.bin", "--sentiwordnet",
            "data/sentiwordnet.txt", "--opinion-lexicon", "data/positive-words.txt", "data/negative-words.txt",
            "--clusters-per-width", "8", "--seed", "3", "--out", "clusters.txt",
        ],
        "clusters.txt.manifest.json",
    )?;
    let wka_start = Instant::now();
    let wka = ws.run(
        &with_fit(&["train", "--model", "wka", "--clusters", "clusters.txt"], &["--out", "wka.ckpt", "--report", "wka.csv"]),
        "wka.ckpt.manifest.json",
    )?;
    let wka_secs = wka_start.elapsed().as_secs_f64();
    let acc = wka["results"]["test_accuracy"].as_f64().unwrap_or(0.0);
    let epochs = wka["results"]["sweep"].as_array().map_or(0, |s| {
        s.iter().map(|r| r["epochs"].as_u64().unwrap_or(u64::MAX)).max().unwrap_or(0)
    });
    ensure!(wka["results"]["kernels"] == 24, "wka has {} kernels", wka["results"]["kernels"]);
    ensure!(acc >= 0.95, "wka test accuracy {acc:.3}");
    ensure!(epochs <= 50, "{epochs} epochs");

    let mut acc_of = |model: &str| -> Result<f64, String> {
        let m = ws.run(
            &with_fit(&["train", "--model", model], &["--out", &format!("{model}.ckpt")]),
            &format!("{model}.ckpt.manifest.json"),
        )?;
        Ok(m["results"]["test_accuracy"].as_f64().unwrap_or(0.0))
    };
    let simple = acc_of("simple_avg")?;
    let weighted = acc_of("weighted_avg")?;
    ensure!(weighted > simple, "weighted {weighted:.3} vs simple {simple:.3}");
    ensure!(wka_secs < 60.0, "wka training took {wka_secs:.1} s");
    Ok(format!(
        "wka test {acc:.3} in {wka_secs:.1} s; weighted {weighted:.3} > simple {simple:.3} ({:.1} s total)",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 7

fn transfer(ws: &mut Workspace) -> Outcome {
    let fixed = ws.run(
        &with_fit(
            &["transfer", "--source-checkpoint", "wka.ckpt", "--mode", "fixed", "--seed", "1"],
            &["--out", "fixed.ckpt", "--report", "fixed.csv"],
        ),
        "fixed.ckpt.manifest.json",
    )?;
    let src = Checkpoint::<f64>::load(&ws.path("wka.ckpt")).map_err(|e| e.to_string())?;
    let dst = Checkpoint::<f64>::load(&ws.path("fixed.ckpt")).map_err(|e| e.to_string())?;
    ensure!(src.kernel_sections() == dst.kernel_sections(), "kernel sections changed");
    let m = src.model.bank.len() as u64;
    let count = &fixed["results"]["trainable_parameters"];
    ensure!(count["kernel"] == 0, "{} trainable kernel parameters", count["kernel"]);
    ensure!(count["classifier"].as_u64() == Some(2 * m), "classifier count {}", count["classifier"]);
    ensure!(count["total"].as_u64() == Some(2 * m + 2), "total count {}", count["total"]);

    let ff = ws.run(
        &with_fit(
            &["transfer", "--source-checkpoint", "wka.ckpt", "--mode", "fixed_ff", "--seed", "1"],
            &["--out", "fixed_ff.ckpt"],
        ),
        "fixed_ff.ckpt.manifest.json",
    )?;
    ensure!(ff["results"]["kernels"].as_u64() == Some(m + 3), "desk fixed+FF has {} kernels", ff["results"]["kernels"]);

    // A full-size bank of 100 cluster kernels per width.
    let mut table = WordEmbeddingTable::new(2);
    table.insert("x", &[1.0, 0.0]).unwrap();
    let mut mm = ClusterMembership::new();
    for w in [3, 4, 5] {
        mm.insert(w, (0..100).map(|_| vec![vec!["x".to_string(); w]]).collect());
    }
    let big = init_model(&ModelConfig::default(), 2, &table, Some(&mm), None).map_err(|e| e.to_string())?;
    let t = transfer_model(&big, &table, None, TransferMode::FixedPlusFf, 0.1, 2, 0).map_err(|e| e.to_string())?;
    for w in [3, 4, 5] {
        ensure!(t.bank.free_count_per_width(w) == 10, "width {w}: {} free kernels", t.bank.free_count_per_width(w));
    }

    let full = mean_seconds(&ws.path("wka.csv"))?;
    let frozen = mean_seconds(&ws.path("fixed.csv"))?;
    ensure!(frozen < full, "fixed epoch {frozen:.4} s vs full {full:.4} s");
    Ok(format!(
        "{m} kernels untouched, {} trainable; +10 FF per width on 300; epoch {:.1} ms vs {:.1} ms",
        count["total"],
        frozen * 1e3,
        full * 1e3
    ))
}

// ---------------------------------------------------------------- 8

fn parsers() -> Outcome {
    let bytes = std::fs::read(core_fixture("tiny.w2v.bin")).map_err(|e| e.to_string())?;
    let t32 = read_word2vec_binary::<f32, _>(&bytes[..], None).map_err(|e| e.to_string())?;
    let t64 = read_word2vec_binary::<f64, _>(&bytes[..], None).map_err(|e| e.to_string())?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_word2vec_binary(&t32, &mut a).map_err(|e| e.to_string())?;
    write_word2vec_binary(&t64, &mut b).map_err(|e| e.to_string())?;
    ensure!(a == bytes && b == bytes, "word2vec bytes differ after round trip");

    let lex = load_sentiwordnet(&core_fixture("two_sense.swn.txt")).map_err(|e| e.to_string())?;
    let text = lex.to_sentiwordnet_text();
    let again = cohkern::embed::parse_sentiwordnet(&text, "round trip").map_err(|e| e.to_string())?;
    ensure!(again == lex && again.to_sentiwordnet_text() == text, "SentiWordNet round trip differs");
    let score = lex.senti_score("good");
    ensure!(score == (0.5, 0.375), "senti_score(good) = {score:?}");
    Ok(format!("{} bytes of vectors, senti_score(good) = {score:?}", bytes.len()))
}

// ---------------------------------------------------------------- 9

fn explanation(ws: &mut Workspace) -> Outcome {
    let n = normalize_intensity(&[0.0f64, 2.0, 4.0]);
    ensure!(n.intensities == vec![0, 127, 255], "intensities {:?}", n.intensities);

    let doc = ExplanationDoc {
        tokens: vec!["a".into(), "<superb>".into()],
        predicted: 1,
        class_name: Some("positive".into()),
        probability: 0.875f64,
        words: normalize_intensity(&[0.0, 3.5]),
        mode: WeightMode::Unit,
    };
    let golden = std::fs::read_to_string(core_fixture("explain_golden.html")).map_err(|e| e.to_string())?;
    ensure!(render_html(&[doc]) == golden, "HTML differs from the golden file");

    ws.run(
        &["explain", "--checkpoint", "wka.ckpt", "--w2v", "data/vectors.bin", "--input", "data/test.tsv", "--out", "explain.html"],
        "explain.html.manifest.json",
    )?;
    let html = std::fs::read_to_string(ws.path("explain.html")).map_err(|e| e.to_string())?;
    let docs = html.matches("<div class=\"doc\"").count();
    ensure!(docs == 40, "{docs} explained sentences");

    ws.run(
        &[
            "coherence", "--checkpoint", "wka.ckpt", "--w2v", "data/vectors.bin", "--sentiwordnet",
            "data/sentiwordnet.txt", "--data", "data/train.tsv", "--out", "coherence.csv",
        ],
        "coherence.csv.manifest.json",
    )?;
    let filters = std::fs::read_to_string(ws.path("coherence.csv")).unwrap().lines().count() - 1;
    let binned: usize = std::fs::read_to_string(ws.path("coherence.histogram.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    ensure!(filters == 24 && binned == filters, "{binned} binned of {filters} filters");
    Ok(format!("(0,2,4) -> (0,127,255); golden match; {binned} of {filters} filters binned"))
}

// ---------------------------------------------------------------- 10

fn digests(manifest: &Value) -> Vec<(String, String)> {
    manifest["outputs"]
        .as_array()
        .map(|o| {
            o.iter()
                .map(|d| (d["path"].to_string(), d["sha256"].as_str().unwrap_or("").to_string()))
                .collect()
        })
        .unwrap_or_default()
}

fn determinism(ws: &mut Workspace) -> Outcome {
    ws.run(&["prepare", "--data", "data/train.tsv", "--out", "prep", "--folds", "5"], "prep/manifest.json")?;
    let runs = ws.runs.clone();
    let mut commands = BTreeMap::new();
    for (args, manifest) in &runs {
        let first = read_json(manifest)?;
        let out = ws.exec(&args.iter().map(String::as_str).collect::<Vec<_>>());
        ensure!(out.status.success(), "rerun of `{}` failed", args.join(" "));
        let second = read_json(manifest)?;
        ensure!(!digests(&first).is_empty(), "`{}` recorded no outputs", args[0]);
        ensure!(digests(&first) == digests(&second), "`{}` outputs differ on rerun", args.join(" "));
        ensure!(first["results"] == second["results"], "`{}` results differ on rerun", args.join(" "));
        *commands.entry(args[0].clone()).or_insert(0) += 1;
    }
    for c in ["synth", "prepare", "cluster", "train", "transfer", "explain", "coherence"] {
        ensure!(commands.contains_key(c), "{c} was not exercised");
    }

    // Replaying a manifest reproduces the same outputs too.
    let before = read_json(&ws.path("fixed.ckpt.manifest.json"))?;
    let out = ws.exec(&["replay", "--manifest", "fixed.ckpt.manifest.json"]);
    ensure!(out.status.success(), "replay failed: {}", String::from_utf8_lossy(&out.stderr));
    let after = read_json(&ws.path("fixed.ckpt.manifest.json"))?;
    ensure!(digests(&before) == digests(&after) && before["args"] == after["args"], "replay differs");
    Ok(format!("{} runs over {} commands byte-identical; replay identical", runs.len(), commands.len()))
}

fn exit_codes(ws: &Workspace) -> Outcome {
    let code = |args: &[&str]| ws.exec(args).status.code();
    ensure!(code(&["--help"]) == Some(0), "--help failed");
    ensure!(code(&["train", "--model", "bogus", "--train", "x", "--w2v", "y", "--out", "z"]) == Some(2), "bad model");
    ensure!(
        code(&with_fit(&["train", "--model", "wka", "--clusters", "missing.txt"], &["--out", "z.ckpt"])) == Some(2),
        "missing file"
    );
    Ok("help 0, invalid model 2, missing file 2".into())
}

// ---------------------------------------------------------------- runner

#[test]
fn acceptance() {
    let mut ws = Workspace::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 gradient oracle", gradient_oracle()),
        ("2 convolution oracle", convolution_oracle()),
        ("3 softmax and objective", softmax_objective()),
        ("4 k-means", kmeans()),
        ("5 coherence", coherence()),
        ("6 desk-scale training", desk_training(&mut ws)),
        ("7 transfer", transfer(&mut ws)),
        ("8 parsers", parsers()),
        ("9 explanation", explanation(&mut ws)),
        ("10 determinism", determinism(&mut ws)),
        ("cli exit codes", exit_codes(&ws)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("INFO  11 real-data targets: not run (needs the GoogleNews vectors and the MR, SUBJ and SST-2 corpora)");
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
