use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::json;

use cohkern::cluster::{coherence_scores, membership_text, parse_membership, ClusterConfig, ClusterMembership, Clustering};
use cohkern::corpus::{holdout, load_class_names, load_dataset, make_folds, tokenize, Dataset, DatasetFormat, Split};
use cohkern::embed::{load_sentiwordnet, load_word2vec_binary, OovPolicy, WordEmbeddingTable};
use cohkern::explain::{coherence_histogram, explain_sentence, write_html, WeightMode};
use cohkern::model::{init_model, Checkpoint, KernelParams, Model, ModelConfig, ModelKind};
use cohkern::select::{
    extract_kgrams, merge_external_kgrams, parse_kgram_list, select_kgrams, Heuristic, KGramPool, KGramSets,
    OpinionLexicon, SelectionConfig,
};
use cohkern::train::{encode_dataset, evaluate_dataset, fit, transfer_fit, FitOutcome, TrainConfig, TransferMode};
use cohkern::{Error, Result};

use crate::manifest::{manifest_path, RunManifest};
use crate::{ClusterArgs, CoherenceArgs, ExplainArgs, FitArgs, PrepareArgs, SynthArgs, TrainArgs, TransferArgs};

fn flags<A: Serialize>(args: &A) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_tsv(path: &Path, n_classes: Option<usize>, max_len: usize, split: Split) -> Result<Dataset> {
    let d = load_dataset(path, DatasetFormat::LabeledTsv, n_classes, max_len, split)?;
    if d.is_empty() {
        return Err(Error::Validation(format!("{} has no sentences", path.display())));
    }
    Ok(d)
}

fn dataset_words(sets: &[&Dataset], keep: &mut HashSet<String>) {
    for d in sets {
        for s in &d.sentences {
            keep.extend(s.tokens.iter().cloned());
        }
    }
}

fn membership_words(m: &ClusterMembership, keep: &mut HashSet<String>) {
    for clusters in m.values() {
        for members in clusters {
            for words in members {
                keep.extend(words.iter().cloned());
            }
        }
    }
}

fn model_words(model: &Model<f64>, keep: &mut HashSet<String>) {
    for k in &model.bank.kernels {
        if let KernelParams::Constrained { members, .. } = &k.params {
            for words in members {
                keep.extend(words.iter().cloned());
            }
        }
    }
}

fn load_table(path: &Path, keep: &HashSet<String>, oov: OovPolicy) -> Result<WordEmbeddingTable<f64>> {
    let mut table = load_word2vec_binary(path, Some(keep))?;
    table.oov = oov;
    info!("{} of {} needed words have vectors", table.len(), keep.len());
    Ok(table)
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let format: DatasetFormat = a.format.parse()?;
    let data = load_dataset(&a.data, format, a.n_classes, a.max_len, Split::Train)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let tokens = a.out.join("tokens.tsv");
    let vocab = a.out.join("vocab.txt");
    write_text(&tokens, &data.to_tsv())?;
    let mut text = String::new();
    for (w, c) in data.vocabulary() {
        writeln!(text, "{w}\t{c}").unwrap();
    }
    write_text(&vocab, &text)?;

    let mut m = RunManifest::new("prepare", flags(a));
    m.seed("folds", a.seed.seed).input(&a.data)?;
    m.output(&tokens)?.output(&vocab)?;
    if let Some(n) = a.folds {
        let plan = make_folds(&data, n, a.seed.seed)?;
        let path = a.out.join("folds.txt");
        write_text(&path, &plan.to_text())?;
        m.output(&path)?;
    }
    m.results = json!({
        "sentences": data.len(),
        "classes": data.n_classes,
        "vocabulary": data.vocabulary().len(),
    });
    m.write(&a.out.join("manifest.json"))
}

fn resolve_heuristic(a: &ClusterArgs) -> Result<Heuristic> {
    match &a.heuristic {
        Some(h) => h.parse(),
        None if a.opinion_lexicon.is_some() => Ok(Heuristic::OpinionFilter),
        None if a.kgrams.is_some() => Ok(Heuristic::ExternalList),
        None => Ok(Heuristic::Sample),
    }
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let heuristic = resolve_heuristic(a)?;
    let data = match &a.data {
        Some(p) => load_tsv(p, None, a.max_len, Split::Train)?,
        None => Dataset::new("none", Vec::new(), 1, Split::Train)?,
    };
    let opinion = match &a.opinion_lexicon {
        Some(paths) => Some(OpinionLexicon::load(&paths[0], &paths[1])?),
        None => None,
    };
    let selection = SelectionConfig {
        widths: a.widths.clone(),
        heuristic,
        sample_budget: a.sample_budget,
        min_count: a.min_count,
        seed: a.seed.seed,
    };
    let mut sets: KGramSets = match heuristic {
        Heuristic::ExternalList => {
            let list = a
                .kgrams
                .as_deref()
                .or(a.external_kgrams.as_deref())
                .ok_or_else(|| Error::Config("external_list needs --kgrams".into()))?;
            select_kgrams(&data, &selection, opinion.as_ref(), Some(list))?
        }
        _ => {
            if a.data.is_none() {
                return Err(Error::Config(format!("heuristic {heuristic:?} needs --data")));
            }
            select_kgrams(&data, &selection, opinion.as_ref(), a.external_kgrams.as_deref())?
        }
    };
    if heuristic == Heuristic::ExternalList && a.kgrams.is_some() {
        if let Some(extra) = &a.external_kgrams {
            merge_external_kgrams(&mut sets, extra, &a.widths)?;
        }
    }

    let mut keep = HashSet::new();
    for list in sets.values() {
        for g in list {
            keep.extend(g.words.iter().cloned());
        }
    }
    let table = load_table(&a.w2v, &keep, OovPolicy::Zero)?;
    let lexicon = load_sentiwordnet(&a.sentiwordnet)?;
    let pool = KGramPool::build(&sets, &table, &lexicon);
    let config = ClusterConfig {
        n_clusters_per_width: a.clusters_per_width,
        w2v_weight: a.h1,
        senti_weight: a.h2,
        max_iters: a.max_iters,
        n_init: a.n_init,
        seed: a.seed.seed,
    };
    let clustering = Clustering::build(&pool, &config)?;
    write_text(&a.out, &membership_text(&clustering.membership(&pool)))?;

    let mut m = RunManifest::new("cluster", flags(a));
    m.seed("select", a.seed.seed).seed("kmeans", a.seed.seed);
    for p in [&a.data, &a.kgrams, &a.external_kgrams].into_iter().flatten() {
        m.input(p)?;
    }
    for p in a.opinion_lexicon.iter().flatten() {
        m.input(p)?;
    }
    m.input(&a.w2v)?.input(&a.sentiwordnet)?;
    m.output(&a.out)?;
    let widths: serde_json::Map<String, serde_json::Value> = clustering
        .widths
        .iter()
        .map(|(k, w)| {
            (
                k.to_string(),
                json!({
                    "kgrams": w.assignments.len(),
                    "clusters": w.members.len(),
                    "objective": w.history.last().copied().unwrap_or(0.0),
                }),
            )
        })
        .collect();
    m.results = json!({ "heuristic": format!("{heuristic:?}"), "widths": widths });
    m.write(&manifest_path(&a.out))
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Option<Dataset>,
}

fn load_splits(f: &FitArgs, seed: u64) -> Result<Splits> {
    let train = load_tsv(&f.train, f.n_classes, f.max_len, Split::Train)?;
    let (train, val) = match &f.val {
        Some(p) => (train, load_tsv(p, f.n_classes, f.max_len, Split::Validation)?),
        None => {
            let all: Vec<usize> = (0..train.len()).collect();
            let (kept, held) = holdout(&all, 0.1, seed);
            if held.is_empty() || kept.is_empty() {
                return Err(Error::Validation("too few sentences to hold out a validation set".into()));
            }
            (train.subset(&kept, Split::Train), train.subset(&held, Split::Validation))
        }
    };
    let test = match &f.test {
        Some(p) => Some(load_tsv(p, f.n_classes, f.max_len, Split::Test)?),
        None => None,
    };
    let k = [Some(&train), Some(&val), test.as_ref()]
        .into_iter()
        .flatten()
        .map(|d| d.n_classes)
        .max()
        .unwrap_or(1);
    let widen = |mut d: Dataset| {
        d.n_classes = k;
        d
    };
    Ok(Splits {
        train: widen(train),
        val: widen(val),
        test: test.map(widen),
    })
}

fn train_configs(f: &FitArgs, seed: u64) -> Result<Vec<TrainConfig>> {
    if f.lambda_sweep.is_empty() {
        return Err(Error::Config("empty --lambda-sweep".into()));
    }
    let base = TrainConfig {
        dropout_rate: f.dropout,
        batch_size: f.batch,
        max_epochs: f.epochs,
        patience: f.patience,
        seed,
        ..Default::default()
    };
    let configs = base.sweep(&f.lambda_sweep);
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

fn fit_results(out: &FitOutcome<f64>, splits: &Splits, table: &WordEmbeddingTable<f64>) -> Result<serde_json::Value> {
    let best = out.best_report();
    let test_acc = match &splits.test {
        Some(t) => Some(evaluate_dataset(&out.model, t, table)?),
        None => None,
    };
    let count = best.trainable;
    Ok(json!({
        "model": out.model.kind.name(),
        "kernels": out.model.bank.len(),
        "best_lambda": best.lambda,
        "best_epoch": best.best_epoch,
        "val_accuracy": best.best_val_acc,
        "test_accuracy": test_acc,
        "trainable_parameters": {
            "kernel": count.kernel,
            "classifier": count.classifier,
            "bias": count.bias,
            "word_weights": count.word_weights,
            "total": count.total(),
        },
        "sweep": out.reports.iter().map(|r| json!({
            "lambda": r.lambda,
            "epochs": r.epochs.len(),
            "best_val_accuracy": if r.best_val_acc.is_finite() { Some(r.best_val_acc) } else { None },
            "aborted": r.aborted,
        })).collect::<Vec<_>>(),
    }))
}

#[allow(clippy::too_many_arguments)]
fn finish_fit(
    command: &str,
    flags: serde_json::Value,
    f: &FitArgs,
    extra_inputs: &[&Path],
    seeds: &[(String, u64)],
    out: &FitOutcome<f64>,
    splits: &Splits,
    table: &WordEmbeddingTable<f64>,
) -> Result<()> {
    let results = fit_results(out, splits, table)?;
    let ckpt = Checkpoint::new(out.model.clone(), table.oov, seeds.to_vec());
    ckpt.save(&f.out_checkpoint)?;
    if let Some(report) = &f.report {
        write_text(report, &out.best_report().to_csv())?;
    }
    let mut m = RunManifest::new(command, flags);
    for (name, v) in seeds {
        m.seed(name, *v);
    }
    for p in extra_inputs {
        m.input(p)?;
    }
    for p in [Some(&f.train), f.val.as_ref(), f.test.as_ref(), Some(&f.w2v)].into_iter().flatten() {
        m.input(p)?;
    }
    m.output(&f.out_checkpoint)?;
    if let Some(report) = &f.report {
        m.timed_output(report)?;
    }
    m.results = results;
    m.write(&manifest_path(&f.out_checkpoint))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let seed = a.seed.seed;
    let kind: ModelKind = a.model.parse()?;
    let ff_fraction = match (kind, a.ff_fraction) {
        (ModelKind::WkaFf, f) => f.unwrap_or(0.10),
        (_, Some(f)) if f != 0.0 => {
            return Err(Error::Config("--ff-fraction needs --model wka_ff".into()));
        }
        _ => 0.0,
    };
    let splits = load_splits(&a.fit, seed)?;
    let membership = match (kind, &a.clusters) {
        (ModelKind::Ska | ModelKind::Wka | ModelKind::WkaFf, Some(p)) => Some(parse_membership(&read_text(p)?)?),
        (ModelKind::Ska | ModelKind::Wka | ModelKind::WkaFf, None) => {
            return Err(Error::Config(format!("--model {} needs --clusters", kind.name())));
        }
        _ => None,
    };
    let mut keep = HashSet::new();
    dataset_words(&[&splits.train, &splits.val], &mut keep);
    if let Some(t) = &splits.test {
        dataset_words(&[t], &mut keep);
    }
    if let Some(mm) = &membership {
        membership_words(mm, &mut keep);
    }
    let oov = OovPolicy::parse(&a.oov, seed)?;
    let table = load_table(&a.fit.w2v, &keep, oov)?;
    let config = ModelConfig {
        kind,
        widths: a.widths.clone(),
        kernels_per_width: a.kernels_per_width,
        ff_fraction,
        bias: !a.no_bias,
        seed,
    };
    let init = init_model(&config, splits.train.n_classes, &table, membership.as_ref(), Some(&splits.train))?;
    let configs = train_configs(&a.fit, seed)?;
    let out = fit(
        &init,
        &encode_dataset(&init, &splits.train, &table),
        &encode_dataset(&init, &splits.val, &table),
        &configs,
    )?;
    let clusters: Vec<&Path> = a.clusters.iter().map(PathBuf::as_path).collect();
    finish_fit(
        "train",
        flags(a),
        &a.fit,
        &clusters,
        &[("init".into(), seed), ("train".into(), seed)],
        &out,
        &splits,
        &table,
    )
}

fn load_checkpoint(path: &Path, extra_words: &mut HashSet<String>) -> Result<Checkpoint<f64>> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    model_words(&ckpt.model, extra_words);
    Ok(ckpt)
}

pub fn transfer(a: &TransferArgs) -> Result<()> {
    let seed = a.seed.seed;
    let mode: TransferMode = a.mode.parse()?;
    let mut keep = HashSet::new();
    let source = load_checkpoint(&a.source_checkpoint, &mut keep)?;
    let splits = load_splits(&a.fit, seed)?;
    dataset_words(&[&splits.train, &splits.val], &mut keep);
    if let Some(t) = &splits.test {
        dataset_words(&[t], &mut keep);
    }
    let table = load_table(&a.fit.w2v, &keep, source.oov)?;
    let configs = train_configs(&a.fit, seed)?;
    let out = transfer_fit(&source.model, &table, &splits.train, &splits.val, mode, a.ff_fraction, &configs, seed)?;
    let mut seeds = source.seeds.clone();
    seeds.push(("transfer".into(), seed));
    finish_fit(
        "transfer",
        flags(a),
        &a.fit,
        &[&a.source_checkpoint],
        &seeds,
        &out,
        &splits,
        &table,
    )
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let mode: WeightMode = a.weight_mode.parse()?;
    let mut keep = HashSet::new();
    let mut ckpt = load_checkpoint(&a.checkpoint, &mut keep)?;
    let sentences: Vec<Vec<String>> = read_text(&a.input)?
        .lines()
        .map(|l| match l.split_once('\t') {
            Some((label, text)) if label.trim().parse::<usize>().is_ok() => text,
            _ => l,
        })
        .map(|l| {
            let mut t = tokenize(l);
            t.truncate(a.max_len);
            t
        })
        .filter(|t| !t.is_empty())
        .collect();
    for s in &sentences {
        keep.extend(s.iter().cloned());
    }
    let table = load_table(&a.w2v, &keep, ckpt.oov)?;
    ckpt.bind(&table)?;
    let names = match &a.class_names {
        Some(p) => load_class_names(p)?,
        None => Vec::new(),
    };
    let docs = sentences
        .iter()
        .map(|tokens| {
            let mut doc = explain_sentence(&ckpt.model, tokens, &table, mode)?;
            doc.class_name = names.get(doc.predicted).cloned();
            Ok(doc)
        })
        .collect::<Result<Vec<_>>>()?;
    write_html(&docs, &a.out)?;

    let mut m = RunManifest::new("explain", flags(a));
    m.seed("oov", a.seed.seed);
    m.input(&a.checkpoint)?.input(&a.w2v)?.input(&a.input)?;
    if let Some(p) = &a.class_names {
        m.input(p)?;
    }
    m.output(&a.out)?;
    m.results = json!({ "sentences": docs.len() });
    m.write(&manifest_path(&a.out))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn coherence(a: &CoherenceArgs) -> Result<()> {
    let mut keep = HashSet::new();
    let mut ckpt = load_checkpoint(&a.checkpoint, &mut keep)?;
    let widths = ckpt.model.bank.widths();
    if widths.is_empty() {
        return Err(Error::Config(format!("model {} has no kernels", ckpt.model.kind)));
    }
    let sets = match (&a.kgrams, &a.data) {
        (Some(p), _) => {
            let (sets, skipped) = parse_kgram_list(&read_text(p)?, &widths);
            if skipped > 0 {
                info!("skipped {skipped} k-grams of other widths");
            }
            sets
        }
        (None, Some(p)) => extract_kgrams(&load_tsv(p, None, cohkern::corpus::DEFAULT_MAX_LEN, Split::Train)?, &widths),
        (None, None) => return Err(Error::Config("coherence needs --kgrams or --data".into())),
    };
    for list in sets.values() {
        for g in list {
            keep.extend(g.words.iter().cloned());
        }
    }
    let table = load_table(&a.w2v, &keep, ckpt.oov)?;
    ckpt.bind(&table)?;
    let lexicon = load_sentiwordnet(&a.sentiwordnet)?;
    let pool = KGramPool::build(&sets, &table, &lexicon);
    let kernels: Vec<(usize, Vec<f64>)> = ckpt
        .model
        .bank
        .kernels
        .iter()
        .map(|k| k.width)
        .zip(ckpt.model.compose()?)
        .collect();
    let report = coherence_scores(&kernels, &pool, a.h1, a.h2, a.top_n)?;
    let hist = coherence_histogram(&report, a.bin_width)?;
    let hist_path = sibling(&a.out, "histogram.csv");
    let top_path = sibling(&a.out, "top_kgrams.csv");
    write_text(&a.out, &report.to_csv())?;
    write_text(&hist_path, &hist.to_csv())?;
    write_text(&top_path, &report.top_kgrams_csv(a.show))?;

    let mut m = RunManifest::new("coherence", flags(a));
    m.seed("oov", a.seed.seed);
    m.input(&a.checkpoint)?.input(&a.w2v)?.input(&a.sentiwordnet)?;
    for p in [&a.kgrams, &a.data].into_iter().flatten() {
        m.input(p)?;
    }
    m.output(&a.out)?.output(&hist_path)?.output(&top_path)?;
    m.results = json!({
        "filters": report.filters.len(),
        "coherent_fraction": hist.coherent_fraction,
        "histogram": hist.counts,
    });
    m.write(&manifest_path(&a.out))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let config = cohkern::synth::SynthConfig {
        n_sentences: a.sentences,
        n_val: a.sentences / 5,
        n_test: a.sentences / 5,
        seed: a.seed.seed,
        ..Default::default()
    };
    let corpus = cohkern::synth::generate(&config)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let files = corpus.write_to(&a.out)?;
    let mut m = RunManifest::new("synth", flags(a));
    m.seed("corpus", a.seed.seed);
    for p in [&files.train, &files.val, &files.test, &files.w2v, &files.sentiwordnet, &files.positive, &files.negative] {
        m.output(p)?;
    }
    m.results = json!({
        "train": corpus.train.len(),
        "val": corpus.val.len(),
        "test": corpus.test.len(),
    });
    m.write(&a.out.join("manifest.json"))
}
