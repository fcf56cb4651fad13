//! Analytic gradients against central finite differences.

use std::time::Instant;

use cohkern::cluster::ClusterMembership;
use cohkern::embed::WordEmbeddingTable;
use cohkern::model::{EncodedSentence, KernelBank, Model, ModelKind};
use cohkern::train::{add_l1_subgradient, objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const LAMBDA: f64 = 1e-6;

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn table(rng: &mut ChaCha8Rng) -> WordEmbeddingTable<f64> {
    let mut t = WordEmbeddingTable::new(4);
    for w in ["a", "b", "c", "d", "e"] {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        t.insert(w, &v).unwrap();
    }
    t
}

fn analytic(model: &Model<f64>, batch: &[EncodedSentence<f64>]) -> Vec<Vec<f64>> {
    let composed = model.compose().unwrap();
    let refs: Vec<&EncodedSentence<f64>> = batch.iter().collect();
    let (_, mut g) = model.batch_gradient(&composed, &refs, None, None).unwrap();
    add_l1_subgradient(model, &mut g, LAMBDA);
    g.tensors
}

/// Returns the worst relative error over every trainable parameter.
fn check(model: &Model<f64>, batch: &[EncodedSentence<f64>]) -> f64 {
    let grads = analytic(model, batch);
    let trainable = model.trainable();
    let mut worst = 0.0f64;
    for (t, g) in grads.iter().enumerate() {
        if !trainable[t] {
            continue;
        }
        for (i, &gi) in g.iter().enumerate() {
            let at = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[t][i] += delta;
                objective(&m, batch, LAMBDA).unwrap()
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let scale = gi.abs().max(numeric.abs());
            let err = if scale < 1e-9 { 0.0 } else { (gi - numeric).abs() / scale };
            assert!(err < TOL, "tensor {t} entry {i}: analytic {} numeric {numeric}", gi);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn kernel_model_gradients() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let table = table(&mut rng);
    let mut m = ClusterMembership::new();
    m.insert(
        2,
        vec![
            vec![words(&["a", "b"]), words(&["b", "c"])],
            vec![words(&["c", "d"]), words(&["d", "e"]), words(&["e", "a"])],
            vec![words(&["a", "e"]), words(&["b", "d"])],
        ],
    );
    let mut bank = KernelBank::from_membership(&m, &table, false).unwrap();
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
    let x = model.encode(&["a", "c", "b", "e", "d"], 1, &table);
    let worst = check(&model, &[x]);
    println!("worst relative error {worst:.3e}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn weighted_average_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let table = table(&mut rng);
    let mut model = Model::weighted_avg(4, 3, words(&["a", "b", "c", "d"]), 0.2, true);
    for v in model.word_weights.as_mut().unwrap().values.iter_mut() {
        *v = rng.random_range(0.1..1.0);
    }
    for w in model.classifier.w.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let batch = vec![
        model.encode(&["a", "b", "zzz", "c"], 2, &table),
        model.encode(&["d", "a"], 0, &table),
    ];
    check(&model, &batch);
}

#[test]
fn simple_average_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = table(&mut rng);
    let mut model = Model::simple_avg(4, 2, false);
    for w in model.classifier.w.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let batch = vec![model.encode(&["a", "e", "c"], 1, &table)];
    check(&model, &batch);
}
