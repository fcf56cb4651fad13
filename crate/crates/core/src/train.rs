//! L1-regularized likelihood training with AdaDelta and dropout, model
//! selection on validation accuracy, evaluation, and kernel reuse.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{holdout, Dataset, FoldPlan, Split};
use crate::embed::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{
    argmax, flexible_per_width, log_softmax_at, EncodedSentence, KernelActivation, Model, ModelKind,
    ParamCount, ParamTensors,
};
use crate::scalar::Scalar;

pub const DEFAULT_LAMBDAS: [f64; 3] = [1e-6, 1e-7, 1e-8];
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 50;
pub const DEFAULT_MAX_EPOCHS: usize = 50;
pub const DEFAULT_PATIENCE: usize = 10;
pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// L1 strength.
    pub lambda: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDAS[0],
            dropout_rate: DEFAULT_DROPOUT,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            rho: ADADELTA_RHO,
            epsilon: ADADELTA_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(0.0..=f64::INFINITY).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("AdaDelta needs 0 <= rho < 1 and epsilon > 0".into()));
        }
        Ok(())
    }

    /// One config per lambda, otherwise identical to `self`.
    pub fn sweep(&self, lambdas: &[f64]) -> Vec<TrainConfig> {
        lambdas
            .iter()
            .map(|&lambda| TrainConfig {
                lambda,
                ..self.clone()
            })
            .collect()
    }
}

/// `sign(x)`, 0 at exactly 0.
pub fn l1_subgradient<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// One elementwise AdaDelta update; returns the parameter deltas.
pub fn adadelta_step<T: Scalar>(grads: &[T], eg2: &mut [T], edx2: &mut [T], rho: T, epsilon: T) -> Vec<T> {
    debug_assert!(grads.len() == eg2.len() && grads.len() == edx2.len());
    let one = T::one();
    grads
        .iter()
        .zip(eg2.iter_mut())
        .zip(edx2.iter_mut())
        .map(|((&g, acc_g), acc_dx)| {
            *acc_g = rho * *acc_g + (one - rho) * g * g;
            let dx = -((*acc_dx + epsilon).sqrt() / (*acc_g + epsilon).sqrt()) * g;
            *acc_dx = rho * *acc_dx + (one - rho) * dx * dx;
            dx
        })
        .collect()
}

/// Running averages of squared gradients and squared updates, shaped like
/// the model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState<T> {
    pub eg2: ParamTensors<T>,
    pub edx2: ParamTensors<T>,
}

impl<T: Scalar> AdaDeltaState<T> {
    pub fn new(model: &Model<T>) -> Self {
        AdaDeltaState {
            eg2: model.zeros_like(),
            edx2: model.zeros_like(),
        }
    }

    /// Applies one update to every trainable tensor of `model`. Frozen
    /// tensors are not touched.
    pub fn apply(&mut self, model: &mut Model<T>, grads: &ParamTensors<T>, rho: T, epsilon: T) {
        let trainable = model.trainable();
        for (i, tensor) in model.tensors_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let deltas = adadelta_step(
                &grads.tensors[i],
                &mut self.eg2.tensors[i],
                &mut self.edx2.tensors[i],
                rho,
                epsilon,
            );
            for (x, dx) in tensor.iter_mut().zip(deltas) {
                *x += dx;
            }
        }
    }
}

/// `sum |theta|` over the regularized tensors (kernel parameters and
/// classifier weights).
pub fn l1_norm<T: Scalar>(model: &Model<T>) -> T {
    let reg = model.regularized();
    model
        .tensors()
        .iter()
        .zip(reg)
        .filter(|(_, r)| *r)
        .flat_map(|(t, _)| t.iter())
        .fold(T::zero(), |a, &x| a + x.abs())
}

/// `lambda * ||theta||_1 - mean log p(y | x)` without dropout.
pub fn objective<T: Scalar>(model: &Model<T>, batch: &[EncodedSentence<T>], lambda: T) -> Result<T> {
    let composed = model.compose()?;
    let mut nll = T::zero();
    for x in batch {
        let f = model.forward(&composed, x)?;
        nll -= log_softmax_at(&f.logits, x.label);
    }
    let n = T::of(batch.len().max(1) as f64);
    Ok(lambda * l1_norm(model) + nll / n)
}

/// Adds `lambda * sign(theta)` to the gradients of regularized, trainable
/// tensors.
pub fn add_l1_subgradient<T: Scalar>(model: &Model<T>, grads: &mut ParamTensors<T>, lambda: T) {
    if lambda == T::zero() {
        return;
    }
    let reg = model.regularized();
    let trainable = model.trainable();
    for (i, t) in model.tensors().iter().enumerate() {
        if reg[i] && trainable[i] {
            for (g, &x) in grads.tensors[i].iter_mut().zip(t.iter()) {
                *g += lambda * l1_subgradient(x);
            }
        }
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar>(rng: &mut impl Rng, len: usize, rate: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn encode_dataset<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    table: &WordEmbeddingTable<T>,
) -> Vec<EncodedSentence<T>> {
    dataset
        .sentences
        .iter()
        .map(|s| model.encode(&s.tokens, s.label, table))
        .collect()
}

type ActivationCache<T> = Vec<Vec<Option<KernelActivation<T>>>>;

fn frozen_cache<T: Scalar>(
    model: &Model<T>,
    composed: &[Vec<T>],
    examples: &[EncodedSentence<T>],
) -> Result<Option<ActivationCache<T>>> {
    if !model.bank.kernels.iter().any(|k| k.frozen) {
        return Ok(None);
    }
    examples
        .iter()
        .map(|x| model.frozen_activations(composed, x))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn accuracy_with<T: Scalar>(
    model: &Model<T>,
    composed: &[Vec<T>],
    examples: &[EncodedSentence<T>],
    cache: Option<&ActivationCache<T>>,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (i, x) in examples.iter().enumerate() {
        let f = model.forward_with(composed, x, cache.map(|c| c[i].as_slice()), None)?;
        if argmax(&f.probs) == x.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Fraction of examples whose most probable class (lowest index on ties)
/// is the label. Dropout is off.
pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[EncodedSentence<T>]) -> Result<f64> {
    let composed = model.compose()?;
    accuracy_with(model, &composed, examples, None)
}

pub fn evaluate_dataset<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    table: &WordEmbeddingTable<T>,
) -> Result<f64> {
    if dataset.n_classes > model.n_classes() {
        return Err(Error::Mismatch(format!(
            "dataset has {} classes but the model predicts {}",
            dataset.n_classes,
            model.n_classes()
        )));
    }
    evaluate(model, &encode_dataset(model, dataset, table))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean regularized objective over the epoch's mini-batches.
    pub objective: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub lambda: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub trainable: ParamCount,
    /// Set when the run stopped on a non-finite objective.
    pub aborted: Option<String>,
}

impl TrainReport {
    /// CSV `epoch,objective,train_acc,val_acc,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,objective,train_acc,val_acc,seconds\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{:.6}",
                e.epoch, e.objective, e.train_acc, e.val_acc, e.seconds
            )
            .unwrap();
        }
        out
    }

    /// Copy with every timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    /// Best-validation model over the whole sweep.
    pub model: Model<T>,
    /// Index into the sweep of the winning config.
    pub best_config: usize,
    /// One report per config, in sweep order.
    pub reports: Vec<TrainReport>,
}

impl<T> FitOutcome<T> {
    pub fn best_report(&self) -> &TrainReport {
        &self.reports[self.best_config]
    }
}

fn train_one<T: Scalar>(
    init: &Model<T>,
    train: &[EncodedSentence<T>],
    val: &[EncodedSentence<T>],
    config: &TrainConfig,
) -> (Option<Model<T>>, TrainReport) {
    let mut report = TrainReport {
        lambda: config.lambda,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
        trainable: init.trainable_parameter_count(),
        aborted: None,
    };
    match run_epochs(init, train, val, config, &mut report) {
        Ok(best) => (best, report),
        Err(e) => {
            warn!("lambda {}: training aborted: {e}", config.lambda);
            report.aborted = Some(e.to_string());
            (None, report)
        }
    }
}

fn run_epochs<T: Scalar>(
    init: &Model<T>,
    train: &[EncodedSentence<T>],
    val: &[EncodedSentence<T>],
    config: &TrainConfig,
    report: &mut TrainReport,
) -> Result<Option<Model<T>>> {
    let mut model = init.clone();
    let lambda = T::of(config.lambda);
    let (rho, eps) = (T::of(config.rho), T::of(config.epsilon));
    let mut state = AdaDeltaState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kernels_trainable = model.bank.kernels.iter().any(|k| !k.frozen);

    // Frozen kernels pool to the same values every epoch.
    let initial = model.compose()?;
    let train_cache = frozen_cache(&model, &initial, train)?;
    let val_cache = frozen_cache(&model, &initial, val)?;
    let m = model.n_features();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<Model<T>> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut composed = initial.clone();
        let mut objective_sum = 0.0;
        let mut n_batches = 0usize;
        for ids in order.chunks(config.batch_size) {
            if kernels_trainable {
                composed = model.compose()?;
            }
            let batch: Vec<&EncodedSentence<T>> = ids.iter().map(|&i| &train[i]).collect();
            let masks: Option<Vec<Vec<T>>> = (config.dropout_rate > 0.0).then(|| {
                ids.iter()
                    .map(|_| dropout_mask(&mut rng, m, config.dropout_rate))
                    .collect()
            });
            let cache: Option<Vec<&[Option<KernelActivation<T>>]>> = train_cache
                .as_ref()
                .map(|c| ids.iter().map(|&i| c[i].as_slice()).collect());
            let (loss, mut grads) =
                model.batch_gradient(&composed, &batch, masks.as_deref(), cache.as_deref())?;
            let obj = (loss + lambda * l1_norm(&model)).as_f64();
            if !obj.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("objective at epoch {epoch}")));
            }
            objective_sum += obj;
            n_batches += 1;
            add_l1_subgradient(&model, &mut grads, lambda);
            state.apply(&mut model, &grads, rho, eps);
        }
        let composed = model.compose()?;
        let train_acc = accuracy_with(&model, &composed, train, train_cache.as_ref())?;
        let val_acc = accuracy_with(&model, &composed, val, val_cache.as_ref())?;
        report.epochs.push(EpochRecord {
            epoch,
            objective: objective_sum / n_batches.max(1) as f64,
            train_acc,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_acc > report.best_val_acc {
            report.best_val_acc = val_acc;
            report.best_epoch = epoch;
            best = Some(model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    info!(
        "lambda {}: best validation accuracy {:.4} at epoch {}",
        config.lambda, report.best_val_acc, report.best_epoch
    );
    Ok(best)
}

/// Trains one copy of `init` per config and returns the model with the best
/// validation accuracy across the sweep (earliest config on ties). Configs
/// that diverge are recorded and skipped.
pub fn fit<T: Scalar>(
    init: &Model<T>,
    train: &[EncodedSentence<T>],
    val: &[EncodedSentence<T>],
    configs: &[TrainConfig],
) -> Result<FitOutcome<T>> {
    init.validate()?;
    if configs.is_empty() {
        return Err(Error::Config("empty training sweep".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let mut best: Option<(usize, f64, Model<T>)> = None;
    let mut reports = Vec::with_capacity(configs.len());
    for (i, config) in configs.iter().enumerate() {
        let (model, report) = train_one(init, train, val, config);
        if let Some(model) = model {
            if best.as_ref().is_none_or(|b| report.best_val_acc > b.1) {
                best = Some((i, report.best_val_acc, model));
            }
        }
        reports.push(report);
    }
    let (best_config, _, model) = best.ok_or_else(|| {
        Error::NonFinite("every configuration in the sweep diverged".into())
    })?;
    Ok(FitOutcome {
        model,
        best_config,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Source kernels frozen; only a new classifier is trained.
    Fixed,
    /// Frozen source kernels plus fresh free kernels.
    FixedPlusFf,
}

impl std::str::FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(TransferMode::Fixed),
            "fixed_ff" | "fixed_plus_ff" => Ok(TransferMode::FixedPlusFf),
            other => Err(Error::Config(format!("unknown transfer mode {other:?}"))),
        }
    }
}

/// Model for the target task: the source kernels frozen, a zeroed
/// classifier for `n_classes`, and in [`TransferMode::FixedPlusFf`]
/// `ff_fraction` of the source kernel count as new free kernels split evenly
/// across widths.
pub fn transfer_model<T: Scalar>(
    source: &Model<T>,
    table: &WordEmbeddingTable<T>,
    widths: Option<&[usize]>,
    mode: TransferMode,
    ff_fraction: f64,
    n_classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    if !source.kind.is_convolutional() || source.bank.is_empty() {
        return Err(Error::Config(format!("model {} has no kernels to reuse", source.kind)));
    }
    if source.d != table.dim() {
        return Err(Error::Mismatch(format!(
            "source kernels use dimension {} but the embedding table has {}",
            source.d,
            table.dim()
        )));
    }
    let source_widths = source.bank.widths();
    if let Some(w) = widths {
        if w != source_widths.as_slice() {
            return Err(Error::Mismatch(format!(
                "source widths {source_widths:?} differ from requested {w:?}"
            )));
        }
    }
    let mut bank = source.bank.clone();
    bank.bind(table)?;
    bank.freeze_all();
    let kind = match mode {
        TransferMode::Fixed => source.kind,
        TransferMode::FixedPlusFf => {
            if !(ff_fraction > 0.0 && ff_fraction < 1.0) {
                return Err(Error::Config(format!("bad flexible-filter fraction {ff_fraction}")));
            }
            let per_width = flexible_per_width(bank.len(), source_widths.len(), ff_fraction);
            bank.add_free(&source_widths, per_width, seed);
            ModelKind::WkaFf
        }
    };
    let bias = source.classifier.bias.is_some();
    Ok(Model::with_bank(kind, bank, n_classes, bias))
}

/// [`transfer_model`] followed by [`fit`] on the target data.
#[allow(clippy::too_many_arguments)]
pub fn transfer_fit<T: Scalar>(
    source: &Model<T>,
    table: &WordEmbeddingTable<T>,
    target_train: &Dataset,
    target_val: &Dataset,
    mode: TransferMode,
    ff_fraction: f64,
    configs: &[TrainConfig],
    seed: u64,
) -> Result<FitOutcome<T>> {
    let n_classes = target_train.n_classes.max(target_val.n_classes);
    let init = transfer_model(source, table, None, mode, ff_fraction, n_classes, seed)?;
    let train = encode_dataset(&init, target_train, table);
    let val = encode_dataset(&init, target_val, table);
    fit(&init, &train, &val, configs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub fold_accuracies: Vec<f64>,
}

impl CrossValidation {
    pub fn mean(&self) -> f64 {
        self.fold_accuracies.iter().sum::<f64>() / self.fold_accuracies.len().max(1) as f64
    }
}

/// For each fold: hold out `val_fraction` of the remaining sentences for
/// model selection, fit a fresh model from `build`, and test on the fold.
pub fn cross_validate<T: Scalar>(
    dataset: &Dataset,
    plan: &FoldPlan,
    val_fraction: f64,
    table: &WordEmbeddingTable<T>,
    configs: &[TrainConfig],
    mut build: impl FnMut(&Dataset) -> Result<Model<T>>,
) -> Result<CrossValidation> {
    let mut fold_accuracies = Vec::with_capacity(plan.n_folds);
    for fold in 0..plan.n_folds {
        let (rest, test_idx) = plan.split(fold);
        let (train_idx, val_idx) = holdout(&rest, val_fraction, plan.seed ^ fold as u64);
        let train = dataset.subset(&train_idx, Split::Train);
        let val = dataset.subset(&val_idx, Split::Validation);
        let test = dataset.subset(&test_idx, Split::Test);
        let init = build(&train)?;
        let outcome = fit(
            &init,
            &encode_dataset(&init, &train, table),
            &encode_dataset(&init, &val, table),
            configs,
        )?;
        fold_accuracies.push(evaluate_dataset(&outcome.model, &test, table)?);
    }
    Ok(CrossValidation { fold_accuracies })
}
