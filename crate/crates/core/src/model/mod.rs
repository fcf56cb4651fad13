//! Sentence classifiers: convolution over word vectors with ReLU and
//! max-pooling followed by a softmax layer, plus the two word-averaging
//! baselines.

mod checkpoint;
mod conv;
mod kernel;

use std::collections::HashMap;

use rayon::prelude::*;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use conv::{feature_map, max_pool};
pub use kernel::{compose_kernel, flexible_per_width, Kernel, KernelBank, KernelParams, FREE_INIT_RANGE};

use crate::corpus::PAD;
use crate::embed::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_KERNELS_PER_WIDTH: usize = 100;

/// Word-weight key for words outside the training vocabulary.
pub const UNKNOWN_WORD: &str = "<UNK>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Classifier on the equal-weight mean of word vectors.
    SimpleAvg,
    /// Classifier on a learned per-word weighted sum of word vectors.
    WeightedAvg,
    /// Cluster-centroid kernels, frozen.
    Ska,
    /// Cluster-constrained kernels with learned member weights.
    Wka,
    /// Unconstrained kernels.
    CnnStatic,
    /// Constrained kernels plus free flexible filters.
    WkaFf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SimpleAvg => "simple_avg",
            ModelKind::WeightedAvg => "weighted_avg",
            ModelKind::Ska => "ska",
            ModelKind::Wka => "wka",
            ModelKind::CnnStatic => "cnn_static",
            ModelKind::WkaFf => "wka_ff",
        }
    }

    pub fn is_convolutional(self) -> bool {
        !matches!(self, ModelKind::SimpleAvg | ModelKind::WeightedAvg)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simple_avg" | "simple_w2v_avg" => ModelKind::SimpleAvg,
            "weighted_avg" | "weighted_w2v_avg" => ModelKind::WeightedAvg,
            "ska" => ModelKind::Ska,
            "wka" => ModelKind::Wka,
            "cnn_static" => ModelKind::CnnStatic,
            "wka_ff" | "wka_plus_ff" => ModelKind::WkaFf,
            other => return Err(Error::Config(format!("unknown model kind {other:?}"))),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Softmax layer: `s_c = w_c . g (+ b_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major `n_classes x n_features`.
    pub w: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Classifier<T> {
    pub fn zeros(n_classes: usize, n_features: usize, bias: bool) -> Self {
        Classifier {
            n_classes,
            n_features,
            w: vec![T::zero(); n_classes * n_features],
            bias: bias.then(|| vec![T::zero(); n_classes]),
        }
    }

    pub fn row(&self, c: usize) -> &[T] {
        &self.w[c * self.n_features..(c + 1) * self.n_features]
    }

    pub fn weight(&self, c: usize, j: usize) -> T {
        self.w[c * self.n_features + j]
    }

    pub fn logits(&self, g: &[T]) -> Vec<T> {
        (0..self.n_classes)
            .map(|c| {
                let b = self.bias.as_ref().map_or(T::zero(), |b| b[c]);
                dot(self.row(c), g) + b
            })
            .collect()
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(s: &[T]) -> Vec<T> {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&x| (x - max).exp()).collect();
    let z = e.iter().copied().fold(T::zero(), |a, b| a + b);
    e.into_iter().map(|x| x / z).collect()
}

/// `log p_y` computed from the logits without forming `p`.
pub fn log_softmax_at<T: Scalar>(s: &[T], y: usize) -> T {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let z = s.iter().fold(T::zero(), |a, &x| a + (x - max).exp());
    s[y] - max - z.ln()
}

/// Lowest class index with the highest probability.
pub fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (c, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = c;
        }
    }
    best
}

/// Learned per-word weights of the weighted-averaging baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct WordWeights<T> {
    /// Index 0 is [`UNKNOWN_WORD`].
    pub words: Vec<String>,
    pub index: HashMap<String, usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> WordWeights<T> {
    pub fn new(vocab: impl IntoIterator<Item = String>, init: T) -> Self {
        let mut words = vec![UNKNOWN_WORD.to_owned()];
        words.extend(vocab.into_iter().filter(|w| w != UNKNOWN_WORD && w != PAD));
        let values = vec![init; words.len()];
        Self::from_parts(words, values)
    }

    pub fn from_parts(words: Vec<String>, values: Vec<T>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        WordWeights {
            words,
            index,
            values,
        }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }
}

/// A sentence prepared for a particular model: looked-up word vectors and,
/// for the weighted baseline, word-weight ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence<T> {
    /// Tokens including any trailing [`PAD`].
    pub tokens: Vec<String>,
    /// Number of tokens before padding.
    pub n_real: usize,
    /// Row-major `tokens.len() x d`.
    pub matrix: Vec<T>,
    pub word_ids: Vec<usize>,
    pub label: usize,
}

/// Pooled output of one kernel on one sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelActivation<T> {
    pub g: T,
    /// First word of the winning window.
    pub argmax: usize,
    pub width: usize,
}

impl<T> KernelActivation<T> {
    /// Word positions `[start, end)` of the winning window.
    pub fn span(&self) -> (usize, usize) {
        (self.argmax, self.argmax + self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T> {
    /// Pooled kernel outputs (or the sentence average) before dropout.
    pub features: Vec<T>,
    /// One entry per kernel; empty for the averaging baselines.
    pub trace: Vec<KernelActivation<T>>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

/// Gradient (or any per-parameter quantity) laid out like
/// [`Model::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> ParamTensors<T> {
    pub fn add_assign(&mut self, other: &ParamTensors<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flatten()
    }
}

/// Trainable parameters by group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub kernel: usize,
    pub classifier: usize,
    pub bias: usize,
    pub word_weights: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.kernel + self.classifier + self.bias + self.word_weights
    }

    pub fn without_bias(&self) -> usize {
        self.total() - self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub kind: ModelKind,
    pub d: usize,
    pub bank: KernelBank<T>,
    pub classifier: Classifier<T>,
    pub word_weights: Option<WordWeights<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn simple_avg(d: usize, n_classes: usize, bias: bool) -> Self {
        Model {
            kind: ModelKind::SimpleAvg,
            d,
            bank: KernelBank::empty(d),
            classifier: Classifier::zeros(n_classes, d, bias),
            word_weights: None,
        }
    }

    pub fn weighted_avg(
        d: usize,
        n_classes: usize,
        vocab: impl IntoIterator<Item = String>,
        init_weight: T,
        bias: bool,
    ) -> Self {
        Model {
            kind: ModelKind::WeightedAvg,
            d,
            bank: KernelBank::empty(d),
            classifier: Classifier::zeros(n_classes, d, bias),
            word_weights: Some(WordWeights::new(vocab, init_weight)),
        }
    }

    pub fn with_bank(kind: ModelKind, bank: KernelBank<T>, n_classes: usize, bias: bool) -> Self {
        let m = bank.len();
        Model {
            kind,
            d: bank.d,
            bank,
            classifier: Classifier::zeros(n_classes, m, bias),
            word_weights: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.classifier.n_features
    }

    pub fn validate(&self) -> Result<()> {
        let expected = if self.kind.is_convolutional() {
            self.bank.len()
        } else {
            self.d
        };
        if self.classifier.n_features != expected {
            return Err(Error::Mismatch(format!(
                "classifier has {} columns but the model produces {expected} features",
                self.classifier.n_features
            )));
        }
        if self.classifier.w.len() != self.classifier.n_classes * self.classifier.n_features {
            return Err(Error::Mismatch("classifier weight matrix has the wrong size".into()));
        }
        if self.kind == ModelKind::WeightedAvg && self.word_weights.is_none() {
            return Err(Error::Validation("weighted averaging needs word weights".into()));
        }
        for (j, k) in self.bank.kernels.iter().enumerate() {
            if let KernelParams::Free { v } = &k.params {
                if v.len() != self.d * k.width {
                    return Err(Error::Mismatch(format!(
                        "free kernel {j} has length {} instead of {}",
                        v.len(),
                        self.d * k.width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Looks up the word vectors of `tokens`, padding with [`PAD`] so every
    /// kernel fits at least once.
    pub fn encode<S: AsRef<str>>(
        &self,
        tokens: &[S],
        label: usize,
        table: &WordEmbeddingTable<T>,
    ) -> EncodedSentence<T> {
        let n_real = tokens.len();
        let target = n_real.max(self.bank.max_width());
        let tokens = crate::corpus::pad_to_length(tokens, target);
        let d = self.d;
        let mut matrix = vec![T::zero(); tokens.len() * d];
        for (t, row) in tokens.iter().zip(matrix.chunks_exact_mut(d.max(1))) {
            table.write_vector(t, row);
        }
        let word_ids = match &self.word_weights {
            Some(ww) => tokens[..n_real].iter().map(|t| ww.id(t)).collect(),
            None => Vec::new(),
        };
        EncodedSentence {
            tokens,
            n_real,
            matrix,
            word_ids,
            label,
        }
    }

    /// Composed kernel vectors, one per kernel.
    pub fn compose(&self) -> Result<Vec<Vec<T>>> {
        self.bank.compose_all()
    }

    fn activation(&self, j: usize, v: &[T], x: &EncodedSentence<T>) -> Result<KernelActivation<T>> {
        let (g, argmax) = conv::conv_max_pool(v, &x.matrix, self.d)?;
        Ok(KernelActivation {
            g,
            argmax,
            width: self.bank.kernels[j].width,
        })
    }

    /// Pooled outputs of the frozen kernels; `None` for trainable ones.
    pub fn frozen_activations(
        &self,
        composed: &[Vec<T>],
        x: &EncodedSentence<T>,
    ) -> Result<Vec<Option<KernelActivation<T>>>> {
        self.bank
            .kernels
            .iter()
            .enumerate()
            .map(|(j, k)| {
                if k.frozen {
                    self.activation(j, &composed[j], x).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// Feature vector and per-kernel trace; `cached` may supply activations
    /// of frozen kernels.
    pub fn features(
        &self,
        composed: &[Vec<T>],
        x: &EncodedSentence<T>,
        cached: Option<&[Option<KernelActivation<T>>]>,
    ) -> Result<(Vec<T>, Vec<KernelActivation<T>>)> {
        let d = self.d;
        match self.kind {
            ModelKind::SimpleAvg => {
                let mut h = vec![T::zero(); d];
                if x.n_real > 0 {
                    for row in x.matrix.chunks_exact(d).take(x.n_real) {
                        for (a, &b) in h.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    let inv = T::one() / T::of(x.n_real as f64);
                    h.iter_mut().for_each(|a| *a *= inv);
                }
                Ok((h, Vec::new()))
            }
            ModelKind::WeightedAvg => {
                let ww = self.word_weights.as_ref().expect("validated");
                let mut h = vec![T::zero(); d];
                for (row, &id) in x.matrix.chunks_exact(d).zip(&x.word_ids) {
                    crate::scalar::axpy(ww.values[id], row, &mut h);
                }
                Ok((h, Vec::new()))
            }
            _ => {
                let mut trace = Vec::with_capacity(composed.len());
                for (j, v) in composed.iter().enumerate() {
                    let act = match cached.and_then(|c| c[j]) {
                        Some(a) => a,
                        None => self.activation(j, v, x)?,
                    };
                    trace.push(act);
                }
                Ok((trace.iter().map(|a| a.g).collect(), trace))
            }
        }
    }

    /// Forward pass; `mask` scales the features (inverted dropout).
    pub fn forward_with(
        &self,
        composed: &[Vec<T>],
        x: &EncodedSentence<T>,
        cached: Option<&[Option<KernelActivation<T>>]>,
        mask: Option<&[T]>,
    ) -> Result<ForwardPass<T>> {
        let (features, trace) = self.features(composed, x, cached)?;
        let logits = match mask {
            Some(m) => {
                let dropped: Vec<T> = features.iter().zip(m).map(|(&f, &s)| f * s).collect();
                self.classifier.logits(&dropped)
            }
            None => self.classifier.logits(&features),
        };
        if logits.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("class scores".into()));
        }
        let probs = softmax(&logits);
        Ok(ForwardPass {
            features,
            trace,
            logits,
            probs,
        })
    }

    pub fn forward(&self, composed: &[Vec<T>], x: &EncodedSentence<T>) -> Result<ForwardPass<T>> {
        self.forward_with(composed, x, None, None)
    }

    /// Tokens to class probabilities and trace.
    pub fn predict<S: AsRef<str>>(
        &self,
        tokens: &[S],
        table: &WordEmbeddingTable<T>,
    ) -> Result<ForwardPass<T>> {
        let composed = self.compose()?;
        self.forward(&composed, &self.encode(tokens, 0, table))
    }

    /// Every parameter tensor in a fixed order: one per kernel (`z` or `v`),
    /// then classifier weights, biases and word weights when present.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.bank.kernels.iter().map(|k| k.values()).collect();
        out.push(&self.classifier.w);
        if let Some(b) = &self.classifier.bias {
            out.push(b);
        }
        if let Some(ww) = &self.word_weights {
            out.push(&ww.values);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.bank.kernels.iter_mut().map(|k| k.values_mut()).collect();
        out.push(&mut self.classifier.w);
        if let Some(b) = &mut self.classifier.bias {
            out.push(b);
        }
        if let Some(ww) = &mut self.word_weights {
            out.push(&mut ww.values);
        }
        out
    }

    /// Parallel to [`Model::tensors`]: false for frozen kernels.
    pub fn trainable(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.bank.kernels.iter().map(|k| !k.frozen).collect();
        out.push(true);
        if self.classifier.bias.is_some() {
            out.push(true);
        }
        if self.word_weights.is_some() {
            out.push(true);
        }
        out
    }

    /// Parallel to [`Model::tensors`]: true for tensors in the L1 penalty
    /// (kernel parameters and classifier weights).
    pub fn regularized(&self) -> Vec<bool> {
        let mut out = vec![true; self.bank.len() + 1];
        if self.classifier.bias.is_some() {
            out.push(false);
        }
        if self.word_weights.is_some() {
            out.push(false);
        }
        out
    }

    pub fn zeros_like(&self) -> ParamTensors<T> {
        ParamTensors {
            tensors: self.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    /// Zeroed gradient buffer in kernel space: one `d * width` vector per
    /// kernel (constrained ones included), then the remaining tensors.
    pub fn zeros_kernel_space(&self) -> ParamTensors<T> {
        let mut tensors: Vec<Vec<T>> = self
            .bank
            .kernels
            .iter()
            .map(|k| vec![T::zero(); self.d * k.width])
            .collect();
        tensors.extend(
            self.tensors()[self.bank.len()..]
                .iter()
                .map(|t| vec![T::zero(); t.len()]),
        );
        ParamTensors { tensors }
    }

    /// Adds `scale * d(-log p_label)/d(params)` for one example to a
    /// kernel-space buffer from [`Model::zeros_kernel_space`]. `fwd` must
    /// come from [`Model::forward_with`] with the same `mask`.
    pub fn accumulate_gradient(
        &self,
        x: &EncodedSentence<T>,
        fwd: &ForwardPass<T>,
        mask: Option<&[T]>,
        scale: T,
        grads: &mut ParamTensors<T>,
    ) {
        let n_kernels = self.bank.len();
        let m = self.n_features();
        let n_classes = self.n_classes();
        let mut ds = fwd.probs.clone();
        ds[x.label] -= T::one();
        ds.iter_mut().for_each(|v| *v *= scale);

        let masked = |j: usize| mask.map_or(fwd.features[j], |mk| fwd.features[j] * mk[j]);
        {
            let dw = &mut grads.tensors[n_kernels];
            for c in 0..n_classes {
                for j in 0..m {
                    dw[c * m + j] += ds[c] * masked(j);
                }
            }
        }
        let mut next = n_kernels + 1;
        if self.classifier.bias.is_some() {
            for (b, &d) in grads.tensors[next].iter_mut().zip(&ds) {
                *b += d;
            }
            next += 1;
        }
        // Gradient with respect to the undropped features.
        let dfeat: Vec<T> = (0..m)
            .map(|j| {
                let s = (0..n_classes).fold(T::zero(), |a, c| a + ds[c] * self.classifier.weight(c, j));
                mask.map_or(s, |mk| s * mk[j])
            })
            .collect();

        match self.kind {
            ModelKind::SimpleAvg => {}
            ModelKind::WeightedAvg => {
                let da = &mut grads.tensors[next];
                for (row, &id) in x.matrix.chunks_exact(self.d).zip(&x.word_ids) {
                    da[id] += dot(&dfeat, row);
                }
            }
            _ => {
                let d = self.d;
                for (j, k) in self.bank.kernels.iter().enumerate() {
                    let act = fwd.trace[j];
                    // Max-pooling routes the gradient to the winning window
                    // only; ReLU passes none at or below zero.
                    if k.frozen || act.g <= T::zero() || dfeat[j] == T::zero() {
                        continue;
                    }
                    let window = &x.matrix[act.argmax * d..(act.argmax + k.width) * d];
                    crate::scalar::axpy(dfeat[j], window, &mut grads.tensors[j]);
                }
            }
        }
    }

    /// Maps kernel-space gradients to parameter space: `dz_l = p_l . dv_j`
    /// for constrained kernels, unchanged for free ones.
    pub fn project_gradient(&self, mut raw: ParamTensors<T>) -> ParamTensors<T> {
        let d = self.d;
        for (j, k) in self.bank.kernels.iter().enumerate() {
            if let KernelParams::Constrained { basis, z, .. } = &k.params {
                let dv = &raw.tensors[j];
                let dz: Vec<T> = if k.frozen {
                    vec![T::zero(); z.len()]
                } else {
                    basis.chunks_exact(d * k.width).map(|p| dot(p, dv)).collect()
                };
                raw.tensors[j] = dz;
            }
        }
        raw
    }

    /// Mean negative log-likelihood and its gradient over `batch`.
    /// `masks[i]` and `cache[i]` belong to `batch[i]`. Examples are split into
    /// contiguous chunks whose partial sums are added in chunk order.
    pub fn batch_gradient(
        &self,
        composed: &[Vec<T>],
        batch: &[&EncodedSentence<T>],
        masks: Option<&[Vec<T>]>,
        cache: Option<&[&[Option<KernelActivation<T>>]]>,
    ) -> Result<(T, ParamTensors<T>)> {
        if batch.is_empty() {
            return Ok((T::zero(), self.zeros_like()));
        }
        let scale = T::one() / T::of(batch.len() as f64);
        let n_chunks = rayon::current_num_threads().max(1).min(batch.len());
        let chunk = batch.len().div_ceil(n_chunks);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let partials: Vec<Result<(T, ParamTensors<T>)>> = idx
            .par_chunks(chunk)
            .map(|ids| {
                let mut grads = self.zeros_kernel_space();
                let mut loss = T::zero();
                for &i in ids {
                    let mask = masks.map(|m| m[i].as_slice());
                    let fwd = self.forward_with(composed, batch[i], cache.map(|c| c[i]), mask)?;
                    loss -= log_softmax_at(&fwd.logits, batch[i].label);
                    self.accumulate_gradient(batch[i], &fwd, mask, scale, &mut grads);
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = T::zero();
        let mut grads = self.zeros_kernel_space();
        for p in partials {
            let (l, g) = p?;
            total += l;
            grads.add_assign(&g);
        }
        Ok((total * scale, self.project_gradient(grads)))
    }

    /// Parameters that training may change.
    pub fn trainable_parameter_count(&self) -> ParamCount {
        let kernel = self
            .bank
            .kernels
            .iter()
            .filter(|k| !k.frozen)
            .map(|k| k.values().len())
            .sum();
        ParamCount {
            kernel,
            classifier: self.classifier.w.len(),
            bias: self.classifier.bias.as_ref().map_or(0, Vec::len),
            word_weights: self.word_weights.as_ref().map_or(0, |w| w.values.len()),
        }
    }
}

/// How to build a fresh model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    /// Free kernels per width for `cnn_static`.
    pub kernels_per_width: usize,
    /// Flexible filters as a fraction of the constrained kernel count
    /// (`wka_ff` only).
    pub ff_fraction: f64,
    pub bias: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Wka,
            widths: crate::select::DEFAULT_WIDTHS.to_vec(),
            kernels_per_width: DEFAULT_KERNELS_PER_WIDTH,
            ff_fraction: 0.0,
            bias: true,
            seed: 0,
        }
    }
}

/// Builds an untrained model. Cluster-based kinds need `membership`; the
/// weighted baseline needs the training set for its vocabulary and takes
/// `1 / mean sentence length` as the initial word weight.
pub fn init_model<T: Scalar>(
    config: &ModelConfig,
    n_classes: usize,
    table: &WordEmbeddingTable<T>,
    membership: Option<&crate::cluster::ClusterMembership>,
    train: Option<&crate::corpus::Dataset>,
) -> Result<Model<T>> {
    if config.ff_fraction != 0.0 && config.kind != ModelKind::WkaFf {
        return Err(Error::Config("a flexible-filter fraction needs model wka_ff".into()));
    }
    if !(0.0..1.0).contains(&config.ff_fraction) {
        return Err(Error::Config(format!("bad flexible-filter fraction {}", config.ff_fraction)));
    }
    let d = table.dim();
    let need_clusters = || {
        membership.ok_or_else(|| Error::Config(format!("model {} needs a clustering", config.kind)))
    };
    let model = match config.kind {
        ModelKind::SimpleAvg => Model::simple_avg(d, n_classes, config.bias),
        ModelKind::WeightedAvg => {
            let train = train.ok_or_else(|| Error::Config("weighted_avg needs training data".into()))?;
            let total: usize = train.sentences.iter().map(|s| s.tokens.len()).sum();
            let mean_len = total as f64 / train.len().max(1) as f64;
            let vocab = train.vocabulary().into_iter().map(|(w, _)| w);
            Model::weighted_avg(d, n_classes, vocab, T::of(1.0 / mean_len.max(1.0)), config.bias)
        }
        ModelKind::CnnStatic => Model::with_bank(
            ModelKind::CnnStatic,
            KernelBank::free_random(d, &config.widths, config.kernels_per_width, config.seed),
            n_classes,
            config.bias,
        ),
        ModelKind::Ska | ModelKind::Wka => {
            let bank = KernelBank::from_membership(need_clusters()?, table, config.kind == ModelKind::Ska)?;
            Model::with_bank(config.kind, bank, n_classes, config.bias)
        }
        ModelKind::WkaFf => {
            let mut bank = KernelBank::from_membership(need_clusters()?, table, false)?;
            let widths = bank.widths();
            let per_width = flexible_per_width(bank.len(), widths.len(), config.ff_fraction);
            bank.add_free(&widths, per_width, config.seed);
            Model::with_bank(ModelKind::WkaFf, bank, n_classes, config.bias)
        }
    };
    if model.kind.is_convolutional() && model.bank.is_empty() {
        return Err(Error::Config("model has no kernels".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterMembership;

    fn table(d: usize, words: &[&str]) -> WordEmbeddingTable<f64> {
        let mut t = WordEmbeddingTable::new(d);
        for (i, w) in words.iter().enumerate() {
            let v: Vec<f64> = (0..d).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect();
            t.insert(w, &v).unwrap();
        }
        t
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0f64, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(log_softmax_at(&[1000.0f64, 0.0], 1).is_finite());
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
    }

    #[test]
    fn sentence_average_examples() {
        let mut t = WordEmbeddingTable::new(2);
        t.insert("a", &[1.0, 1.0]).unwrap();
        t.insert("b", &[3.0, 3.0]).unwrap();
        let simple = Model::<f64>::simple_avg(2, 2, true);
        let x = simple.encode(&["a", "b"], 0, &t);
        assert_eq!(simple.features(&[], &x, None).unwrap().0, vec![2.0, 2.0]);
        let x1 = simple.encode(&["b"], 0, &t);
        assert_eq!(simple.features(&[], &x1, None).unwrap().0, vec![3.0, 3.0]);
        let padded = simple.encode(&[PAD, PAD], 0, &t);
        assert_eq!(simple.features(&[], &padded, None).unwrap().0, vec![0.0, 0.0]);

        let mut weighted = Model::weighted_avg(2, 2, ["a".to_owned(), "b".to_owned()], 1.0, true);
        let ww = weighted.word_weights.as_mut().unwrap();
        let (ia, ib) = (ww.id("a"), ww.id("b"));
        ww.values[ia] = 2.0;
        ww.values[ib] = 0.0;
        let x = weighted.encode(&["a", "b"], 0, &t);
        assert_eq!(weighted.features(&[], &x, None).unwrap().0, vec![2.0, 2.0]);
        assert_eq!(weighted.word_weights.as_ref().unwrap().id("zzz"), 0);
    }

    #[test]
    fn encode_pads_to_widest_kernel() {
        let t = table(2, &["a"]);
        let m = Model::with_bank(ModelKind::CnnStatic, KernelBank::free_random(2, &[3, 5], 1, 0), 2, true);
        let x = m.encode(&["a", "a"], 1, &t);
        assert_eq!(x.tokens.len(), 5);
        assert_eq!(x.n_real, 2);
        assert!(x.matrix[4..].iter().all(|&v| v == 0.0));
        let pass = m.predict(&["a"], &t).unwrap();
        assert_eq!(pass.trace.len(), 2);
        assert!((pass.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_kernel_gradient() {
        let t = table(3, &[]);
        let mut bank = KernelBank::free_random(3, &[2], 2, 1);
        let mut m = ClusterMembership::new();
        m.insert(2, vec![vec![vec!["x".into(), "y".into()]]]);
        let c = KernelBank::from_membership(&m, &t, false).unwrap();
        bank.kernels.extend(c.kernels);
        let mut model = Model::with_bank(ModelKind::WkaFf, bank, 2, true);
        model.classifier.w.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 - 1.5);
        let composed = model.compose().unwrap();
        let x = model.encode(&["q", "r", "s"], 1, &t);
        let (_, g) = model.batch_gradient(&composed, &[&x], None, None).unwrap();
        for j in 0..model.bank.len() {
            assert!(g.tensors[j].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn permuting_kernels_preserves_probs() {
        let t = table(3, &["a", "b", "c", "d"]);
        let bank = KernelBank::free_random(3, &[2, 3], 3, 7);
        let mut model = Model::with_bank(ModelKind::CnnStatic, bank, 2, true);
        for (i, w) in model.classifier.w.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin() * 50.0;
        }
        let toks = ["a", "c", "b", "d", "a"];
        let p = model.predict(&toks, &t).unwrap().probs;
        let m = model.bank.len();
        let perm: Vec<usize> = (0..m).rev().collect();
        let mut permuted = model.clone();
        permuted.bank.kernels = perm.iter().map(|&j| model.bank.kernels[j].clone()).collect();
        for c in 0..2 {
            for (new, &old) in perm.iter().enumerate() {
                permuted.classifier.w[c * m + new] = model.classifier.w[c * m + old];
            }
        }
        let q = permuted.predict(&toks, &t).unwrap().probs;
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_kernel_keeps_argmax() {
        let t = table(2, &["a", "b", "c"]);
        let mut model = Model::with_bank(ModelKind::CnnStatic, KernelBank::free_random(2, &[2], 4, 3), 2, false);
        let toks = ["a", "b", "c", "a", "c"];
        let before = model.predict(&toks, &t).unwrap().trace;
        for k in &mut model.bank.kernels {
            k.values_mut().iter_mut().for_each(|x| *x *= 3.5);
        }
        let after = model.predict(&toks, &t).unwrap().trace;
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.argmax, b.argmax);
            assert!((b.g - 3.5 * a.g).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_counts() {
        let d = 300;
        let mut cnn = Model::<f32>::with_bank(
            ModelKind::CnnStatic,
            KernelBank::free_random(d, &[3, 4, 5], 100, 0),
            2,
            true,
        );
        let c = cnn.trainable_parameter_count();
        assert_eq!(c.without_bias(), 360_600);
        assert_eq!(c.bias, 2);
        cnn.bank.freeze_all();
        assert_eq!(cnn.trainable_parameter_count().without_bias(), 600);
    }
}
