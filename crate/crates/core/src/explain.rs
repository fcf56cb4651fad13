//! Word-level attribution from max-pooled kernel activations, HTML
//! highlighting, and coherence histograms.

use std::fmt::Write as _;
use std::path::Path;

use crate::cluster::CoherenceReport;
use crate::embed::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{argmax, Classifier, KernelActivation, Model};
use crate::scalar::Scalar;

/// Font sizes in px for the five intensity buckets.
pub const FONT_SIZES: [u32; 5] = [12, 14, 16, 18, 20];
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;
/// Coherence threshold used for the "well-formed filter" fraction.
pub const COHERENT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Every kernel counts with weight 1.
    Unit,
    /// Kernels count with the predicted class's classifier weight.
    Classifier,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Unit => "unit",
            WeightMode::Classifier => "classifier",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(WeightMode::Unit),
            "classifier" => Ok(WeightMode::Classifier),
            other => Err(Error::Config(format!("unknown weight mode {other:?}"))),
        }
    }
}

/// Adds `weight_j * g_j` to every word in kernel j's winning window, then
/// clamps negative totals to 0. Positions at or beyond `n_words` (padding)
/// are dropped.
pub fn score_words<T: Scalar>(
    trace: &[KernelActivation<T>],
    classifier: &Classifier<T>,
    mode: WeightMode,
    predicted: usize,
    n_words: usize,
) -> Vec<T> {
    let mut scores = vec![T::zero(); n_words];
    for (j, act) in trace.iter().enumerate() {
        let weight = match mode {
            WeightMode::Unit => T::one(),
            WeightMode::Classifier => classifier.weight(predicted, j),
        };
        let (start, end) = act.span();
        for s in scores.iter_mut().take(end).skip(start) {
            *s += weight * act.g;
        }
    }
    scores.iter_mut().for_each(|s| *s = s.max(T::zero()));
    scores
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordScores<T> {
    pub scores: Vec<T>,
    /// `floor(255 * score / max score)`.
    pub intensities: Vec<u8>,
    /// `intensity / 51`, capped at 4.
    pub buckets: Vec<u8>,
}

/// Maps non-negative scores onto `[0, 255]` intensities and five font
/// buckets. All intensities are 0 when the maximum score is 0.
pub fn normalize_intensity<T: Scalar>(scores: &[T]) -> WordScores<T> {
    let max = scores.iter().copied().fold(T::zero(), T::max);
    let intensities: Vec<u8> = scores
        .iter()
        .map(|&s| {
            if max <= T::zero() {
                0
            } else {
                (T::of(255.0) * s / max).floor().as_f64().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    let buckets = intensities.iter().map(|&i| (i / 51).min(4)).collect();
    WordScores {
        scores: scores.to_vec(),
        intensities,
        buckets,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationDoc<T> {
    pub tokens: Vec<String>,
    pub predicted: usize,
    /// Display name of the predicted class, if known.
    pub class_name: Option<String>,
    pub probability: T,
    pub words: WordScores<T>,
    pub mode: WeightMode,
}

/// Runs `model` on `tokens` and attributes the prediction to words.
pub fn explain_sentence<T: Scalar, S: AsRef<str>>(
    model: &Model<T>,
    tokens: &[S],
    table: &WordEmbeddingTable<T>,
    mode: WeightMode,
) -> Result<ExplanationDoc<T>> {
    if !model.kind.is_convolutional() {
        return Err(Error::Config(format!(
            "model {} has no kernels to attribute",
            model.kind
        )));
    }
    let pass = model.predict(tokens, table)?;
    let predicted = argmax(&pass.probs);
    let scores = score_words(&pass.trace, &model.classifier, mode, predicted, tokens.len());
    Ok(ExplanationDoc {
        tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        predicted,
        class_name: None,
        probability: pass.probs[predicted],
        words: normalize_intensity(&scores),
        mode,
    })
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Self-contained HTML page with one paragraph per document; each word is a
/// span colored `rgb(intensity, 0, 0)` and sized by its bucket.
pub fn render_html<T: Scalar>(docs: &[ExplanationDoc<T>]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Kernel explanations</title>\n</head>\n<body>\n",
    );
    for doc in docs {
        let class = match &doc.class_name {
            Some(name) => format!("{} ({})", doc.predicted, escape_html(name)),
            None => doc.predicted.to_string(),
        };
        writeln!(
            out,
            "<div class=\"doc\" data-mode=\"{}\">\n<p class=\"meta\">predicted {} p={:.4}</p>",
            doc.mode.name(),
            class,
            doc.probability.as_f64()
        )
        .unwrap();
        out.push_str("<p class=\"sentence\">");
        for (i, token) in doc.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let intensity = doc.words.intensities.get(i).copied().unwrap_or(0);
            let bucket = doc.words.buckets.get(i).copied().unwrap_or(0) as usize;
            write!(
                out,
                "<span style=\"color:rgb({intensity},0,0);font-size:{}px\">{}</span>",
                FONT_SIZES[bucket.min(4)],
                escape_html(token)
            )
            .unwrap();
        }
        out.push_str("</p>\n</div>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

pub fn write_html<T: Scalar>(docs: &[ExplanationDoc<T>], path: &Path) -> Result<()> {
    std::fs::write(path, render_html(docs)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceHistogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    /// Fraction of filters with score strictly above 0.6.
    pub coherent_fraction: f64,
}

impl CoherenceHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// CSV `bin_low,bin_high,count`.
    pub fn to_csv(&self) -> String {
        let round = |x: f64| (x * 1e9).round() / 1e9;
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = round(i as f64 * self.bin_width);
            let hi = round((i + 1) as f64 * self.bin_width);
            writeln!(out, "{lo},{hi},{c}").unwrap();
        }
        out
    }
}

/// Bins scores in `[0, 1]` into `[0, w), [w, 2w), ..., [1 - w, 1]`.
pub fn histogram_of(scores: &[f64], bin_width: f64) -> Result<CoherenceHistogram> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::Config(format!("bin width {bin_width} not in (0, 1]")));
    }
    let n_bins = (1.0 / bin_width).round().max(1.0) as usize;
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Validation(format!("coherence score {s} outside [0, 1]")));
        }
        // The nudge keeps values like 0.6 out of the bin below.
        let bin = ((s / bin_width + 1e-9).floor() as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let above = scores.iter().filter(|&&s| s > COHERENT_THRESHOLD).count();
    let coherent_fraction = if scores.is_empty() {
        0.0
    } else {
        above as f64 / scores.len() as f64
    };
    Ok(CoherenceHistogram {
        bin_width,
        counts,
        coherent_fraction,
    })
}

pub fn coherence_histogram<T: Scalar>(report: &CoherenceReport<T>, bin_width: f64) -> Result<CoherenceHistogram> {
    let scores: Vec<f64> = report.scores().iter().map(|s| s.as_f64()).collect();
    histogram_of(&scores, bin_width)
}
