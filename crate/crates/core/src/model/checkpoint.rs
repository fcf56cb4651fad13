//! Versioned plain-text checkpoint.
//!
//! ```text
//! format_version 1
//! model_kind wka
//! widths 3,4,5
//! d 300
//! m 300
//! K_classes 2
//! bias 1
//! oov zero
//! frozen_kernels none
//! seed init 7
//! [cluster 3 0]
//! <z>\t<member tokens>
//! [free 3 100]
//! <value>            (d * k lines)
//! [classifier]
//! <m values>         (one row per class)
//! [bias]
//! <K values>
//! [word_weights]
//! <value>\t<word>
//! ```
//!
//! Floats are written with 17 significant digits and read back exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::embed::{OovPolicy, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{Classifier, Kernel, KernelBank, KernelParams, Model, ModelKind, WordWeights};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub oov: OovPolicy,
    /// Named seeds that produced the model, in insertion order.
    pub seeds: Vec<(String, u64)>,
}

fn num<T: Scalar>(x: T) -> String {
    x.to_exact_string()
}

fn index_list(indices: &[usize]) -> String {
    if indices.is_empty() {
        "none".to_owned()
    } else {
        indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: Model<T>, oov: OovPolicy, seeds: Vec<(String, u64)>) -> Self {
        Checkpoint { model, oov, seeds }
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let widths = m
            .bank
            .widths()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "format_version {FORMAT_VERSION}").unwrap();
        writeln!(out, "model_kind {}", m.kind).unwrap();
        writeln!(out, "widths {}", if widths.is_empty() { "none" } else { &widths }).unwrap();
        writeln!(out, "d {}", m.d).unwrap();
        writeln!(out, "m {}", m.n_features()).unwrap();
        writeln!(out, "K_classes {}", m.n_classes()).unwrap();
        writeln!(out, "bias {}", u8::from(m.classifier.bias.is_some())).unwrap();
        match self.oov {
            OovPolicy::Zero => writeln!(out, "oov zero").unwrap(),
            OovPolicy::SeededRandom { seed } => writeln!(out, "oov seeded_random {seed}").unwrap(),
        }
        let frozen: Vec<usize> = m
            .bank
            .kernels
            .iter()
            .enumerate()
            .filter(|(_, k)| k.frozen)
            .map(|(j, _)| j)
            .collect();
        writeln!(out, "frozen_kernels {}", index_list(&frozen)).unwrap();
        for (name, seed) in &self.seeds {
            writeln!(out, "seed {name} {seed}").unwrap();
        }

        let mut j_in_width = 0;
        let mut last_width = 0;
        for k in &m.bank.kernels {
            if k.width != last_width {
                j_in_width = 0;
                last_width = k.width;
            }
            match &k.params {
                KernelParams::Constrained { members, z, .. } => {
                    writeln!(out, "[cluster {} {j_in_width}]", k.width).unwrap();
                    for (words, &zl) in members.iter().zip(z) {
                        writeln!(out, "{}\t{}", num(zl), words.join(" ")).unwrap();
                    }
                }
                KernelParams::Free { v } => {
                    writeln!(out, "[free {} {j_in_width}]", k.width).unwrap();
                    for &x in v {
                        writeln!(out, "{}", num(x)).unwrap();
                    }
                }
            }
            j_in_width += 1;
        }
        writeln!(out, "[classifier]").unwrap();
        for c in 0..m.n_classes() {
            let row: Vec<String> = m.classifier.row(c).iter().map(|&x| num(x)).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        if let Some(b) = &m.classifier.bias {
            writeln!(out, "[bias]").unwrap();
            let row: Vec<String> = b.iter().map(|&x| num(x)).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        if let Some(ww) = &m.word_weights {
            writeln!(out, "[word_weights]").unwrap();
            for (w, &v) in ww.words.iter().zip(&ww.values) {
                writeln!(out, "{}\t{w}", num(v)).unwrap();
            }
        }
        out
    }

    /// Parses checkpoint text. Constrained kernels come back unbound; call
    /// [`Checkpoint::bind`] before using the model.
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).run()
    }

    /// Computes member representations from `table`, checking the dimension.
    pub fn bind(&mut self, table: &WordEmbeddingTable<T>) -> Result<()> {
        self.model.bank.bind(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Parser::new(&text)
            .with_name(&path.display().to_string())
            .run()
    }

    /// Text of every kernel section (`[cluster ...]` and `[free ...]` with
    /// their bodies).
    pub fn kernel_sections(&self) -> String {
        let text = self.to_text();
        let mut out = String::new();
        let mut inside = false;
        for line in text.lines() {
            if line.starts_with('[') {
                inside = line.starts_with("[cluster ") || line.starts_with("[free ");
            }
            if inside {
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    name: String,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text
                .lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l))
                .filter(|(_, l)| !l.trim().is_empty())
                .collect(),
            pos: 0,
            name: "checkpoint".into(),
        }
    }

    fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_owned();
        self
    }

    fn err(&self, message: impl Into<String>) -> Error {
        let line = self
            .lines
            .get(self.pos.min(self.lines.len().saturating_sub(1)))
            .map_or(0, |l| l.0);
        Error::parse(self.name.clone(), line, message)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1)
    }

    fn next_body(&mut self) -> Option<&'a str> {
        match self.peek() {
            Some(l) if !l.starts_with('[') => {
                self.pos += 1;
                Some(l)
            }
            _ => None,
        }
    }

    fn float<T: Scalar>(&self, s: &str) -> Result<T> {
        s.trim()
            .parse::<T>()
            .map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn usize_field(&self, s: &str, what: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("bad {what} {s:?}")))
    }

    fn run<T: Scalar>(mut self) -> Result<Checkpoint<T>> {
        let mut version = None;
        let mut kind = None;
        let mut d = None;
        let mut m = None;
        let mut n_classes = None;
        let mut bias = true;
        let mut oov = OovPolicy::Zero;
        let mut frozen: Vec<usize> = Vec::new();
        let mut seeds = Vec::new();

        while let Some(line) = self.peek() {
            if line.starts_with('[') {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let value = *fields.get(1).ok_or_else(|| self.err("header line without value"))?;
            match fields[0] {
                "format_version" => version = Some(self.usize_field(value, "version")?),
                "model_kind" => kind = Some(value.parse::<ModelKind>()?),
                "widths" => {}
                "d" => d = Some(self.usize_field(value, "d")?),
                "m" => m = Some(self.usize_field(value, "m")?),
                "K_classes" => n_classes = Some(self.usize_field(value, "K_classes")?),
                "bias" => bias = value == "1",
                "oov" => {
                    let seed = match fields.get(2) {
                        Some(s) => self.usize_field(s, "oov seed")? as u64,
                        None => 0,
                    };
                    oov = OovPolicy::parse(value, seed)?;
                }
                "frozen_kernels" => {
                    if value != "none" {
                        frozen = value
                            .split(',')
                            .map(|s| self.usize_field(s, "kernel index"))
                            .collect::<Result<_>>()?;
                    }
                }
                "seed" => {
                    let v = fields.get(2).ok_or_else(|| self.err("seed without value"))?;
                    let v: u64 = v.parse().map_err(|_| self.err("bad seed"))?;
                    seeds.push((value.to_owned(), v));
                }
                other => return Err(self.err(format!("unknown header key {other:?}"))),
            }
            self.pos += 1;
        }
        match version {
            Some(v) if v == FORMAT_VERSION as usize => {}
            Some(v) => return Err(self.err(format!("unsupported format_version {v}"))),
            None => return Err(self.err("missing format_version")),
        }
        let kind = kind.ok_or_else(|| self.err("missing model_kind"))?;
        let d = d.ok_or_else(|| self.err("missing d"))?;
        let m = m.ok_or_else(|| self.err("missing m"))?;
        let n_classes = n_classes.ok_or_else(|| self.err("missing K_classes"))?;

        let mut kernels: Vec<Kernel<T>> = Vec::new();
        let mut classifier_rows: Vec<Vec<T>> = Vec::new();
        let mut bias_row: Option<Vec<T>> = None;
        let mut word_weights: Option<WordWeights<T>> = None;

        while let Some(header) = self.peek() {
            self.pos += 1;
            let inner = header
                .strip_prefix('[')
                .and_then(|h| h.strip_suffix(']'))
                .ok_or_else(|| self.err(format!("expected a section header, got {header:?}")))?;
            let parts: Vec<&str> = inner.split_whitespace().collect();
            match parts.as_slice() {
                ["cluster", width, _] => {
                    let width = self.usize_field(width, "width")?;
                    let (mut members, mut z) = (Vec::new(), Vec::new());
                    while let Some(line) = self.next_body() {
                        let (value, words) = line
                            .split_once('\t')
                            .ok_or_else(|| self.err("expected `<z>\\t<tokens>`"))?;
                        let words: Vec<String> = words.split(' ').map(str::to_owned).collect();
                        if words.len() != width {
                            return Err(self.err(format!("member does not have width {width}")));
                        }
                        z.push(self.float(value)?);
                        members.push(words);
                    }
                    kernels.push(Kernel {
                        width,
                        params: KernelParams::Constrained {
                            members,
                            z,
                            basis: Vec::new(),
                        },
                        frozen: false,
                    });
                }
                ["free", width, _] => {
                    let width = self.usize_field(width, "width")?;
                    let mut v = Vec::with_capacity(d * width);
                    while let Some(line) = self.next_body() {
                        v.push(self.float(line)?);
                    }
                    if v.len() != d * width {
                        return Err(self.err(format!(
                            "free kernel has {} values, expected {}",
                            v.len(),
                            d * width
                        )));
                    }
                    kernels.push(Kernel {
                        width,
                        params: KernelParams::Free { v },
                        frozen: false,
                    });
                }
                ["classifier"] => {
                    while let Some(line) = self.next_body() {
                        let row = line
                            .split_whitespace()
                            .map(|s| self.float(s))
                            .collect::<Result<Vec<T>>>()?;
                        classifier_rows.push(row);
                    }
                }
                ["bias"] => {
                    let line = self.next_body().ok_or_else(|| self.err("empty bias section"))?;
                    bias_row = Some(
                        line.split_whitespace()
                            .map(|s| self.float(s))
                            .collect::<Result<Vec<T>>>()?,
                    );
                }
                ["word_weights"] => {
                    let (mut words, mut values) = (Vec::new(), Vec::new());
                    while let Some(line) = self.next_body() {
                        let (value, word) = line
                            .split_once('\t')
                            .ok_or_else(|| self.err("expected `<value>\\t<word>`"))?;
                        values.push(self.float(value)?);
                        words.push(word.to_owned());
                    }
                    word_weights = Some(WordWeights::from_parts(words, values));
                }
                _ => return Err(self.err(format!("unknown section {header:?}"))),
            }
        }

        for &j in &frozen {
            kernels
                .get_mut(j)
                .ok_or_else(|| self.err(format!("frozen kernel {j} does not exist")))?
                .frozen = true;
        }
        if classifier_rows.len() != n_classes || classifier_rows.iter().any(|r| r.len() != m) {
            return Err(self.err(format!(
                "classifier section must have {n_classes} rows of {m} values"
            )));
        }
        if bias && bias_row.as_ref().is_none_or(|b| b.len() != n_classes) {
            return Err(self.err(format!("bias section must have {n_classes} values")));
        }
        let model = Model {
            kind,
            d,
            bank: KernelBank { d, kernels },
            classifier: Classifier {
                n_classes,
                n_features: m,
                w: classifier_rows.into_iter().flatten().collect(),
                bias: if bias { bias_row } else { None },
            },
            word_weights,
        };
        model.validate()?;
        Ok(Checkpoint { model, oov, seeds })
    }
}
