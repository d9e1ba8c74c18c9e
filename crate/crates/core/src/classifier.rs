//! Linear softmax classifier trained with mini-batch SGD on cross-entropy.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::sketch_fusion::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub feature: FeatureVector,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(feature: FeatureVector, label: usize) -> Self {
        LabeledExample { feature, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Weights `C × D` (row-major), biases `C`, and one name per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    weights: Vec<f64>,
    bias: Vec<f64>,
    class_names: Vec<String>,
    dim: usize,
}

/// Gradient of the training loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_names(class_names: &[String]) -> Result<()> {
    if class_names.len() < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut seen = HashSet::new();
    for name in class_names {
        if !seen.insert(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate class name {name:?}"
            )));
        }
    }
    Ok(())
}

impl ClassifierModel {
    /// Weights uniform in `(-0.01, 0.01)`, zero biases.
    pub fn init(dim: usize, class_names: Vec<String>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "feature dim must be positive".into(),
            ));
        }
        check_names(&class_names)?;
        let mut rng = SplitMix64::new(seed);
        let weights = (0..class_names.len() * dim)
            .map(|_| rng.random_range(-0.01..0.01))
            .collect();
        Ok(ClassifierModel {
            weights,
            bias: vec![0.0; class_names.len()],
            class_names,
            dim,
        })
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>, class_names: Vec<String>) -> Result<Self> {
        check_names(&class_names)?;
        let classes = class_names.len();
        if bias.len() != classes || weights.is_empty() || !weights.len().is_multiple_of(classes) {
            return Err(Error::InvalidArgument(
                "weight/bias shapes disagree with class count".into(),
            ));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(ClassifierModel {
            dim: weights.len() / classes,
            weights,
            bias,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "classifier input",
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x.as_slice()))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Class probabilities `softmax(Wx + b)`.
    pub fn forward(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &FeatureVector) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Mean cross-entropy over `batch` plus `(l2 / 2)·‖W‖²`, with its exact
    /// gradient.
    pub fn loss_and_grad(&self, batch: &[&LabeledExample], l2: f64) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let classes = self.num_classes();
        let mut grad = Gradient {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; classes],
        };
        let mut loss = 0.0;
        for ex in batch {
            self.check_dim(&ex.feature)?;
            self.check_label(ex.label)?;
            let x = ex.feature.as_slice();
            let mut p = self.logits_unchecked(x);
            let log_norm = log_softmax_norm(&p);
            loss += log_norm - p[ex.label];
            for (k, pk) in p.iter_mut().enumerate() {
                *pk = (*pk - log_norm).exp() - if k == ex.label { 1.0 } else { 0.0 };
            }
            for (k, delta) in p.iter().enumerate() {
                grad.bias[k] += delta;
                let row = &mut grad.weights[k * self.dim..(k + 1) * self.dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += delta * v;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        loss *= scale;
        grad.bias.iter_mut().for_each(|g| *g *= scale);
        for (g, w) in grad.weights.iter_mut().zip(&self.weights) {
            *g = *g * scale + l2 * w;
        }
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        Ok((loss, grad))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn apply(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    /// Model file: `C D`, tab-separated class names, then one line per class
    /// with the weight row followed by the bias, at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {}\n{}\n",
            self.num_classes(),
            self.dim,
            self.class_names.join("\t")
        );
        for (row, b) in self.weights.chunks_exact(self.dim).zip(&self.bias) {
            let fields: Vec<String> = row
                .iter()
                .chain(std::iter::once(b))
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(out, "{}", fields.join(" ")).unwrap();
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let (classes, dim) = crate::text_features::parse_header(header, path, 1)?;
        let names: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing class names"))?
            .split('\t')
            .map(str::to_owned)
            .collect();
        if names.len() != classes {
            return Err(Error::parse(
                path,
                2,
                format!("expected {classes} class names, found {}", names.len()),
            ));
        }
        let mut weights = Vec::with_capacity(classes * dim);
        let mut bias = Vec::with_capacity(classes);
        for c in 0..classes {
            let n = c + 3;
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(path, n, "missing weight row"))?;
            let values = line
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, n, format!("bad float: {e}")))?;
            if values.len() != dim + 1 {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {} values, found {}", dim + 1, values.len()),
                ));
            }
            weights.extend_from_slice(&values[..dim]);
            bias.push(values[dim]);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse(
                path,
                classes + 3,
                "trailing content after weight rows",
            ));
        }
        Self::from_parts(weights, bias, names).map_err(|e| Error::parse(path, 1, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn log_softmax_norm(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn init_model(dim: usize, class_names: Vec<String>, seed: u64) -> Result<ClassifierModel> {
    ClassifierModel::init(dim, class_names, seed)
}

pub fn forward(m: &ClassifierModel, x: &FeatureVector) -> Result<Vec<f64>> {
    m.forward(x)
}

pub fn loss_and_grad(
    m: &ClassifierModel,
    batch: &[&LabeledExample],
    l2: f64,
) -> Result<(f64, Gradient)> {
    m.loss_and_grad(batch, l2)
}

/// Regularised loss over the whole dataset.
pub fn dataset_loss(m: &ClassifierModel, data: &[LabeledExample], l2: f64) -> Result<f64> {
    let refs: Vec<&LabeledExample> = data.iter().collect();
    Ok(m.loss_and_grad(&refs, l2)?.0)
}

/// Mini-batch SGD from `model`. The data order is reshuffled every epoch
/// from a generator seeded with `cfg.seed`; the returned history holds the
/// full-dataset loss after each epoch.
pub fn train(
    model: &ClassifierModel,
    data: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for ex in data {
        model.check_dim(&ex.feature)?;
        model.check_label(ex.label)?;
    }
    let mut model = model.clone();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (_, grad) = model.loss_and_grad(&batch, cfg.l2)?;
            model.apply(&grad, cfg.learning_rate);
        }
        history.push(dataset_loss(&model, data, cfg.l2)?);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &ClassifierModel, data: &[LabeledExample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on empty data".into(),
        ));
    }
    let classes = model.num_classes();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for ex in data {
        model.check_label(ex.label)?;
        let predicted = model.predict(&ex.feature)?;
        confusion[ex.label][predicted] += 1;
        correct += usize::from(predicted == ex.label);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
    })
}
