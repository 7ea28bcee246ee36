//! One-versus-all L2-regularized logistic regression over sparse (bag-of-words)
//! or dense (averaged embedding) features.
//!
//! Each class is fit independently by full-batch gradient descent with
//! backtracking. Biases are not regularized. Everything is sequential with a
//! fixed summation order so repeated runs give bit-identical weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::{DenseVec, SparseVec};

pub const SCHEMA_VERSION: u32 = 1;

/// A design matrix in either encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Sparse { rows: Vec<SparseVec>, dim: usize },
    Dense { rows: Vec<DenseVec>, dim: usize },
}

/// One feature vector, borrowed.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Sparse(&'a SparseVec),
    Dense(&'a [f64]),
}

impl Row<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Row::Sparse(s) => s.dim(),
            Row::Dense(d) => d.len(),
        }
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Row::Sparse(s) => s.indices().iter().map(|&i| w[i]).sum(),
            Row::Dense(d) => d.iter().zip(w).map(|(x, w)| x * w).sum(),
        }
    }

    fn axpy(&self, a: f64, out: &mut [f64]) {
        match self {
            Row::Sparse(s) => s.indices().iter().for_each(|&i| out[i] += a),
            Row::Dense(d) => d.iter().zip(out).for_each(|(x, o)| *o += a * x),
        }
    }
}

impl Features {
    pub fn sparse(rows: Vec<SparseVec>, dim: usize) -> Self {
        Features::Sparse { rows, dim }
    }

    pub fn dense(rows: Vec<DenseVec>, dim: usize) -> Self {
        Features::Dense { rows, dim }
    }

    pub fn len(&self) -> usize {
        match self {
            Features::Sparse { rows, .. } => rows.len(),
            Features::Dense { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Sparse { dim, .. } | Features::Dense { dim, .. } => *dim,
        }
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match self {
            Features::Sparse { rows, .. } => Row::Sparse(&rows[i]),
            Features::Dense { rows, .. } => Row::Dense(&rows[i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub lambda: f64,
    pub max_epochs: usize,
    /// Stop once the relative loss decrease of an accepted step falls below this.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_epochs: 1000,
            tolerance: 1e-8,
            initial_step: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: Vec<usize>,
    pub final_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub schema_version: u32,
    pub classes: Vec<String>,
    pub dim: usize,
    pub lambda: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub meta: TrainingMeta,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary logistic loss plus `lambda/2 * |w|^2` for one class.
pub fn binary_loss(features: &Features, targets: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = features.len() as f64;
    let mut data = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let m = features.row(i).dot(w) + b;
        data += softplus(if t { -m } else { m });
    }
    data / n + 0.5 * lambda * w.iter().map(|x| x * x).sum::<f64>()
}

/// Loss and its gradient with respect to `(w, b)`.
pub fn binary_loss_grad(
    features: &Features,
    targets: &[bool],
    w: &[f64],
    b: f64,
    lambda: f64,
) -> (f64, Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    let mut data = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = features.row(i);
        let m = row.dot(w) + b;
        let s = if t { 1.0 } else { -1.0 };
        data += softplus(-s * m);
        let d = -s * sigmoid(-s * m) / n;
        row.axpy(d, &mut gw);
        gb += d;
    }
    for (g, x) in gw.iter_mut().zip(w) {
        *g += lambda * x;
    }
    let loss = data / n + 0.5 * lambda * w.iter().map(|x| x * x).sum::<f64>();
    (loss, gw, gb)
}

/// Per-class record of accepted losses, for diagnostics.
pub type LossTrace = Vec<Vec<f64>>;

pub fn train_linear(
    features: &Features,
    labels: &[usize],
    classes: &[String],
    cfg: &LinearConfig,
    seed: u64,
) -> Result<LinearModel> {
    train_linear_traced(features, labels, classes, cfg, seed).map(|(m, _)| m)
}

pub fn train_linear_traced(
    features: &Features,
    labels: &[usize],
    classes: &[String],
    cfg: &LinearConfig,
    seed: u64,
) -> Result<(LinearModel, LossTrace)> {
    if features.len() != labels.len() {
        return Err(Error::Alignment(features.len(), labels.len()));
    }
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    if cfg.lambda.is_nan() || cfg.lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        match counts.get_mut(l) {
            Some(c) => *c += 1,
            None => return Err(Error::InvalidArgument(format!("label {l} out of range"))),
        }
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(classes[c].clone()));
    }

    let dim = features.dim();
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut meta = TrainingMeta {
        seed,
        epochs: Vec::new(),
        final_loss: Vec::new(),
    };
    let mut trace = Vec::new();
    for c in 0..classes.len() {
        let targets: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let (w, b, hist, epochs) = fit_binary(features, &targets, dim, cfg)?;
        meta.epochs.push(epochs);
        meta.final_loss.push(*hist.last().unwrap());
        trace.push(hist);
        weights.push(w);
        biases.push(b);
    }
    Ok((
        LinearModel {
            schema_version: SCHEMA_VERSION,
            classes: classes.to_vec(),
            dim,
            lambda: cfg.lambda,
            weights,
            biases,
            meta,
        },
        trace,
    ))
}

fn fit_binary(
    features: &Features,
    targets: &[bool],
    dim: usize,
    cfg: &LinearConfig,
) -> Result<(Vec<f64>, f64, Vec<f64>, usize)> {
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut step = cfg.initial_step;
    let (mut loss, mut gw, mut gb) = binary_loss_grad(features, targets, &w, b, cfg.lambda);
    let mut history = vec![loss];
    let mut epochs = 0;
    let mut cand = vec![0.0; dim];
    while epochs < cfg.max_epochs {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("{loss}")));
        }
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2 == 0.0 {
            break;
        }
        let accepted = loop {
            for ((c, x), g) in cand.iter_mut().zip(&w).zip(&gw) {
                *c = x - step * g;
            }
            let cb = b - step * gb;
            let l = binary_loss(features, targets, &cand, cb, cfg.lambda);
            // Armijo sufficient decrease
            if l <= loss - 1e-4 * step * gnorm2 {
                break Some((l, cb));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((new_loss, cb)) = accepted else { break };
        std::mem::swap(&mut w, &mut cand);
        b = cb;
        epochs += 1;
        let rel = (loss - new_loss) / loss.abs().max(f64::MIN_POSITIVE);
        history.push(new_loss);
        (loss, gw, gb) = binary_loss_grad(features, targets, &w, b, cfg.lambda);
        if rel < cfg.tolerance {
            break;
        }
        step = (step * 2.0).min(cfg.initial_step);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("{loss}")));
    }
    Ok((w, b, history, epochs))
}

impl LinearModel {
    /// Pre-activations `w_c . x + b_c`.
    pub fn margins(&self, x: Row<'_>) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::FeatureDimension {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| x.dot(w) + b)
            .collect())
    }

    /// Returns the argmax class (lowest index on ties) and per-class sigmoid
    /// scores.
    pub fn predict(&self, x: Row<'_>) -> Result<(usize, Vec<f64>)> {
        let scores: Vec<f64> = self.margins(x)?.into_iter().map(sigmoid).collect();
        Ok((argmax(&scores), scores))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LinearModel = serde_json::from_str(s)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", m.schema_version)));
        }
        if m.weights.len() != m.classes.len()
            || m.biases.len() != m.classes.len()
            || m.weights.iter().any(|w| w.len() != m.dim)
        {
            return Err(Error::Data("inconsistent linear model shapes".into()));
        }
        Ok(m)
    }
}

pub fn predict_linear(model: &LinearModel, x: Row<'_>) -> Result<(usize, Vec<f64>)> {
    model.predict(x)
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
