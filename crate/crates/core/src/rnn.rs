//! Word-level bi-directional GRU encoder with additive attention and a softmax
//! output layer, trained with hand-derived backpropagation.
//!
//! For a sequence of frozen input embeddings `e_1..e_T`:
//!
//! ```text
//! z  = sigmoid(W_z e + U_z h_prev + b_z)
//! r  = sigmoid(W_r e + U_r h_prev + b_r)
//! h~ = tanh(W_h e + U_h (r * h_prev) + b_h)
//! h  = (1 - z) * h_prev + z * h~
//!
//! h_t   = [backward h_t ; forward h_t]
//! u_t   = w_a . tanh(W_a h_t + b_a)
//! alpha = softmax(u)
//! x     = sum_t alpha_t h_t
//! y     = softmax(W_o x + b_o)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::EmbeddingTable;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    /// `out += self * x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += self^T * y`
    fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if *yi != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += yi * a;
                }
            }
        }
    }

    /// `self += a * b^T`
    fn outer_add(&mut self, a: &[f64], b: &[f64]) {
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if *ai != 0.0 {
                for (r, bj) in row.iter_mut().zip(b) {
                    *r += ai * bj;
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Mat,
    pub w_r: Mat,
    pub w_h: Mat,
    pub u_z: Mat,
    pub u_r: Mat,
    pub u_h: Mat,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Mat::zeros(hidden, input),
            w_r: Mat::zeros(hidden, input),
            w_h: Mat::zeros(hidden, input),
            u_z: Mat::zeros(hidden, hidden),
            u_r: Mat::zeros(hidden, hidden),
            u_h: Mat::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bw = 1.0 / (input as f64).sqrt();
        let bu = 1.0 / (hidden as f64).sqrt();
        Self {
            w_z: Mat::uniform(hidden, input, bw, rng),
            w_r: Mat::uniform(hidden, input, bw, rng),
            w_h: Mat::uniform(hidden, input, bw, rng),
            u_z: Mat::uniform(hidden, hidden, bu, rng),
            u_r: Mat::uniform(hidden, hidden, bu, rng),
            u_h: Mat::uniform(hidden, hidden, bu, rng),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input(&self) -> usize {
        self.w_z.cols
    }
}

/// Gate activations of one GRU step.
struct StepCache {
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

fn gru_step(p: &GruParams, e: &[f64], h_prev: &[f64], h_out: &mut [f64]) -> StepCache {
    let hd = p.hidden();
    let mut z = p.b_z.clone();
    p.w_z.mul_add(e, &mut z);
    p.u_z.mul_add(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = p.b_r.clone();
    p.w_r.mul_add(e, &mut r);
    p.u_r.mul_add(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut cand = p.b_h.clone();
    p.w_h.mul_add(e, &mut cand);
    p.u_h.mul_add(&rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());
    for i in 0..hd {
        h_out[i] = (1.0 - z[i]) * h_prev[i] + z[i] * cand[i];
    }
    StepCache { z, r, cand }
}

/// One GRU update.
pub fn gru_cell(params: &GruParams, e: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; params.hidden()];
    gru_step(params, e, h_prev, &mut h);
    h
}

/// States of one direction, in processing order. `states[s]` is the state
/// before step `s`; `states[T]` is the last.
struct DirCache {
    states: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

fn run_direction<'a>(p: &GruParams, inputs: impl Iterator<Item = &'a [f64]>) -> DirCache {
    let hd = p.hidden();
    let mut states = vec![vec![0.0; hd]];
    let mut steps = Vec::new();
    for e in inputs {
        let mut h = vec![0.0; hd];
        let c = gru_step(p, e, states.last().unwrap(), &mut h);
        states.push(h);
        steps.push(c);
    }
    DirCache { states, steps }
}

/// Backpropagation through time for one direction. `inputs` and `dh` are in
/// processing order.
fn backprop_direction(
    p: &GruParams,
    cache: &DirCache,
    inputs: &[&[f64]],
    dh: &[Vec<f64>],
    g: &mut GruParams,
) {
    let hd = p.hidden();
    let mut carry = vec![0.0; hd];
    let mut da_z = vec![0.0; hd];
    let mut da_r = vec![0.0; hd];
    let mut da_h = vec![0.0; hd];
    let mut rh = vec![0.0; hd];
    let mut drh = vec![0.0; hd];
    for s in (0..inputs.len()).rev() {
        let StepCache { z, r, cand } = &cache.steps[s];
        let h_prev = &cache.states[s];
        let e = inputs[s];
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            let d = dh[s][i] + carry[i];
            let dz = d * (cand[i] - h_prev[i]);
            let dcand = d * z[i];
            dh_prev[i] = d * (1.0 - z[i]);
            da_h[i] = dcand * (1.0 - cand[i] * cand[i]);
            da_z[i] = dz * z[i] * (1.0 - z[i]);
            rh[i] = r[i] * h_prev[i];
        }
        g.w_h.outer_add(&da_h, e);
        g.u_h.outer_add(&da_h, &rh);
        add(&mut g.b_h, &da_h);
        drh.iter_mut().for_each(|v| *v = 0.0);
        p.u_h.mul_t_add(&da_h, &mut drh);
        for i in 0..hd {
            dh_prev[i] += drh[i] * r[i];
            da_r[i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
        }
        g.w_z.outer_add(&da_z, e);
        g.u_z.outer_add(&da_z, h_prev);
        add(&mut g.b_z, &da_z);
        p.u_z.mul_t_add(&da_z, &mut dh_prev);
        g.w_r.outer_add(&da_r, e);
        g.u_r.outer_add(&da_r, h_prev);
        add(&mut g.b_r, &da_r);
        p.u_r.mul_t_add(&da_r, &mut dh_prev);
        carry = dh_prev;
    }
}

fn add(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_a: Mat,
    pub b_a: Vec<f64>,
    pub w_v: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(state: usize, dim: usize) -> Self {
        Self {
            w_a: Mat::zeros(dim, state),
            b_a: vec![0.0; dim],
            w_v: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.b_a.len()
    }
}

/// Per-token attention weights for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    pub fn to_json(&self) -> Result<String> {
        let pairs: Vec<(&str, f64)> = self
            .tokens
            .iter()
            .map(String::as_str)
            .zip(self.weights.iter().copied())
            .collect();
        Ok(serde_json::to_string(&pairs)?)
    }
}

/// Runs both directions and concatenates `[backward; forward]` per position.
pub fn encode(fwd: &GruParams, bwd: &GruParams, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
    let f = run_direction(fwd, inputs.iter().copied());
    let b = run_direction(bwd, inputs.iter().rev().copied());
    concat_states(&f, &b, inputs.len())
}

fn concat_states(f: &DirCache, b: &DirCache, t_len: usize) -> Vec<Vec<f64>> {
    (0..t_len)
        .map(|t| {
            let mut h = b.states[t_len - t].clone();
            h.extend_from_slice(&f.states[t + 1]);
            h
        })
        .collect()
}

struct AttnCache {
    proj: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    context: Vec<f64>,
}

fn attend_cached(p: &AttentionParams, states: &[Vec<f64>]) -> AttnCache {
    let mut proj = Vec::with_capacity(states.len());
    let mut scores = Vec::with_capacity(states.len());
    for h in states {
        let mut u = p.b_a.clone();
        p.w_a.mul_add(h, &mut u);
        u.iter_mut().for_each(|v| *v = v.tanh());
        scores.push(u.iter().zip(&p.w_v).map(|(a, b)| a * b).sum::<f64>());
        proj.push(u);
    }
    let alpha = softmax(&scores);
    let mut context = vec![0.0; states.first().map_or(0, Vec::len)];
    for (a, h) in alpha.iter().zip(states) {
        context.iter_mut().zip(h).for_each(|(c, x)| *c += a * x);
    }
    AttnCache {
        proj,
        alpha,
        context,
    }
}

/// Attention weights over `states` and the weighted-sum context vector.
pub fn attend(p: &AttentionParams, states: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let c = attend_cached(p, states);
    (c.alpha, c.context)
}

/// All trainable tensors. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub forward: GruParams,
    pub backward: GruParams,
    pub attention: AttentionParams,
    pub w_o: Mat,
    pub b_o: Vec<f64>,
}

impl Params {
    pub fn zeros(input: usize, hidden: usize, attention: usize, classes: usize) -> Self {
        Self {
            forward: GruParams::zeros(input, hidden),
            backward: GruParams::zeros(input, hidden),
            attention: AttentionParams::zeros(2 * hidden, attention),
            w_o: Mat::zeros(classes, 2 * hidden),
            b_o: vec![0.0; classes],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights, zero biases.
    pub fn init(input: usize, hidden: usize, attention: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let forward = GruParams::init(input, hidden, rng);
        let backward = GruParams::init(input, hidden, rng);
        let bs = 1.0 / ((2 * hidden) as f64).sqrt();
        let w_a = Mat::uniform(attention, 2 * hidden, bs, rng);
        let bv = 1.0 / (attention as f64).sqrt();
        let w_v = (0..attention).map(|_| rng.random_range(-bv..=bv)).collect();
        let w_o = Mat::uniform(classes, 2 * hidden, bs, rng);
        Self {
            forward,
            backward,
            attention: AttentionParams {
                w_a,
                b_a: vec![0.0; attention],
                w_v,
            },
            w_o,
            b_o: vec![0.0; classes],
        }
    }

    /// Every tensor as `(rows, cols, data)`, in a fixed order.
    pub fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut v: Vec<(usize, usize, &[f64])> = Vec::with_capacity(23);
        for g in [&self.forward, &self.backward] {
            for m in [&g.w_z, &g.w_r, &g.w_h, &g.u_z, &g.u_r, &g.u_h] {
                v.push((m.rows, m.cols, &m.data));
            }
            for b in [&g.b_z, &g.b_r, &g.b_h] {
                v.push((b.len(), 1, b));
            }
        }
        let a = &self.attention;
        v.push((a.w_a.rows, a.w_a.cols, &a.w_a.data));
        v.push((a.b_a.len(), 1, &a.b_a));
        v.push((a.w_v.len(), 1, &a.w_v));
        v.push((self.w_o.rows, self.w_o.cols, &self.w_o.data));
        v.push((self.b_o.len(), 1, &self.b_o));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::with_capacity(23);
        for g in [&mut self.forward, &mut self.backward] {
            let GruParams {
                w_z,
                w_r,
                w_h,
                u_z,
                u_r,
                u_h,
                b_z,
                b_r,
                b_h,
            } = g;
            v.extend([
                &mut w_z.data,
                &mut w_r.data,
                &mut w_h.data,
                &mut u_z.data,
                &mut u_r.data,
                &mut u_h.data,
                b_z,
                b_r,
                b_h,
            ]);
        }
        let AttentionParams { w_a, b_a, w_v } = &mut self.attention;
        v.extend([&mut w_a.data, b_a, w_v, &mut self.w_o.data, &mut self.b_o]);
        v
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::new();
        for d in ["fwd", "bwd"] {
            for t in ["W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h"] {
                names.push(format!("{d}.{t}"));
            }
        }
        names.extend(["W_a", "b_a", "w_a", "W_o", "b_o"].map(String::from));
        names
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn axpy(&mut self, a: f64, other: &Params) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(d, x)| *d += a * x);
        }
    }

    /// Output distribution and attention weights.
    pub fn predict(&self, inputs: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
        let states = encode(&self.forward, &self.backward, inputs);
        let attn = attend_cached(&self.attention, &states);
        let mut logits = self.b_o.clone();
        self.w_o.mul_add(&attn.context, &mut logits);
        (softmax(&logits), attn.alpha)
    }

    /// Cross-entropy loss for one labelled sequence.
    pub fn loss(&self, inputs: &[&[f64]], label: usize) -> f64 {
        let (p, _) = self.predict(inputs);
        -p[label].ln()
    }

    /// Cross-entropy loss; gradients are added into `grad`.
    pub fn loss_grad(&self, inputs: &[&[f64]], label: usize, grad: &mut Params) -> f64 {
        let t_len = inputs.len();
        let h2 = 2 * self.forward.hidden();
        let hd = self.forward.hidden();
        let fc = run_direction(&self.forward, inputs.iter().copied());
        let rev: Vec<&[f64]> = inputs.iter().rev().copied().collect();
        let bc = run_direction(&self.backward, rev.iter().copied());
        let states = concat_states(&fc, &bc, t_len);
        let attn = attend_cached(&self.attention, &states);
        let mut logits = self.b_o.clone();
        self.w_o.mul_add(&attn.context, &mut logits);
        let probs = softmax(&logits);
        let loss = -probs[label].ln();

        let mut dlogits = probs;
        dlogits[label] -= 1.0;
        grad.w_o.outer_add(&dlogits, &attn.context);
        add(&mut grad.b_o, &dlogits);
        let mut dctx = vec![0.0; h2];
        self.w_o.mul_t_add(&dlogits, &mut dctx);

        let dalpha: Vec<f64> = states
            .iter()
            .map(|h| h.iter().zip(&dctx).map(|(a, b)| a * b).sum())
            .collect();
        let mean: f64 = attn.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
        let mut dstates: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        let ap = &self.attention;
        for t in 0..t_len {
            let a = attn.alpha[t];
            let du = a * (dalpha[t] - mean);
            let mut dh: Vec<f64> = dctx.iter().map(|d| a * d).collect();
            let proj = &attn.proj[t];
            add(&mut grad.attention.w_v, &proj.iter().map(|p| du * p).collect::<Vec<_>>());
            let dpre: Vec<f64> = proj
                .iter()
                .zip(&ap.w_v)
                .map(|(p, v)| du * v * (1.0 - p * p))
                .collect();
            grad.attention.w_a.outer_add(&dpre, &states[t]);
            add(&mut grad.attention.b_a, &dpre);
            ap.w_a.mul_t_add(&dpre, &mut dh);
            dstates.push(dh);
        }

        let dfwd: Vec<Vec<f64>> = dstates.iter().map(|d| d[hd..].to_vec()).collect();
        let dbwd: Vec<Vec<f64>> = dstates.iter().rev().map(|d| d[..hd].to_vec()).collect();
        backprop_direction(&self.forward, &fc, inputs, &dfwd, &mut grad.forward);
        backprop_direction(&self.backward, &bc, &rev, &dbwd, &mut grad.backward);
        loss
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnnConfig {
    pub hidden: usize,
    pub attention: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    /// Multiplies the learning rate once validation loss has failed to
    /// improve for `patience` consecutive epochs.
    pub lr_decay: f64,
    pub patience: usize,
    /// Return the parameters from the epoch with the lowest validation loss.
    pub restore_best: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            attention: 32,
            optimizer: Optimizer::Sgd,
            lr: 0.05,
            lr_decay: 0.5,
            patience: 3,
            restore_best: true,
            epochs: 10,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnMeta {
    pub seed: u64,
    pub epochs: u32,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruAttentionModel {
    pub params: Params,
    pub classes: Vec<String>,
    pub input_dim: usize,
    pub meta: DnnMeta,
    /// Free-form key/value annotations stored with the model.
    pub tags: Vec<(String, String)>,
}

/// A tokenized example resolved against an embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub label: usize,
}

pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Vec<usize> {
    tokens.iter().filter_map(|t| table.id(t.as_ref())).collect()
}

fn rows<'a>(ids: &[usize], table: &'a EmbeddingTable) -> Vec<&'a [f64]> {
    ids.iter().map(|&i| table.row(i)).collect()
}

/// Per-epoch losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub lr: Vec<f64>,
}

impl GruAttentionModel {
    pub fn init(classes: Vec<String>, input_dim: usize, cfg: &DnnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(input_dim, cfg.hidden, cfg.attention, classes.len(), &mut rng);
        Self {
            params,
            classes,
            input_dim,
            meta: DnnMeta {
                seed,
                epochs: 0,
                final_loss: f64::NAN,
            },
            tags: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.params.forward.hidden()
    }

    /// Class distribution and attention trace for a token sequence; tokens
    /// without an embedding are skipped.
    pub fn forward<S: AsRef<str>>(
        &self,
        tokens: &[S],
        table: &EmbeddingTable,
    ) -> Result<(Vec<f64>, AttentionTrace)> {
        if table.dim() != self.input_dim {
            return Err(Error::FeatureDimension {
                expected: self.input_dim,
                found: table.dim(),
            });
        }
        let kept: Vec<(&str, usize)> = tokens
            .iter()
            .filter_map(|t| table.id(t.as_ref()).map(|i| (t.as_ref(), i)))
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ids: Vec<usize> = kept.iter().map(|&(_, i)| i).collect();
        let (probs, alpha) = self.params.predict(&rows(&ids, table));
        Ok((
            probs,
            AttentionTrace {
                tokens: kept.iter().map(|(t, _)| t.to_string()).collect(),
                weights: alpha,
            },
        ))
    }

    pub fn attention_of<S: AsRef<str>>(
        &self,
        tokens: &[S],
        table: &EmbeddingTable,
    ) -> Result<AttentionTrace> {
        self.forward(tokens, table).map(|(_, t)| t)
    }

    pub fn predict_ids(&self, ids: &[usize], table: &EmbeddingTable) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(self.params.predict(&rows(ids, table)).0)
    }

    pub fn mean_loss(&self, data: &[Encoded], table: &EmbeddingTable) -> f64 {
        let n = data.iter().filter(|d| !d.ids.is_empty()).count().max(1) as f64;
        data.iter()
            .filter(|d| !d.ids.is_empty())
            .map(|d| self.params.loss(&rows(&d.ids, table), d.label))
            .sum::<f64>()
            / n
    }
}

/// First and second moment estimates for Adam, shaped like the model.
struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &Params) -> Self {
        let zero = |p: &Params| {
            let mut z = p.clone();
            z.scale(0.0);
            z
        };
        Self {
            m: zero(p),
            v: zero(p),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grad: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grad.tensors());
        for (((p, m), v), (_, _, g)) in tensors {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mini-batch gradient descent on mean cross-entropy. Input embeddings are
/// frozen. The learning rate is multiplied by `lr_decay` after `patience`
/// consecutive epochs whose validation loss does not improve on the best so
/// far.
pub fn train_dnn(
    train: &[Encoded],
    validation: &[Encoded],
    table: &EmbeddingTable,
    classes: Vec<String>,
    cfg: &DnnConfig,
    seed: u64,
) -> Result<(GruAttentionModel, TrainLog)> {
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 || cfg.attention == 0 {
        return Err(Error::InvalidArgument("hidden, attention and batch size must be positive".into()));
    }
    if let Some(bad) = train.iter().find(|e| e.label >= classes.len()) {
        return Err(Error::InvalidArgument(format!("label {} out of range", bad.label)));
    }
    let mut model = GruAttentionModel::init(classes, table.dim(), cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let usable: Vec<&Encoded> = train.iter().filter(|e| !e.ids.is_empty()).collect();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut lr = cfg.lr;
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut best_params: Option<Params> = None;
    let mut log = TrainLog::default();
    let mut grad = Params::zeros(table.dim(), cfg.hidden, cfg.attention, model.classes.len());
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(&model.params));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.scale(0.0);
            for &i in batch {
                let ex = usable[i];
                total += model.params.loss_grad(&rows(&ex.ids, table), ex.label, &mut grad);
            }
            grad.scale(1.0 / batch.len() as f64);
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss(format!("gradient norm {norm} at epoch {epoch}")));
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
            }
            match adam.as_mut() {
                Some(a) => a.step(&mut model.params, &grad, lr),
                None => model.params.axpy(-lr, &grad),
            }
        }
        let train_loss = total / usable.len().max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("training loss {train_loss} at epoch {epoch}")));
        }
        log.train_loss.push(train_loss);
        log.lr.push(lr);
        if !validation.is_empty() {
            let v = model.mean_loss(validation, table);
            log.validation_loss.push(v);
            if v < best_val {
                best_val = v;
                stale = 0;
                if cfg.restore_best {
                    best_params = Some(model.params.clone());
                }
            } else {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    lr *= cfg.lr_decay;
                    stale = 0;
                }
            }
        }
        model.meta.epochs = epoch as u32 + 1;
        model.meta.final_loss = train_loss;
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    Ok((model, log))
}

const MAGIC: &[u8; 4] = b"BGRU";
const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r).map_err(bin_err)? as usize;
    if n > 1 << 20 {
        return Err(Error::Data("string field too long".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(bin_err)?;
    String::from_utf8(b).map_err(|_| Error::Data("invalid utf-8 in model file".into()))
}

fn bin_err(e: std::io::Error) -> Error {
    Error::Data(format!("truncated model file: {e}"))
}

impl GruAttentionModel {
    /// Binary layout, all integers and floats little-endian:
    /// magic `BGRU`, format version, tags, dimensions `D H K C`, class
    /// labels, training metadata, then each tensor as `rows cols` followed
    /// by `rows*cols` f64 values.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, FORMAT_VERSION)?;
        put_u32(&mut w, self.tags.len() as u32)?;
        for (k, v) in &self.tags {
            put_str(&mut w, k)?;
            put_str(&mut w, v)?;
        }
        for d in [
            self.input_dim,
            self.hidden(),
            self.params.attention.dim(),
            self.classes.len(),
        ] {
            put_u32(&mut w, d as u32)?;
        }
        for c in &self.classes {
            put_str(&mut w, c)?;
        }
        w.write_all(&self.meta.seed.to_le_bytes())?;
        put_u32(&mut w, self.meta.epochs)?;
        w.write_all(&self.meta.final_loss.to_le_bytes())?;
        for (rows, cols, data) in self.params.tensors() {
            put_u32(&mut w, rows as u32)?;
            put_u32(&mut w, cols as u32)?;
            for x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bin_err)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a GRU model file".into()));
        }
        let version = get_u32(&mut r).map_err(bin_err)?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported model version {version}")));
        }
        let ntags = get_u32(&mut r).map_err(bin_err)?;
        let mut tags = Vec::new();
        for _ in 0..ntags {
            tags.push((get_str(&mut r)?, get_str(&mut r)?));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = get_u32(&mut r).map_err(bin_err)? as usize;
        }
        let [input, hidden, attention, nclasses] = dims;
        let mut classes = Vec::with_capacity(nclasses);
        for _ in 0..nclasses {
            classes.push(get_str(&mut r)?);
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed).map_err(bin_err)?;
        let epochs = get_u32(&mut r).map_err(bin_err)?;
        let final_loss = get_f64(&mut r).map_err(bin_err)?;
        let mut params = Params::zeros(input, hidden, attention, nclasses);
        let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(r, c, _)| (*r, *c)).collect();
        for (t, (rows, cols)) in params.tensors_mut().into_iter().zip(shapes) {
            let (fr, fc) = (
                get_u32(&mut r).map_err(bin_err)? as usize,
                get_u32(&mut r).map_err(bin_err)? as usize,
            );
            if (fr, fc) != (rows, cols) {
                return Err(Error::Data(format!(
                    "tensor shape {fr}x{fc} does not match expected {rows}x{cols}"
                )));
            }
            for x in t.iter_mut() {
                *x = get_f64(&mut r).map_err(bin_err)?;
            }
        }
        Ok(Self {
            params,
            classes,
            input_dim: input,
            meta: DnnMeta {
                seed: u64::from_le_bytes(seed),
                epochs,
                final_loss,
            },
            tags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(input: usize, hidden: usize, v: f64) -> GruParams {
        let mut p = GruParams::zeros(input, hidden);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h] {
            m.data.iter_mut().for_each(|x| *x = v);
        }
        for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            b.iter_mut().for_each(|x| *x = v);
        }
        p
    }

    #[test]
    fn gru_cell_with_zero_params() {
        let p = GruParams::zeros(2, 3);
        assert_eq!(gru_cell(&p, &[0.3, -1.0], &[0.0; 3]), vec![0.0; 3]);
        assert_eq!(gru_cell(&p, &[0.3, -1.0], &[0.4, -2.0, 1.0]), vec![0.2, -1.0, 0.5]);
    }

    #[test]
    fn gru_cell_scalar_fixture() {
        // D = H = 1, every weight and bias 1, e = 0, h_prev = 0:
        // z = sigmoid(1), r = sigmoid(1), h~ = tanh(1), h = z * tanh(1).
        let p = filled(1, 1, 1.0);
        let h = gru_cell(&p, &[0.0], &[0.0]);
        let expected = 1.0f64.tanh() / (1.0 + (-1.0f64).exp());
        assert!((h[0] - expected).abs() < 1e-15, "{}", h[0]);
        // and with h_prev = 0.5, e = 0.2:
        // z = r = sigmoid(1.7), h~ = tanh(0.2 + r*0.5 + 1)
        let h = gru_cell(&p, &[0.2], &[0.5]);
        let s = 1.0 / (1.0 + (-1.7f64).exp());
        let c = (1.2 + s * 0.5).tanh();
        assert!((h[0] - ((1.0 - s) * 0.5 + s * c)).abs() < 1e-15);
    }

    #[test]
    fn encode_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::init(2, 3, &mut rng);
        let e1 = [0.5, -0.25];
        let h = encode(&p, &p, &[&e1]);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0][..3], h[0][3..]);

        let (a, b, c) = ([0.1, 0.9], [-0.7, 0.2], [0.3, 0.3]);
        let seq: Vec<&[f64]> = vec![&a, &b, &c, &b, &a];
        let h = encode(&p, &p, &seq);
        for t in 0..5 {
            let mirror = &h[4 - t];
            assert_eq!(h[t][..3], mirror[3..]);
            assert_eq!(h[t][3..], mirror[..3]);
        }

        let z = GruParams::zeros(2, 3);
        assert!(encode(&z, &z, &seq).iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_states_are_prefix_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = GruParams::init(2, 4, &mut rng);
        let b = GruParams::init(2, 4, &mut rng);
        let xs: Vec<[f64; 2]> = (0..6).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let seq: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let short = encode(&f, &b, &seq[..4]);
        let long = encode(&f, &b, &seq);
        for t in 0..4 {
            assert_eq!(short[t][4..], long[t][4..]);
        }
    }

    #[test]
    fn attention_examples() {
        let states = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let mut p = AttentionParams::zeros(2, 2);
        p.w_a.data = vec![0.3, -0.1, 0.2, 0.5];
        let (alpha, ctx) = attend(&p, &states);
        assert!(alpha.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
        assert!((ctx[0] - 3.0).abs() < 1e-12 && (ctx[1] - 4.0).abs() < 1e-12);

        let (alpha, ctx) = attend(&p, &states[..1]);
        assert_eq!(alpha, [1.0]);
        assert_eq!(ctx, states[0]);

        // u = (ln 3, ln 1) through a 1-d projection: tanh(pre) * w = u
        let mut q = AttentionParams::zeros(1, 1);
        q.w_a.data = vec![1.0];
        q.w_v = vec![2.0];
        let hs = vec![vec![(3f64.ln() / 2.0).atanh()], vec![0.0]];
        let (alpha, _) = attend(&q, &hs);
        assert!((alpha[0] - 0.75).abs() < 1e-12 && (alpha[1] - 0.25).abs() < 1e-12);
    }

    fn tiny_model(classes: usize, seed: u64) -> (GruAttentionModel, EmbeddingTable) {
        let table = crate::represent::synth_embeddings(
            &["a", "b", "c", "d"].map(String::from),
            3,
            seed,
        );
        let cfg = DnnConfig {
            hidden: 2,
            attention: 2,
            ..Default::default()
        };
        let classes = (0..classes).map(|i| format!("c{i}")).collect();
        (GruAttentionModel::init(classes, 3, &cfg, seed), table)
    }

    #[test]
    fn output_softmax_properties() {
        let (mut m, table) = tiny_model(3, 1);
        m.params.w_o = Mat::zeros(3, 4);
        let (p, trace) = m.forward(&["a", "b", "zz"], &table).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(trace.tokens, ["a", "b"]);
        assert!((trace.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert_eq!(softmax(&[0.0, 3f64.ln()]), vec![0.25, 0.75]);
        let shifted: Vec<f64> = softmax(&[0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0]);
        let base = softmax(&[0.3, -1.2, 2.0]);
        for (a, b) in shifted.iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(m.forward(&["zz"], &table), Err(Error::EmptySequence)));
    }

    /// Largest relative error between analytic and central-difference
    /// gradients, over every tensor.
    pub(crate) fn max_gradient_error(params: &Params, seq: &[&[f64]], label: usize) -> (f64, String) {
        let mut grad = Params::zeros(
            params.forward.input(),
            params.forward.hidden(),
            params.attention.dim(),
            params.b_o.len(),
        );
        params.loss_grad(seq, label, &mut grad);
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|(_, _, d)| d.to_vec()).collect();
        let names = Params::tensor_names();
        let eps = 1e-5;
        let mut worst = (0.0, String::new());
        let mut probe = params.clone();
        for (ti, a) in analytic.iter().enumerate() {
            for (j, &aj) in a.iter().enumerate() {
                let orig = probe.tensors_mut()[ti][j];
                probe.tensors_mut()[ti][j] = orig + eps;
                let up = probe.loss(seq, label);
                probe.tensors_mut()[ti][j] = orig - eps;
                let down = probe.loss(seq, label);
                probe.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let err = (aj - numeric).abs() / aj.abs().max(numeric.abs()).max(1e-6);
                if err > worst.0 {
                    worst = (err, format!("{}[{j}]", names[ti]));
                }
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = Params::init(3, 3, 2, 2, &mut rng);
        // nonzero biases so every path carries signal
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
        }
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let seq: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        for label in 0..2 {
            let (err, at) = max_gradient_error(&p, &seq, label);
            assert!(err < 1e-4, "relative error {err} at {at}");
        }
        let (err, at) = max_gradient_error(&p, &seq[..1], 1);
        assert!(err < 1e-4, "relative error {err} at {at}");
    }

    fn marker_data() -> (Vec<String>, EmbeddingTable, Vec<Encoded>) {
        let words: Vec<String> = ["marker", "w1", "w2", "w3", "w4", "w5"].map(String::from).to_vec();
        let table = crate::represent::synth_embeddings(&words, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut data = Vec::new();
        for i in 0..200 {
            let label = i % 2;
            let mut ids: Vec<usize> = (0..6).map(|_| rng.random_range(1..6)).collect();
            if label == 1 {
                let pos = rng.random_range(0..ids.len());
                ids[pos] = 0;
            }
            data.push(Encoded { ids, label });
        }
        (words, table, data)
    }

    #[test]
    fn learns_planted_marker() {
        let (words, table, data) = marker_data();
        for (optimizer, lr) in [(Optimizer::Sgd, 0.5), (Optimizer::Adam, 0.02)] {
            let cfg = DnnConfig { hidden: 6, attention: 6, optimizer, lr, epochs: 15, batch_size: 8, ..Default::default() };
            let (m, log) = train_dnn(&data[..160], &data[160..], &table, vec!["no".into(), "yes".into()], &cfg, 2).unwrap();
            assert!(log.train_loss.last().unwrap() < &log.train_loss[0]);
            let correct = data[160..]
                .iter()
                .filter(|d| {
                    let p = m.predict_ids(&d.ids, &table).unwrap();
                    (p[1] > 0.5) == (d.label == 1)
                })
                .count();
            assert!(correct >= 38, "{optimizer:?}: {correct}/40");
            // the marker draws most of the attention in positive examples
            let pos = data[160..].iter().find(|d| d.label == 1).unwrap();
            let toks: Vec<&str> = pos.ids.iter().map(|&i| words[i].as_str()).collect();
            let trace = m.attention_of(&toks, &table).unwrap();
            let at = toks.iter().position(|&t| t == "marker").unwrap();
            let top = (0..trace.weights.len()).max_by(|&a, &b| trace.weights[a].total_cmp(&trace.weights[b])).unwrap();
            assert_eq!(toks[top], toks[at], "{optimizer:?}");
        }
    }

    #[test]
    fn restores_lowest_validation_loss() {
        let (_, table, data) = marker_data();
        let classes = || vec!["no".to_string(), "yes".to_string()];
        let base = DnnConfig { hidden: 4, attention: 4, optimizer: Optimizer::Adam, lr: 0.2, epochs: 12, batch_size: 8, ..Default::default() };
        let (best, log) = train_dnn(&data[..160], &data[160..], &table, classes(), &base, 4).unwrap();
        let min = log.validation_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best.mean_loss(&data[160..], &table), min);
        let last_cfg = DnnConfig { restore_best: false, ..base };
        let (last, log2) = train_dnn(&data[..160], &data[160..], &table, classes(), &last_cfg, 4).unwrap();
        assert_eq!(log, log2);
        assert_eq!(last.mean_loss(&data[160..], &table), *log.validation_loss.last().unwrap());
    }

    #[test]
    fn decay_waits_for_patience() {
        let (_, table, data) = marker_data();
        // a huge learning rate makes validation loss stall from the start
        let cfg = DnnConfig { hidden: 3, attention: 3, lr: 50.0, clip_norm: 0.0, epochs: 8, patience: 3, ..Default::default() };
        let (_, log) = train_dnn(&data[..40], &data[160..], &table, vec!["no".into(), "yes".into()], &cfg, 1).unwrap();
        let mut stale = 0;
        let mut best = f64::INFINITY;
        let mut lr = cfg.lr;
        for (i, v) in log.validation_loss.iter().enumerate() {
            assert_eq!(log.lr[i], lr);
            if *v < best {
                best = *v;
                stale = 0;
            } else {
                stale += 1;
                if stale == 3 {
                    lr *= cfg.lr_decay;
                    stale = 0;
                }
            }
        }
    }

    #[test]
    fn serialization_round_trip() {
        let (mut m, _) = tiny_model(2, 4);
        m.tags.push(("indicators".into(), "without".into()));
        let bytes = m.to_bytes();
        let back = GruAttentionModel::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params, m.params);
        assert_eq!(back.tag("indicators"), Some("without"));
        assert!(GruAttentionModel::read_from(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let table = crate::represent::synth_embeddings(&["a", "b"].map(String::from), 3, 0);
        let data = vec![
            Encoded { ids: vec![0, 1], label: 0 },
            Encoded { ids: vec![1], label: 1 },
        ];
        let cfg = DnnConfig { hidden: 2, attention: 2, epochs: 0, ..Default::default() };
        let classes: Vec<String> = vec!["x".into(), "y".into()];
        let (m, _) = train_dnn(&data, &[], &table, classes.clone(), &cfg, 11).unwrap();
        assert_eq!(m.params, GruAttentionModel::init(classes, 3, &cfg, 11).params);
    }
}
