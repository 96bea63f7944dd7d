//! Attention models for picking the correct warrant, trained with a small
//! reverse-mode differentiation kernel over `f64` vectors.
//!
//! Both warrants run through one shared BiLSTM. Each warrant is pooled by
//! additive attention against an attention vector: the element-wise max over
//! time of a second BiLSTM run over the attention source. A logistic unit over
//! `[pooled0 ; pooled1]` gives the probability that warrant 1 is correct.
//!
//! Attention sources by variant (`ctx` is `[title ; description]`, only in
//! the `with_context` variants):
//!
//! | variant       | slot 0 source          | slot 1 source          |
//! |---------------|------------------------|------------------------|
//! | standard      | `ctx R C`              | `ctx R C`              |
//! | intra-warrant | `ctx R C W1`           | `ctx R C W0`           |

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DataSplit, TaskInstance};
use crate::reliability::derive_seed;
use crate::text::{tokenize, WordVectors};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("instance {instance:?}: field {field} has no tokens")]
    EmptyField { instance: String, field: &'static str },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("bad training configuration: {0}")]
    BadConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<EpochLog> },
    #[error("embedding dimension {found} does not match the model's {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("params file: {0}")]
    Format(String),
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Tensor {
        Tensor {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(name: &str, rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(name, rows, cols);
        t.data.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Every trainable tensor, addressed by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }
}

// ---------------------------------------------------------------------------
// Tape

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    Row(usize, usize),
    MatVec(usize, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Slice(NodeId, usize),
    Concat(Vec<NodeId>),
    MaxPool(Vec<NodeId>, Vec<usize>),
    Dot(NodeId, NodeId),
    Softmax(Vec<NodeId>),
    WeightedSum(NodeId, Vec<NodeId>),
    Mask(NodeId, Vec<f64>),
    BceLogits(NodeId, f64),
}

/// A record of operations for one forward pass; `backward` accumulates
/// parameter gradients.
pub struct Tape<'p> {
    params: &'p Params,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id]
    }

    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(v, Op::Const)
    }

    pub fn param(&mut self, t: usize) -> NodeId {
        let v = self.params.tensors[t].data.clone();
        self.push(v, Op::Param(t))
    }

    pub fn row(&mut self, t: usize, r: usize) -> NodeId {
        let tensor = &self.params.tensors[t];
        let v = tensor.data[r * tensor.cols..(r + 1) * tensor.cols].to_vec();
        self.push(v, Op::Row(t, r))
    }

    pub fn matvec(&mut self, t: usize, x: NodeId) -> NodeId {
        let w = &self.params.tensors[t];
        let xv = &self.values[x];
        assert_eq!(w.cols, xv.len(), "matvec shape mismatch for {}", w.name);
        let out = (0..w.rows)
            .map(|r| {
                w.data[r * w.cols..(r + 1) * w.cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(out, Op::MatVec(t, x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x + y).collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x * y).collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a].iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a].iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[a][start..start + len].to_vec();
        self.push(v, Op::Slice(a, start))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts.iter().flat_map(|&p| self.values[p].iter().copied()).collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Element-wise maximum over `xs`; ties go to the earliest node.
    pub fn max_pool(&mut self, xs: &[NodeId]) -> NodeId {
        let dim = self.values[xs[0]].len();
        let mut arg = vec![0usize; dim];
        let mut out = self.values[xs[0]].clone();
        for (j, &x) in xs.iter().enumerate().skip(1) {
            for k in 0..dim {
                if self.values[x][k] > out[k] {
                    out[k] = self.values[x][k];
                    arg[k] = j;
                }
            }
        }
        self.push(out, Op::MaxPool(xs.to_vec(), arg))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x * y).sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    /// Softmax over scalar nodes, producing one vector.
    pub fn softmax(&mut self, scalars: &[NodeId]) -> NodeId {
        let xs: Vec<f64> = scalars.iter().map(|&s| self.values[s][0]).collect();
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        self.push(e.into_iter().map(|x| x / z).collect(), Op::Softmax(scalars.to_vec()))
    }

    /// `Σ_j w[j] · xs[j]`.
    pub fn weighted_sum(&mut self, w: NodeId, xs: &[NodeId]) -> NodeId {
        let dim = self.values[xs[0]].len();
        let mut out = vec![0.0; dim];
        for (j, &x) in xs.iter().enumerate() {
            let wj = self.values[w][j];
            out.iter_mut().zip(&self.values[x]).for_each(|(o, v)| *o += wj * v);
        }
        self.push(out, Op::WeightedSum(w, xs.to_vec()))
    }

    /// Multiplies by a constant mask (used for dropout).
    pub fn mask(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let v = self.values[a].iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(v, Op::Mask(a, mask))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`.
    pub fn bce_logits(&mut self, logit: NodeId, target: f64) -> NodeId {
        let z = self.values[logit][0];
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        self.push(vec![loss], Op::BceLogits(logit, target))
    }

    /// Backpropagates from the scalar `root`, adding into `grads`.
    pub fn backward(&self, root: NodeId, grads: &mut [Vec<f64>]) {
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); root + 1];
        g[root] = vec![1.0];
        for id in (0..=root).rev() {
            let gi = std::mem::take(&mut g[id]);
            if gi.is_empty() {
                continue;
            }
            let acc = |g: &mut Vec<Vec<f64>>, node: NodeId, k: usize, v: f64| {
                let slot = &mut g[node];
                if slot.is_empty() {
                    *slot = vec![0.0; self.values[node].len()];
                }
                slot[k] += v;
            };
            match &self.ops[id] {
                Op::Const => {}
                Op::Param(t) => grads[*t].iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                Op::Row(t, r) => {
                    let cols = self.params.tensors[*t].cols;
                    grads[*t][r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&gi)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatVec(t, x) => {
                    let w = &self.params.tensors[*t];
                    let xv = &self.values[*x];
                    if g[*x].is_empty() {
                        g[*x] = vec![0.0; xv.len()];
                    }
                    for (r, &gr) in gi.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &w.data[r * w.cols..(r + 1) * w.cols];
                        let grow = &mut grads[*t][r * w.cols..(r + 1) * w.cols];
                        for c in 0..w.cols {
                            grow[c] += gr * xv[c];
                        }
                        let gx = &mut g[*x];
                        for c in 0..w.cols {
                            gx[c] += gr * row[c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (k, &v) in gi.iter().enumerate() {
                        acc(&mut g, *a, k, v);
                        acc(&mut g, *b, k, v);
                    }
                }
                Op::Mul(a, b) => {
                    for (k, &v) in gi.iter().enumerate() {
                        let (va, vb) = (self.values[*a][k], self.values[*b][k]);
                        acc(&mut g, *a, k, v * vb);
                        acc(&mut g, *b, k, v * va);
                    }
                }
                Op::Sigmoid(a) => {
                    for (k, &v) in gi.iter().enumerate() {
                        let y = self.values[id][k];
                        acc(&mut g, *a, k, v * y * (1.0 - y));
                    }
                }
                Op::Tanh(a) => {
                    for (k, &v) in gi.iter().enumerate() {
                        let y = self.values[id][k];
                        acc(&mut g, *a, k, v * (1.0 - y * y));
                    }
                }
                Op::Slice(a, start) => {
                    for (k, &v) in gi.iter().enumerate() {
                        acc(&mut g, *a, start + k, v);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        for k in 0..self.values[p].len() {
                            acc(&mut g, p, k, gi[offset + k]);
                        }
                        offset += self.values[p].len();
                    }
                }
                Op::MaxPool(xs, arg) => {
                    for (k, &v) in gi.iter().enumerate() {
                        acc(&mut g, xs[arg[k]], k, v);
                    }
                }
                Op::Dot(a, b) => {
                    for k in 0..self.values[*a].len() {
                        let (va, vb) = (self.values[*a][k], self.values[*b][k]);
                        acc(&mut g, *a, k, gi[0] * vb);
                        acc(&mut g, *b, k, gi[0] * va);
                    }
                }
                Op::Softmax(xs) => {
                    let y = &self.values[id];
                    let s: f64 = gi.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (j, &x) in xs.iter().enumerate() {
                        acc(&mut g, x, 0, y[j] * (gi[j] - s));
                    }
                }
                Op::WeightedSum(w, xs) => {
                    for (j, &x) in xs.iter().enumerate() {
                        let wj = self.values[*w][j];
                        let gw: f64 = gi.iter().zip(&self.values[x]).map(|(a, b)| a * b).sum();
                        acc(&mut g, *w, j, gw);
                        for (k, &v) in gi.iter().enumerate() {
                            acc(&mut g, x, k, wj * v);
                        }
                    }
                }
                Op::Mask(a, m) => {
                    for (k, &v) in gi.iter().enumerate() {
                        acc(&mut g, *a, k, v * m[k]);
                    }
                }
                Op::BceLogits(z, t) => {
                    let p = sigmoid(self.values[*z][0]);
                    acc(&mut g, *z, 0, gi[0] * (p - t));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub intra_warrant: bool,
    pub with_context: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { intra_warrant: false, with_context: false },
        Variant { intra_warrant: false, with_context: true },
        Variant { intra_warrant: true, with_context: false },
        Variant { intra_warrant: true, with_context: true },
    ];

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match (self.intra_warrant, self.with_context) {
            (false, false) => "Attention",
            (false, true) => "Attention w/ context",
            (true, false) => "Intra-warrant attention",
            (true, true) => "Intra-warrant attention w/ context",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.intra_warrant, self.with_context) {
            (false, false) => "attention",
            (false, true) => "attention-context",
            (true, false) => "intra-warrant",
            (true, true) => "intra-warrant-context",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                format!("unknown variant {s:?}; expected attention, attention-context, intra-warrant or intra-warrant-context")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Embedding size E.
    pub embedding: usize,
    /// LSTM hidden size d per direction.
    pub hidden: usize,
    /// Width of the additive-attention projection.
    pub attention: usize,
}

impl Dims {
    pub fn new(embedding: usize, hidden: usize) -> Dims {
        Dims {
            embedding,
            hidden,
            attention: hidden,
        }
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::new(32, 64)
    }
}

// Tensor order inside `Params`.
const EMB: usize = 0;
const SRC_FW: (usize, usize) = (1, 2);
const SRC_BW: (usize, usize) = (3, 4);
const WAR_FW: (usize, usize) = (5, 6);
const WAR_BW: (usize, usize) = (7, 8);
const ATT_H: usize = 9;
const ATT_A: usize = 10;
const ATT_V: usize = 11;
const CLS_U: usize = 12;
const CLS_B: usize = 13;

/// Token ids; id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeuralVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

pub const NEURAL_UNK: &str = "<unk>";

impl NeuralVocab {
    pub fn from_tokens(rest: impl IntoIterator<Item = String>) -> NeuralVocab {
        let mut v = NeuralVocab::default();
        v.insert(NEURAL_UNK.to_string());
        for t in rest {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, t: String) {
        if !self.ids.contains_key(&t) {
            self.ids.insert(t.clone(), self.tokens.len() as u32);
            self.tokens.push(t);
        }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub variant: Variant,
    pub dims: Dims,
    pub vocab: NeuralVocab,
    pub params: Params,
    pub seed: u64,
    pub train_embeddings: bool,
}

/// Token ids of every field the models read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub reason: Vec<u32>,
    pub claim: Vec<u32>,
    pub warrants: [Vec<u32>; 2],
    pub context: Vec<u32>,
    pub label: u8,
}

impl NeuralModel {
    /// Random initialization; the classifier starts at zero so an untrained
    /// model outputs exactly 0.5.
    pub fn new(variant: Variant, dims: Dims, vocab: NeuralVocab, seed: u64) -> NeuralModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Dims { embedding: e, hidden: d, attention: k } = dims;
        let mut tensors = vec![Tensor::uniform("embedding", vocab.len(), e, 0.5, &mut rng)];
        for enc in ["source", "warrant"] {
            for dir in ["fw", "bw"] {
                let scale = 1.0 / ((e + d) as f64).sqrt();
                tensors.push(Tensor::uniform(&format!("{enc}.{dir}.w"), 4 * d, e + d, scale, &mut rng));
                let mut b = Tensor::zeros(&format!("{enc}.{dir}.b"), 4 * d, 1);
                // forget-gate bias
                b.data[d..2 * d].iter_mut().for_each(|x| *x = 1.0);
                tensors.push(b);
            }
        }
        let scale = 1.0 / ((2 * d) as f64).sqrt();
        tensors.push(Tensor::uniform("attention.h", k, 2 * d, scale, &mut rng));
        tensors.push(Tensor::uniform("attention.a", k, 2 * d, scale, &mut rng));
        tensors.push(Tensor::uniform("attention.v", k, 1, 1.0 / (k as f64).sqrt(), &mut rng));
        tensors.push(Tensor::zeros("classifier.u", 4 * d, 1));
        tensors.push(Tensor::zeros("classifier.b", 1, 1));
        NeuralModel {
            variant,
            dims,
            vocab,
            params: Params { tensors },
            seed,
            train_embeddings: true,
        }
    }

    /// Overwrites embedding rows for tokens present in `vectors`.
    pub fn load_embeddings(&mut self, vectors: &WordVectors) -> Result<usize, NeuralError> {
        if vectors.dim != self.dims.embedding {
            return Err(NeuralError::EmbeddingDim {
                expected: self.dims.embedding,
                found: vectors.dim,
            });
        }
        let e = self.dims.embedding;
        let mut n = 0;
        for (i, tok) in self.vocab.tokens.iter().enumerate() {
            if let Some(v) = vectors.vectors.get(tok) {
                self.params.tensors[EMB].data[i * e..(i + 1) * e].copy_from_slice(v);
                n += 1;
            }
        }
        Ok(n)
    }

    /// Replaces every parameter, classifier included, with uniform noise.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut self.params.tensors {
            t.data.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        }
    }

    pub fn encode(&self, inst: &TaskInstance) -> Result<EncodedInstance, NeuralError> {
        let ids = |field: &'static str, text: &str| -> Result<Vec<u32>, NeuralError> {
            let toks: Vec<u32> = tokenize(text).iter().map(|t| self.vocab.id(t)).collect();
            if toks.is_empty() {
                return Err(NeuralError::EmptyField {
                    instance: inst.instance_id.clone(),
                    field,
                });
            }
            Ok(toks)
        };
        let context = if self.variant.with_context {
            let toks: Vec<u32> = tokenize(&inst.debate_title)
                .iter()
                .chain(tokenize(&inst.debate_info).iter())
                .map(|t| self.vocab.id(t))
                .collect();
            if toks.is_empty() {
                return Err(NeuralError::EmptyField {
                    instance: inst.instance_id.clone(),
                    field: "debate context",
                });
            }
            toks
        } else {
            Vec::new()
        };
        Ok(EncodedInstance {
            reason: ids("reason", &inst.reason)?,
            claim: ids("claim", &inst.claim)?,
            warrants: [ids("warrant0", &inst.warrant0)?, ids("warrant1", &inst.warrant1)?],
            context,
            label: inst.label,
        })
    }

    fn source_tokens(&self, x: &EncodedInstance, slot: usize) -> Vec<u32> {
        let mut src = x.context.clone();
        src.extend(&x.reason);
        src.extend(&x.claim);
        if self.variant.intra_warrant {
            src.extend(&x.warrants[1 - slot]);
        }
        src
    }
}

/// Dropout noise for one training example.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape<'_>, x: NodeId) -> NodeId {
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mask(x, mask)
    }
}

/// Nodes of interest from one forward pass.
pub struct ForwardNodes {
    pub attention_vectors: [NodeId; 2],
    pub attention_weights: [NodeId; 2],
    pub pooled: [NodeId; 2],
    pub logit: NodeId,
}

fn lstm(tape: &mut Tape<'_>, (w, b): (usize, usize), xs: &[NodeId], d: usize, reverse: bool) -> Vec<NodeId> {
    let mut h = tape.constant(vec![0.0; d]);
    let mut c = tape.constant(vec![0.0; d]);
    let bias = tape.param(b);
    let mut out = vec![0; xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        let xh = tape.concat(&[xs[t], h]);
        let z = tape.matvec(w, xh);
        let z = tape.add(z, bias);
        let i = tape.slice(z, 0, d);
        let i = tape.sigmoid(i);
        let f = tape.slice(z, d, d);
        let f = tape.sigmoid(f);
        let g = tape.slice(z, 2 * d, d);
        let g = tape.tanh(g);
        let o = tape.slice(z, 3 * d, d);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
        out[t] = h;
    }
    out
}

fn bilstm(tape: &mut Tape<'_>, fw: (usize, usize), bw: (usize, usize), xs: &[NodeId], d: usize) -> Vec<NodeId> {
    let f = lstm(tape, fw, xs, d, false);
    let b = lstm(tape, bw, xs, d, true);
    f.iter().zip(&b).map(|(&a, &b)| tape.concat(&[a, b])).collect()
}

fn embed(tape: &mut Tape<'_>, ids: &[u32], dropout: &mut Option<Dropout<'_>>) -> Vec<NodeId> {
    ids.iter()
        .map(|&id| {
            let e = tape.row(EMB, id as usize);
            match dropout {
                Some(dp) => dp.apply(tape, e),
                None => e,
            }
        })
        .collect()
}

/// Max-pooled BiLSTM encoding of the attention source.
pub fn attention_source_node(
    tape: &mut Tape<'_>,
    model: &NeuralModel,
    tokens: &[u32],
    dropout: &mut Option<Dropout<'_>>,
) -> NodeId {
    let xs = embed(tape, tokens, dropout);
    let hs = bilstm(tape, SRC_FW, SRC_BW, &xs, model.dims.hidden);
    tape.max_pool(&hs)
}

/// Attention-pooled encoding of one warrant. The warrant encoder is the
/// same for both slots.
pub fn pool_warrant_node(
    tape: &mut Tape<'_>,
    model: &NeuralModel,
    tokens: &[u32],
    attention: NodeId,
    dropout: &mut Option<Dropout<'_>>,
) -> (NodeId, NodeId) {
    let xs = embed(tape, tokens, dropout);
    let hs = bilstm(tape, WAR_FW, WAR_BW, &xs, model.dims.hidden);
    let proj_a = tape.matvec(ATT_A, attention);
    let v = tape.param(ATT_V);
    let scores: Vec<NodeId> = hs
        .iter()
        .map(|&h| {
            let ph = tape.matvec(ATT_H, h);
            let s = tape.add(ph, proj_a);
            let s = tape.tanh(s);
            tape.dot(s, v)
        })
        .collect();
    let alpha = tape.softmax(&scores);
    (tape.weighted_sum(alpha, &hs), alpha)
}

pub fn forward_nodes(
    tape: &mut Tape<'_>,
    model: &NeuralModel,
    x: &EncodedInstance,
    dropout: &mut Option<Dropout<'_>>,
) -> ForwardNodes {
    let a0 = attention_source_node(tape, model, &model.source_tokens(x, 0), dropout);
    let a1 = if model.variant.intra_warrant {
        attention_source_node(tape, model, &model.source_tokens(x, 1), dropout)
    } else {
        a0
    };
    let (p0, w0) = pool_warrant_node(tape, model, &x.warrants[0], a0, dropout);
    let (p1, w1) = pool_warrant_node(tape, model, &x.warrants[1], a1, dropout);
    let (p0, p1) = match dropout {
        Some(dp) => (dp.apply(tape, p0), dp.apply(tape, p1)),
        None => (p0, p1),
    };
    let joined = tape.concat(&[p0, p1]);
    let u = tape.param(CLS_U);
    let b = tape.param(CLS_B);
    let z = tape.dot(joined, u);
    let logit = tape.add(z, b);
    ForwardNodes {
        attention_vectors: [a0, a1],
        attention_weights: [w0, w1],
        pooled: [p0, p1],
        logit,
    }
}

/// The 2d-dimensional attention vector for `slot`.
pub fn encode_attention_source(model: &NeuralModel, inst: &TaskInstance, slot: usize) -> Result<Vec<f64>, NeuralError> {
    let x = model.encode(inst)?;
    let mut tape = Tape::new(&model.params);
    let node = attention_source_node(&mut tape, model, &model.source_tokens(&x, slot), &mut None);
    Ok(tape.value(node).to_vec())
}

/// Probability that warrant 1 is the correct one.
pub fn forward(model: &NeuralModel, inst: &TaskInstance) -> Result<f64, NeuralError> {
    let x = model.encode(inst)?;
    Ok(forward_encoded(model, &x))
}

fn forward_encoded(model: &NeuralModel, x: &EncodedInstance) -> f64 {
    let mut tape = Tape::new(&model.params);
    let nodes = forward_nodes(&mut tape, model, x, &mut None);
    sigmoid(tape.value(nodes.logit)[0])
}

/// Attention weights over each warrant's tokens.
pub fn attention_weights(model: &NeuralModel, inst: &TaskInstance) -> Result<[Vec<f64>; 2], NeuralError> {
    let x = model.encode(inst)?;
    let mut tape = Tape::new(&model.params);
    let nodes = forward_nodes(&mut tape, model, &x, &mut None);
    Ok(nodes.attention_weights.map(|n| tape.value(n).to_vec()))
}

/// Label 1 iff the forward probability is at least 0.5.
pub fn predict(model: &NeuralModel, instances: &[TaskInstance]) -> Result<Vec<u8>, NeuralError> {
    let encoded: Vec<EncodedInstance> = instances.iter().map(|i| model.encode(i)).collect::<Result<_, _>>()?;
    Ok(encoded
        .par_iter()
        .map(|x| (forward_encoded(model, x) >= 0.5) as u8)
        .collect())
}

fn loss_and_grads(
    model: &NeuralModel,
    x: &EncodedInstance,
    dropout: &mut Option<Dropout<'_>>,
    grads: &mut [Vec<f64>],
) -> f64 {
    let mut tape = Tape::new(&model.params);
    let nodes = forward_nodes(&mut tape, model, x, dropout);
    let loss = tape.bce_logits(nodes.logit, x.label as f64);
    tape.backward(loss, grads);
    tape.value(loss)[0]
}

fn loss_only(model: &NeuralModel, x: &EncodedInstance) -> f64 {
    let mut tape = Tape::new(&model.params);
    let nodes = forward_nodes(&mut tape, model, x, &mut None);
    let loss = tape.bce_logits(nodes.logit, x.label as f64);
    tape.value(loss)[0]
}

/// Relative error with a floor on the denominator, so that coordinates whose
/// gradient is essentially zero are judged by absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_SAMPLES: usize = 50;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compares backpropagated gradients of `loss` with central differences on
/// up to `samples` coordinates per tensor (all of them when the tensor is
/// smaller).
pub fn grad_check_fn<F>(params: &Params, loss: F, epsilon: f64, samples: usize, seed: u64) -> Result<GradCheck, NeuralError>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let mut grads = params.zeros_like();
    {
        let mut tape = Tape::new(params);
        let root = loss(&mut tape);
        tape.backward(root, &mut grads);
    }
    for (t, g) in params.tensors.iter().zip(&grads) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(NeuralError::NonFinite(format!("gradient of {}", t.name)));
        }
    }
    let eval = |p: &Params| {
        let mut tape = Tape::new(p);
        let root = loss(&mut tape);
        tape.value(root)[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for t in 0..params.tensors.len() {
        let n = params.tensors[t].len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, samples).into_vec()
        };
        for c in coords {
            let orig = work.tensors[t].data[c];
            work.tensors[t].data[c] = orig + epsilon;
            let up = eval(&work);
            work.tensors[t].data[c] = orig - epsilon;
            let down = eval(&work);
            work.tensors[t].data[c] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(grads[t][c], numeric);
            if !err.is_finite() {
                return Err(NeuralError::NonFinite(format!("finite difference of {}", params.tensors[t].name)));
            }
            result.checked += 1;
            if err > result.max_relative_error {
                result.max_relative_error = err;
                result.worst_tensor = params.tensors[t].name.clone();
            }
        }
    }
    Ok(result)
}

/// Gradient check of the classification loss on one instance.
pub fn grad_check(model: &NeuralModel, inst: &TaskInstance, epsilon: f64) -> Result<GradCheck, NeuralError> {
    let x = model.encode(inst)?;
    // The closure replays the forward pass against whichever params the tape holds.
    grad_check_fn(
        &model.params,
        |tape| {
            let nodes = forward_nodes(tape, model, &x, &mut None);
            tape.bce_logits(nodes.logit, x.label as f64)
        },
        epsilon,
        GRAD_CHECK_SAMPLES,
        model.seed,
    )
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Probability of zeroing a unit; kept units are scaled by `1 / (1 - rate)`.
    pub dropout_rate: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub runs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub dims: Dims,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dropout_rate: 0.9,
            patience_epochs: 5,
            max_epochs: 50,
            runs: 3,
            seed: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            dims: Dims::default(),
            train_embeddings: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::BadConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if self.patience_epochs == 0 {
            return bad("patience_epochs must be at least 1");
        }
        if self.max_epochs == 0 || self.runs == 0 || self.batch_size == 0 {
            return bad("max_epochs, runs and batch_size must be positive");
        }
        if self.dims.embedding == 0 || self.dims.hidden == 0 || self.dims.attention == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("learning rate must be positive and ADAM decays in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
}

pub fn write_history_csv<W: Write>(out: &mut W, history: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,dev_acc")?;
    for h in history {
        writeln!(out, "{},{:.6},{:.6}", h.epoch, h.train_loss, h.dev_acc)?;
    }
    Ok(())
}

/// Every instance followed by its warrant-swapped copy.
pub fn augment(train: &[TaskInstance]) -> Vec<TaskInstance> {
    train.iter().flat_map(|i| [i.clone(), i.permuted()]).collect()
}

/// Vocabulary from the training split, in order of first appearance. With
/// pretrained vectors, tokens of any split that have a vector are added too.
pub fn build_vocab(split: &DataSplit, variant: Variant, pretrained: Option<&WordVectors>) -> NeuralVocab {
    let fields = |i: &TaskInstance| {
        let mut v = vec![i.reason.clone(), i.claim.clone(), i.warrant0.clone(), i.warrant1.clone()];
        if variant.with_context {
            v.push(i.debate_title.clone());
            v.push(i.debate_info.clone());
        }
        v
    };
    let mut tokens: Vec<String> = split.train.iter().flat_map(fields).flat_map(|f| tokenize(&f)).collect();
    if let Some(wv) = pretrained {
        tokens.extend(
            split
                .dev
                .iter()
                .chain(&split.test)
                .flat_map(fields)
                .flat_map(|f| tokenize(&f))
                .filter(|t| wv.vectors.contains_key(t)),
        );
    }
    NeuralVocab::from_tokens(tokens)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &Params) -> Adam {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &[Vec<f64>], cfg: &TrainConfig, frozen: &[usize]) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (t, tensor) in params.tensors.iter_mut().enumerate() {
            if frozen.contains(&t) {
                continue;
            }
            for (k, x) in tensor.data.iter_mut().enumerate() {
                let g = grads[t][k];
                let m = &mut self.m[t][k];
                let v = &mut self.v[t][k];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *x -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

pub fn accuracy_of(model: &NeuralModel, encoded: &[EncodedInstance]) -> f64 {
    let correct = encoded
        .par_iter()
        .filter(|x| ((forward_encoded(model, x) >= 0.5) as u8) == x.label)
        .count();
    correct as f64 / encoded.len() as f64
}

/// One training run: ADAM on the doubled training set with patience-based
/// early stopping on dev accuracy. Returns the best-dev parameters and the
/// per-epoch history.
pub fn train(
    split: &DataSplit,
    config: &TrainConfig,
    variant: Variant,
    pretrained: Option<&WordVectors>,
) -> Result<(NeuralModel, Vec<EpochLog>), NeuralError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(NeuralError::EmptySplit("train"));
    }
    if split.dev.is_empty() {
        return Err(NeuralError::EmptySplit("dev"));
    }
    let vocab = build_vocab(split, variant, pretrained);
    let mut model = NeuralModel::new(variant, config.dims, vocab, config.seed);
    model.train_embeddings = config.train_embeddings;
    if let Some(wv) = pretrained {
        model.load_embeddings(wv)?;
    }
    let train_set: Vec<EncodedInstance> = augment(&split.train)
        .iter()
        .map(|i| model.encode(i))
        .collect::<Result<_, _>>()?;
    let dev_set: Vec<EncodedInstance> = split.dev.iter().map(|i| model.encode(i)).collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut adam = Adam::new(&model.params);
    let frozen: Vec<usize> = if config.train_embeddings { vec![] } else { vec![EMB] };
    let mut history = Vec::new();
    let mut best: Option<(f64, Params)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let mut dropout = Some(Dropout {
                    rate: config.dropout_rate,
                    rng: &mut rng,
                });
                total += loss_and_grads(&model, &train_set[i], &mut dropout, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.update(&mut model.params, &grads, config, &frozen);
        }
        let train_loss = total / train_set.len() as f64;
        if !train_loss.is_finite() || !model.params.all_finite() {
            return Err(NeuralError::Diverged { epoch, history });
        }
        let dev_acc = accuracy_of(&model, &dev_set);
        history.push(EpochLog {
            epoch,
            train_loss,
            dev_acc,
        });
        if best.as_ref().map_or(true, |(b, _)| dev_acc > *b) {
            best = Some((dev_acc, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience_epochs {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// `config.runs` independent runs; run `r` uses seed `derive_seed(seed, r)`.
pub fn train_runs(
    split: &DataSplit,
    config: &TrainConfig,
    variant: Variant,
    pretrained: Option<&WordVectors>,
) -> Result<Vec<(NeuralModel, Vec<EpochLog>)>, NeuralError> {
    (0..config.runs as u64)
        .map(|r| {
            let cfg = TrainConfig {
                seed: derive_seed(config.seed, r),
                ..config.clone()
            };
            train(split, &cfg, variant, pretrained)
        })
        .collect()
}

/// Mean training loss on `instances` without dropout.
pub fn mean_loss(model: &NeuralModel, instances: &[TaskInstance]) -> Result<f64, NeuralError> {
    let encoded: Vec<EncodedInstance> = instances.iter().map(|i| model.encode(i)).collect::<Result<_, _>>()?;
    Ok(encoded.iter().map(|x| loss_only(model, x)).sum::<f64>() / encoded.len() as f64)
}

// ---------------------------------------------------------------------------
// Params file: 8-byte magic, u64 LE manifest length, JSON manifest, then
// every tensor's values as f64 LE in manifest order.

const PARAMS_MAGIC: &[u8; 8] = b"ARCTNN01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    variant: Variant,
    dims: Dims,
    seed: u64,
    train_embeddings: bool,
    vocab: Vec<String>,
    tensors: Vec<Tensor>,
}

impl NeuralModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            version: 1,
            variant: self.variant,
            dims: self.dims,
            seed: self.seed,
            train_embeddings: self.train_embeddings,
            vocab: self.vocab.tokens.clone(),
            tensors: self.params.tensors.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.tensors.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<NeuralModel, NeuralError> {
        let fmt_err = |m: &str| NeuralError::Format(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| fmt_err("truncated header"))?;
        if &magic != PARAMS_MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let mut len = [0u8; 8];
        bytes.read_exact(&mut len).map_err(|_| fmt_err("truncated header"))?;
        let len = u64::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(fmt_err("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[..len]).map_err(|e| NeuralError::Format(e.to_string()))?;
        bytes = &bytes[len..];
        if manifest.version != 1 {
            return Err(fmt_err("unsupported version"));
        }
        let mut tensors = manifest.tensors;
        for t in &mut tensors {
            let n = t.rows * t.cols;
            if bytes.len() < 8 * n {
                return Err(fmt_err("truncated tensor data"));
            }
            t.data = bytes[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            bytes = &bytes[8 * n..];
        }
        if !bytes.is_empty() {
            return Err(fmt_err("trailing bytes"));
        }
        let model = NeuralModel {
            variant: manifest.variant,
            dims: manifest.dims,
            vocab: NeuralVocab::from_tokens(manifest.vocab.into_iter().skip(1)),
            params: Params { tensors },
            seed: manifest.seed,
            train_embeddings: manifest.train_embeddings,
        };
        let expected = NeuralModel::new(model.variant, model.dims, model.vocab.clone(), 0);
        let shapes_match = expected.params.tensors.len() == model.params.tensors.len()
            && expected
                .params
                .tensors
                .iter()
                .zip(&model.params.tensors)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols);
        if !shapes_match {
            return Err(fmt_err("tensor shapes do not match the manifest dimensions"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        fs::write(path, self.to_bytes()).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<NeuralModel, NeuralError> {
        let bytes = fs::read(path).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        NeuralModel::from_bytes(&bytes)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn instance(id: &str, w0: &str, w1: &str, label: u8) -> TaskInstance {
        TaskInstance {
            instance_id: id.into(),
            warrant0: w0.into(),
            warrant1: w1.into(),
            label,
            reason: format!("reason {id}"),
            claim: "the claim".into(),
            debate_title: "a debate".into(),
            debate_info: "about things".into(),
            debate_id: "d".into(),
        }
    }

    fn small_model(variant: Variant) -> (NeuralModel, TaskInstance) {
        let inst = instance("x", "milk is healthy", "milk is harmful", 1);
        let split = DataSplit {
            train: vec![inst.clone()],
            dev: vec![inst.clone()],
            test: vec![],
        };
        let vocab = build_vocab(&split, variant, None);
        (NeuralModel::new(variant, Dims::new(8, 4), vocab, 3), inst)
    }

    #[test]
    fn zero_classifier_gives_one_half() {
        for v in Variant::ALL {
            let (m, inst) = small_model(v);
            assert_eq!(forward(&m, &inst).unwrap(), 0.5);
            assert_eq!(predict(&m, &[inst]).unwrap(), vec![1]);
        }
    }

    #[test]
    fn attention_vectors_by_variant() {
        let (mut m, inst) = small_model(Variant { intra_warrant: false, with_context: false });
        m.randomize(1, 0.5);
        let a0 = encode_attention_source(&m, &inst, 0).unwrap();
        assert_eq!(a0.len(), 8);
        assert_eq!(a0, encode_attention_source(&m, &inst, 1).unwrap());

        let (mut m, inst) = small_model(Variant { intra_warrant: true, with_context: false });
        m.randomize(1, 0.5);
        let a0 = encode_attention_source(&m, &inst, 0).unwrap();
        let a1 = encode_attention_source(&m, &inst, 1).unwrap();
        assert_eq!(a0.len(), 8);
        assert_ne!(a0, a1);
    }

    #[test]
    fn attention_weights_sum_to_one_and_output_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let v = Variant::ALL[trial % 4];
            let (mut m, inst) = small_model(v);
            m.randomize(rng.gen(), 1.0);
            let p = forward(&m, &inst).unwrap();
            assert!(p > 0.0 && p < 1.0);
            for w in attention_weights(&m, &inst).unwrap() {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_fields_are_rejected() {
        let (m, mut inst) = small_model(Variant::ALL[0]);
        inst.warrant1 = " ".into();
        assert!(matches!(forward(&m, &inst), Err(NeuralError::EmptyField { field: "warrant1", .. })));
    }

    #[test]
    fn linear_network_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = Params {
            tensors: vec![
                Tensor::uniform("w", 3, 5, 1.0, &mut rng),
                Tensor::uniform("u", 3, 1, 1.0, &mut rng),
            ],
        };
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.5).collect();
        let check = grad_check_fn(
            &params,
            |tape| {
                let xn = tape.constant(x.clone());
                let h = tape.matvec(0, xn);
                let u = tape.param(1);
                tape.dot(h, u)
            },
            1e-4,
            50,
            0,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-8, "{check:?}");
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for v in Variant::ALL {
            let (mut m, inst) = small_model(v);
            m.randomize(11, 0.5);
            let check = grad_check(&m, &inst, 1e-4).unwrap();
            assert!(check.max_relative_error < 1e-4, "{v}: {check:?}");
        }
    }

    #[test]
    fn one_token_fields_have_finite_gradients() {
        let (mut m, _) = small_model(Variant::ALL[3]);
        m.randomize(2, 0.5);
        let inst = TaskInstance {
            reason: "x".into(),
            claim: "y".into(),
            warrant0: "a".into(),
            warrant1: "b".into(),
            debate_title: "t".into(),
            debate_info: String::new(),
            ..instance("one", "a", "b", 0)
        };
        assert!(grad_check(&m, &inst, 1e-4).is_ok());
    }

    #[test]
    fn shared_warrant_encoder_is_slot_invariant() {
        let (mut m, inst) = small_model(Variant::ALL[2]);
        m.randomize(5, 0.5);
        let x = m.encode(&inst).unwrap();
        let mut tape = Tape::new(&m.params);
        let a = tape.constant(vec![0.3; 8]);
        let (p_first, _) = pool_warrant_node(&mut tape, &m, &x.warrants[0], a, &mut None);
        let swapped = m.encode(&inst.permuted()).unwrap();
        let (p_second, _) = pool_warrant_node(&mut tape, &m, &swapped.warrants[1], a, &mut None);
        assert_eq!(tape.value(p_first), tape.value(p_second));
    }

    #[test]
    fn params_file_round_trip() {
        let (mut m, inst) = small_model(Variant::ALL[3]);
        m.randomize(8, 0.5);
        let bytes = m.to_bytes();
        let back = NeuralModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(forward(&back, &inst).unwrap(), forward(&m, &inst).unwrap());
        assert!(NeuralModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(NeuralModel::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("lstm".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            dropout_rate: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience_epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn augmentation_doubles_training_data() {
        let train: Vec<_> = (0..7).map(|i| instance(&format!("i{i}"), "a b", "c d", (i % 2) as u8)).collect();
        let aug = augment(&train);
        assert_eq!(aug.len(), 14);
        assert_eq!(aug[1].label, 1 - aug[0].label);
        assert_eq!(aug[1].warrant0, aug[0].warrant1);
    }
}
