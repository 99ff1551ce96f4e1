//! Toy single-head transformer classifier with hand-written backward pass.
//!
//! Pipeline per sequence of `seq_len` tokens:
//!
//! ```text
//! X  = E[tokens]                          (seq_len x dim)
//! A  = softmax(X Wq (X Wk)^T / sqrt(dim)) X Wv
//! H  = X + A Wo
//! Y  = H + relu(H W1 + b1) W2 + b2
//! logits = mean_rows(Y) Wc + bc
//! ```
//!
//! No layer norm, no positional embedding, no dropout.

mod checkpoint;
mod data;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{make_synthetic_dataset, majority_label, Batch, Dataset};

pub const EMBEDDING: &str = "embedding";
pub const WQ: &str = "wq";
pub const WK: &str = "wk";
pub const WV: &str = "wv";
pub const WO: &str = "wo";
pub const FFN_IN: &str = "ffn_in";
pub const FFN_OUT: &str = "ffn_out";
pub const CLASSIFIER: &str = "classifier";

/// Tensor names in parameter order.
pub const TENSOR_NAMES: [&str; 8] = [EMBEDDING, WQ, WK, WV, WO, FFN_IN, FFN_OUT, CLASSIFIER];

const I_EMB: usize = 0;
const I_WQ: usize = 1;
const I_WK: usize = 2;
const I_WV: usize = 3;
const I_WO: usize = 4;
const I_FFN_IN: usize = 5;
const I_FFN_OUT: usize = 6;
const I_CLS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Embedding,
    Attention,
    Ffn,
    Classifier,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Embedding => "embedding",
            Role::Attention => "attention",
            Role::Ffn => "ffn",
            Role::Classifier => "classifier",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "embedding" => Role::Embedding,
            "attention" => Role::Attention,
            "ffn" => Role::Ffn,
            "classifier" => Role::Classifier,
            _ => return None,
        })
    }

    pub fn default_prunable(self) -> bool {
        matches!(self, Role::Attention | Role::Ffn)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub matrix: Matrix,
    pub role: Role,
    pub prunable: bool,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub dim: usize,
    pub ffn_hidden: usize,
    pub classes: usize,
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: 8,
            dim: 16,
            ffn_hidden: 64,
            classes: 8,
            seq_len: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab", self.vocab),
            ("dim", self.dim),
            ("ffn_hidden", self.ffn_hidden),
            ("classes", self.classes),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model dimension `{name}` must be positive")));
        }
        if self.classes < 2 || self.vocab < self.classes {
            return Err(Error::InvalidArgument(format!(
                "need vocab >= classes >= 2, got vocab {} classes {}",
                self.vocab, self.classes
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of the named tensor under this config.
    pub fn tensor_shape(&self, name: &str) -> Option<(usize, usize)> {
        let i = TENSOR_NAMES.iter().position(|n| *n == name)?;
        let (r, c, _, _) = self.expected_shapes()[i];
        Some((r, c))
    }

    fn expected_shapes(&self) -> [(usize, usize, Role, Option<usize>); 8] {
        let (v, d, f, c) = (self.vocab, self.dim, self.ffn_hidden, self.classes);
        [
            (v, d, Role::Embedding, None),
            (d, d, Role::Attention, None),
            (d, d, Role::Attention, None),
            (d, d, Role::Attention, None),
            (d, d, Role::Attention, None),
            (d, f, Role::Ffn, Some(f)),
            (f, d, Role::Ffn, Some(d)),
            (d, c, Role::Classifier, Some(c)),
        ]
    }
}

/// Named model tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<WeightTensor>,
}

/// Initializes every weight from a zero-mean normal scaled by fan-in.
/// Biases start at zero.
pub fn build_model(config: ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let tensors = TENSOR_NAMES
        .iter()
        .zip(config.expected_shapes())
        .map(|(&name, (rows, cols, role, bias))| {
            let std = match role {
                Role::Embedding => 1.0,
                _ if name == FFN_IN => (2.0 / rows as f64).sqrt(),
                _ => (1.0 / rows as f64).sqrt(),
            };
            WeightTensor {
                name: name.to_string(),
                matrix: Matrix::random_normal(rows, cols, std, rng),
                role,
                prunable: role.default_prunable(),
                bias: bias.map(|n| vec![0.0; n]),
            }
        })
        .collect();
    Ok(ModelParams { config, tensors })
}

impl ModelParams {
    /// Reassembles parameters from loaded tensors, checking names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<WeightTensor>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tensors, got {}",
                TENSOR_NAMES.len(),
                tensors.len()
            )));
        }
        for ((t, &name), (rows, cols, _, bias)) in tensors.iter().zip(&TENSOR_NAMES).zip(config.expected_shapes()) {
            if t.name != name {
                return Err(Error::InvalidArgument(format!("expected tensor `{name}`, found `{}`", t.name)));
            }
            let bias_ok = t.bias.as_ref().map(Vec::len) == bias;
            if t.matrix.rows() != rows || t.matrix.cols() != cols || !bias_ok {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{name}` has shape {} but the config needs {rows}x{cols}",
                    t.matrix.shape()
                )));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&WeightTensor> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut WeightTensor> {
        let i = self.index_of(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn set_prunable(&mut self, name: &str, prunable: bool) -> Result<()> {
        self.get_mut(name)?.prunable = prunable;
        Ok(())
    }

    pub fn prunable_names(&self) -> Vec<String> {
        self.tensors.iter().filter(|t| t.prunable).map(|t| t.name.clone()).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.tensors.iter().map(|t| t.matrix.len()).sum()
    }

    /// Hash of every parameter bit pattern; used to detect stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.tensors {
            for x in t.matrix.as_slice() {
                x.to_bits().hash(&mut h);
            }
            if let Some(b) = &t.bias {
                for x in b {
                    x.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Activations kept from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    tokens: Vec<usize>,
    batch: usize,
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, one `seq_len x seq_len` matrix per sequence.
    probs: Vec<Matrix>,
    attn: Matrix,
    h: Matrix,
    z1: Matrix,
    relu: Matrix,
    pooled: Matrix,
}

impl ForwardCache {
    pub fn attention_probs(&self) -> &[Matrix] {
        &self.probs
    }
}

fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        for (x, b) in m.row_mut(i).iter_mut().zip(bias) {
            *x += b;
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    out
}

pub fn forward(params: &ModelParams, batch: &Batch) -> Result<(Matrix, ForwardCache)> {
    let cfg = &params.config;
    batch.validate(cfg.vocab, cfg.classes, cfg.seq_len)?;
    let t = &params.tensors;
    let (n, len, dim) = (batch.len(), cfg.seq_len, cfg.dim);

    let emb = &t[I_EMB].matrix;
    let mut x = Matrix::zeros(n * len, dim);
    for (r, &tok) in batch.token_ids.iter().enumerate() {
        x.row_mut(r).copy_from_slice(emb.row(tok));
    }

    let q = matmul(&x, &t[I_WQ].matrix)?;
    let k = matmul(&x, &t[I_WK].matrix)?;
    let v = matmul(&x, &t[I_WV].matrix)?;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut probs = Vec::with_capacity(n);
    let mut attn = Matrix::zeros(n * len, dim);
    for s in 0..n {
        let (lo, hi) = (s * len, (s + 1) * len);
        let qs = q.row_block(lo, hi);
        let ks = k.row_block(lo, hi);
        let mut scores = matmul_nt(&qs, &ks)?.scale(scale);
        for i in 0..len {
            softmax_row_in_place(scores.row_mut(i));
        }
        attn.set_row_block(lo, &matmul(&scores, &v.row_block(lo, hi))?);
        probs.push(scores);
    }

    let mut h = matmul(&attn, &t[I_WO].matrix)?;
    h.add_assign(&x)?;

    let mut z1 = matmul(&h, &t[I_FFN_IN].matrix)?;
    add_bias(&mut z1, t[I_FFN_IN].bias.as_deref().unwrap_or(&[]));
    let relu = z1.map(|z| if z > 0.0 { z } else { 0.0 });
    let mut y = matmul(&relu, &t[I_FFN_OUT].matrix)?;
    add_bias(&mut y, t[I_FFN_OUT].bias.as_deref().unwrap_or(&[]));
    y.add_assign(&h)?;

    let mut pooled = Matrix::zeros(n, dim);
    let inv_len = 1.0 / len as f64;
    for s in 0..n {
        let out = pooled.row_mut(s);
        for r in s * len..(s + 1) * len {
            for (o, val) in out.iter_mut().zip(y.row(r)) {
                *o += val;
            }
        }
        for o in out.iter_mut() {
            *o *= inv_len;
        }
    }

    let mut logits = matmul(&pooled, &t[I_CLS].matrix)?;
    add_bias(&mut logits, t[I_CLS].bias.as_deref().unwrap_or(&[]));

    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        tokens: batch.token_ids.clone(),
        batch: n,
        x,
        q,
        k,
        v,
        probs,
        attn,
        h,
        z1,
        relu,
        pooled,
    };
    Ok((logits, cache))
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        softmax_row_in_place(p.row_mut(i));
    }
    p
}

/// Mean softmax cross-entropy.
pub fn loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::OutOfRange(format!("label {bad} with {} classes", logits.cols())));
    }
    Ok(())
}

/// Gradient of one tensor (and its bias, if any).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrad {
    pub name: String,
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

/// Gradients in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<TensorGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            tensors: params
                .tensors
                .iter()
                .map(|t| TensorGrad {
                    name: t.name.clone(),
                    weight: Matrix::zeros(t.matrix.rows(), t.matrix.cols()),
                    bias: t.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorGrad> {
        self.tensors.iter().find(|g| g.name == name)
    }
}

/// Gradient of the mean cross-entropy with respect to every weight and bias.
pub fn backward(params: &ModelParams, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
    if cache.fingerprint != params.fingerprint() || labels.len() != cache.batch {
        return Err(Error::StaleCache);
    }
    let cfg = &params.config;
    let t = &params.tensors;
    let (n, len, dim) = (cache.batch, cfg.seq_len, cfg.dim);

    // d loss / d logits = (softmax - onehot) / n
    let logits = {
        let mut l = matmul(&cache.pooled, &t[I_CLS].matrix)?;
        add_bias(&mut l, t[I_CLS].bias.as_deref().unwrap_or(&[]));
        l
    };
    check_labels(&logits, labels)?;
    let mut dlogits = softmax_rows(&logits);
    for (i, &y) in labels.iter().enumerate() {
        dlogits[(i, y)] -= 1.0;
    }
    let dlogits = dlogits.scale(1.0 / n as f64);

    let mut grads = Gradients::zeros_like(params);
    grads.tensors[I_CLS].weight = matmul_tn(&cache.pooled, &dlogits)?;
    grads.tensors[I_CLS].bias = Some(column_sums(&dlogits));
    let dpooled = matmul_nt(&dlogits, &t[I_CLS].matrix)?;

    // mean pool: every position of sequence s receives dpooled[s] / len
    let inv_len = 1.0 / len as f64;
    let mut dy = Matrix::zeros(n * len, dim);
    for s in 0..n {
        let src: Vec<f64> = dpooled.row(s).iter().map(|g| g * inv_len).collect();
        for r in s * len..(s + 1) * len {
            dy.row_mut(r).copy_from_slice(&src);
        }
    }

    grads.tensors[I_FFN_OUT].weight = matmul_tn(&cache.relu, &dy)?;
    grads.tensors[I_FFN_OUT].bias = Some(column_sums(&dy));
    let mut dz1 = matmul_nt(&dy, &t[I_FFN_OUT].matrix)?;
    for (g, &z) in dz1.as_mut_slice().iter_mut().zip(cache.z1.as_slice()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    grads.tensors[I_FFN_IN].weight = matmul_tn(&cache.h, &dz1)?;
    grads.tensors[I_FFN_IN].bias = Some(column_sums(&dz1));
    let mut dh = matmul_nt(&dz1, &t[I_FFN_IN].matrix)?;
    dh.add_assign(&dy)?;

    grads.tensors[I_WO].weight = matmul_tn(&cache.attn, &dh)?;
    let dattn = matmul_nt(&dh, &t[I_WO].matrix)?;

    let scale = 1.0 / (dim as f64).sqrt();
    let mut dq = Matrix::zeros(n * len, dim);
    let mut dk = Matrix::zeros(n * len, dim);
    let mut dv = Matrix::zeros(n * len, dim);
    for s in 0..n {
        let (lo, hi) = (s * len, (s + 1) * len);
        let p = &cache.probs[s];
        let da = dattn.row_block(lo, hi);
        let vs = cache.v.row_block(lo, hi);
        dv.set_row_block(lo, &matmul_tn(p, &da)?);
        let dp = matmul_nt(&da, &vs)?;
        let mut ds = Matrix::zeros(len, len);
        for i in 0..len {
            let (pr, dpr) = (p.row(i), dp.row(i));
            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for (j, out) in ds.row_mut(i).iter_mut().enumerate() {
                *out = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        dq.set_row_block(lo, &matmul(&ds, &cache.k.row_block(lo, hi))?);
        dk.set_row_block(lo, &matmul_tn(&ds, &cache.q.row_block(lo, hi))?);
    }
    grads.tensors[I_WQ].weight = matmul_tn(&cache.x, &dq)?;
    grads.tensors[I_WK].weight = matmul_tn(&cache.x, &dk)?;
    grads.tensors[I_WV].weight = matmul_tn(&cache.x, &dv)?;

    let mut dx = dh;
    dx.add_assign(&matmul_nt(&dq, &t[I_WQ].matrix)?)?;
    dx.add_assign(&matmul_nt(&dk, &t[I_WK].matrix)?)?;
    dx.add_assign(&matmul_nt(&dv, &t[I_WV].matrix)?)?;

    let demb = &mut grads.tensors[I_EMB].weight;
    for (r, &tok) in cache.tokens.iter().enumerate() {
        for (o, g) in demb.row_mut(tok).iter_mut().zip(dx.row(r)) {
            *o += g;
        }
    }
    Ok(grads)
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let chunk = 256;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for idx in indices.chunks(chunk) {
        let batch = dataset.batch(idx);
        let (logits, _) = forward(params, &batch)?;
        correct += batch
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(logits.row(i)) == y)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests;
