//! Decoder-only transformer blocks: RMSNorm, rotary embeddings, causal
//! multi-head attention, and a GeLU MLP.
//!
//! The same three block types serve as the pre-loop stack, the loop-shared
//! core, and the post-loop stack. Each block can run over a whole sequence
//! ([`run_block`]) or one row at a time against a key/value cache
//! ([`BlockCache::step`]); both paths share the per-row kernels so they agree
//! exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{dot, softmax, vec_mat, vec_mat_into, Matrix};

pub const RMSNORM_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;
pub const MLP_EXPANSION: usize = 4;
pub const INIT_STD: f64 = 0.02;

/// Weights of a single pre-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub attn_norm: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Vec<f64>,
    /// d × 4d
    pub w_up: Matrix,
    /// 4d × d
    pub w_down: Matrix,
}

impl LayerWeights {
    pub fn random<R: Rng>(d_model: usize, rng: &mut R) -> Self {
        let hidden = MLP_EXPANSION * d_model;
        Self {
            attn_norm: vec![1.0; d_model],
            wq: gaussian(d_model, d_model, rng),
            wk: gaussian(d_model, d_model, rng),
            wv: gaussian(d_model, d_model, rng),
            wo: gaussian(d_model, d_model, rng),
            mlp_norm: vec![1.0; d_model],
            w_up: gaussian(d_model, hidden, rng),
            w_down: gaussian(hidden, d_model, rng),
        }
    }

    fn validate(&self, d_model: usize) -> Result<()> {
        let hidden = MLP_EXPANSION * d_model;
        let checks = [
            ("wq", self.wq.shape(), (d_model, d_model)),
            ("wk", self.wk.shape(), (d_model, d_model)),
            ("wv", self.wv.shape(), (d_model, d_model)),
            ("wo", self.wo.shape(), (d_model, d_model)),
            ("w_up", self.w_up.shape(), (d_model, hidden)),
            ("w_down", self.w_down.shape(), (hidden, d_model)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape_err(
                    "LayerWeights",
                    format!("{name} {want:?}"),
                    format!("{got:?}"),
                ));
            }
        }
        if self.attn_norm.len() != d_model || self.mlp_norm.len() != d_model {
            return Err(shape_err(
                "LayerWeights",
                "norm gains of length d",
                self.attn_norm.len(),
            ));
        }
        Ok(())
    }
}

/// A stack of layers sharing a model width and head count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub d_model: usize,
    pub n_heads: usize,
    pub layers: Vec<LayerWeights>,
}

impl BlockWeights {
    pub fn random<R: Rng>(n_layers: usize, d_model: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(d_model, n_heads)?;
        let layers = (0..n_layers).map(|_| LayerWeights::random(d_model, rng)).collect();
        Ok(Self {
            d_model,
            n_heads,
            layers,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        check_heads(self.d_model, self.n_heads)?;
        self.layers.iter().try_for_each(|l| l.validate(self.d_model))
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        self.layers.len() * (4 * d * d + 2 * MLP_EXPANSION * d * d + 2 * d)
    }
}

fn check_heads(d_model: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::HeadSplit {
            d_model,
            heads: n_heads,
        });
    }
    let head_dim = d_model / n_heads;
    if !head_dim.is_multiple_of(2) {
        return Err(Error::OddHeadDim(head_dim));
    }
    Ok(())
}

/// Untied input embedding and output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWeights {
    /// vocab × d
    pub input: Matrix,
    /// d × vocab
    pub output: Matrix,
}

impl EmbeddingWeights {
    pub fn random<R: Rng>(vocab: usize, d_model: usize, rng: &mut R) -> Self {
        Self {
            input: gaussian(vocab, d_model, rng),
            output: gaussian(d_model, vocab, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.input.rows()
    }

    /// Raw lookup, no scaling.
    pub fn embed(&self, tokens: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(tokens.len(), self.input.cols());
        for (i, &t) in tokens.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.embed_one(t)?);
        }
        Ok(out)
    }

    pub fn embed_one(&self, token: usize) -> Result<&[f64]> {
        if token >= self.vocab() {
            return Err(Error::Token {
                token,
                vocab: self.vocab(),
            });
        }
        Ok(self.input.row(token))
    }

    pub fn logits(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.output.rows() {
            return Err(shape_err("logits", self.output.rows(), row.len()));
        }
        Ok(vec_mat(row, &self.output))
    }
}

pub(crate) fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let normal = Normal::new(0.0, INIT_STD).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Row-wise RMS normalization: `x / sqrt(mean(x²) + eps) * gain`.
pub fn rmsnorm(x: &Matrix, gain: &[f64]) -> Result<Matrix> {
    if gain.len() != x.cols() {
        return Err(shape_err("rmsnorm", x.cols(), gain.len()));
    }
    let mut out = x.clone();
    for i in 0..x.rows() {
        rmsnorm_row(x.row(i), gain, out.row_mut(i));
    }
    Ok(out)
}

pub(crate) fn rmsnorm_row(x: &[f64], gain: &[f64], out: &mut [f64]) {
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (mean_sq + RMSNORM_EPS).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
}

/// Applies rotary embeddings to every head of every row.
///
/// Pairs `(2i, 2i+1)` inside each head are rotated by `pos · base^(-2i/d_head)`.
pub fn rope_apply(x: &Matrix, positions: &[usize], head_dim: usize) -> Result<Matrix> {
    if positions.len() != x.rows() {
        return Err(shape_err("rope_apply", x.rows(), positions.len()));
    }
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return Err(Error::OddHeadDim(head_dim));
    }
    if !x.cols().is_multiple_of(head_dim) {
        return Err(shape_err(
            "rope_apply",
            format!("cols divisible by {head_dim}"),
            x.cols(),
        ));
    }
    let mut out = x.clone();
    for (i, &pos) in positions.iter().enumerate() {
        rope_row(out.row_mut(i), pos, head_dim);
    }
    Ok(out)
}

pub(crate) fn rope_row(row: &mut [f64], position: usize, head_dim: usize) {
    let pos = position as f64;
    for head in row.chunks_mut(head_dim) {
        for (i, pair) in head.chunks_mut(2).enumerate() {
            let theta = pos * ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64);
            let (sin, cos) = theta.sin_cos();
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * cos - b * sin;
            pair[1] = a * sin + b * cos;
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Attention of one query row against the first `n_keys` cached keys.
///
/// `probs`, when given, receives each head's softmax weights.
fn attend_row(
    q: &[f64],
    keys: &Matrix,
    values: &Matrix,
    n_keys: usize,
    n_heads: usize,
    out: &mut [f64],
    mut probs: Option<&mut [Vec<f64>]>,
) {
    let head_dim = q.len() / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    out.fill(0.0);
    for h in 0..n_heads {
        let span = h * head_dim..(h + 1) * head_dim;
        let scores: Vec<f64> = (0..n_keys)
            .map(|k| dot(&q[span.clone()], &keys.row(k)[span.clone()]) * scale)
            .collect();
        let p = softmax(&scores);
        let dst = &mut out[span.clone()];
        for (k, &pk) in p.iter().enumerate() {
            for (o, &v) in dst.iter_mut().zip(&values.row(k)[span.clone()]) {
                *o += pk * v;
            }
        }
        if let Some(sink) = probs.as_deref_mut() {
            sink[h] = p;
        }
    }
}

/// Per-head attention matrices of one layer: `[head]` → `L × L`.
pub type LayerCapture = Vec<Matrix>;

/// Multi-head causal self-attention over an already-normalized input.
///
/// Query `q` attends keys `0..=q`. When `capture` is given it receives one
/// lower-triangular `L × L` probability matrix per head.
pub fn causal_attention(
    x: &Matrix,
    layer: &LayerWeights,
    n_heads: usize,
    positions: &[usize],
    capture: Option<&mut LayerCapture>,
) -> Result<Matrix> {
    let d = layer.wq.rows();
    if x.cols() != d {
        return Err(shape_err("causal_attention", d, x.cols()));
    }
    check_heads(d, n_heads)?;
    let head_dim = d / n_heads;
    let q = rope_apply(&x.matmul(&layer.wq)?, positions, head_dim)?;
    let k = rope_apply(&x.matmul(&layer.wk)?, positions, head_dim)?;
    let v = x.matmul(&layer.wv)?;

    let n = x.rows();
    let mut mixed = Matrix::zeros(n, d);
    let mut probs = vec![Vec::new(); n_heads];
    let mut capture = capture.map(|c| {
        *c = vec![Matrix::zeros(n, n); n_heads];
        c
    });
    for i in 0..n {
        let want = capture.is_some();
        attend_row(
            q.row(i),
            &k,
            &v,
            i + 1,
            n_heads,
            mixed.row_mut(i),
            want.then_some(probs.as_mut_slice()),
        );
        if let Some(c) = capture.as_deref_mut() {
            for (h, p) in probs.iter().enumerate() {
                c[h].row_mut(i)[..=i].copy_from_slice(p);
            }
        }
    }
    mixed.matmul(&layer.wo)
}

fn mlp_row(x: &[f64], layer: &LayerWeights) -> Vec<f64> {
    let mut hidden = vec_mat(x, &layer.w_up);
    hidden.iter_mut().for_each(|v| *v = gelu(*v));
    vec_mat(&hidden, &layer.w_down)
}

/// Per-layer capture of a block: `[layer][head]`.
pub type BlockCapture = Vec<LayerCapture>;

/// Runs a whole block: `h += attn(norm(h)); h += mlp(norm(h))` per layer.
pub fn run_block(
    h: &Matrix,
    block: &BlockWeights,
    positions: &[usize],
    mut capture: Option<&mut BlockCapture>,
) -> Result<Matrix> {
    if h.cols() != block.d_model {
        return Err(shape_err("run_block", block.d_model, h.cols()));
    }
    if positions.len() != h.rows() {
        return Err(shape_err("run_block positions", h.rows(), positions.len()));
    }
    if let Some(c) = capture.as_deref_mut() {
        c.clear();
    }
    let mut h = h.clone();
    for layer in &block.layers {
        let normed = rmsnorm(&h, &layer.attn_norm)?;
        let mut layer_cap = LayerCapture::new();
        let attn = causal_attention(
            &normed,
            layer,
            block.n_heads,
            positions,
            capture.is_some().then_some(&mut layer_cap),
        )?;
        if let Some(c) = capture.as_deref_mut() {
            c.push(layer_cap);
        }
        h.add_assign(&attn)?;
        let normed = rmsnorm(&h, &layer.mlp_norm)?;
        for i in 0..h.rows() {
            let m = mlp_row(normed.row(i), layer);
            for (a, b) in h.row_mut(i).iter_mut().zip(&m) {
                *a += b;
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Default)]
struct KvCache {
    keys: Matrix,
    values: Matrix,
}

/// Incremental state of one block: rotated keys and values per layer.
#[derive(Debug, Clone)]
pub struct BlockCache {
    layers: Vec<KvCache>,
}

impl BlockCache {
    pub fn new(block: &BlockWeights) -> Self {
        Self {
            layers: vec![KvCache::default(); block.layers.len()],
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.keys.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Processes one new row at rotary position `position`.
    pub fn step(&mut self, row: &[f64], block: &BlockWeights, position: usize) -> Result<Vec<f64>> {
        let d = block.d_model;
        if row.len() != d {
            return Err(shape_err("BlockCache::step", d, row.len()));
        }
        let head_dim = block.head_dim();
        let mut h = row.to_vec();
        let mut normed = vec![0.0; d];
        let mut mixed = vec![0.0; d];
        for (layer, cache) in block.layers.iter().zip(&mut self.layers) {
            rmsnorm_row(&h, &layer.attn_norm, &mut normed);
            let mut q = vec_mat(&normed, &layer.wq);
            let mut k = vec_mat(&normed, &layer.wk);
            let v = vec_mat(&normed, &layer.wv);
            rope_row(&mut q, position, head_dim);
            rope_row(&mut k, position, head_dim);
            cache.keys.push_row(&k)?;
            cache.values.push_row(&v)?;
            let n = cache.keys.rows();
            attend_row(&q, &cache.keys, &cache.values, n, block.n_heads, &mut mixed, None);
            let mut o = vec![0.0; d];
            vec_mat_into(&mixed, &layer.wo, &mut o);
            for (a, b) in h.iter_mut().zip(&o) {
                *a += b;
            }
            rmsnorm_row(&h, &layer.mlp_norm, &mut normed);
            let m = mlp_row(&normed, layer);
            for (a, b) in h.iter_mut().zip(&m) {
                *a += b;
            }
        }
        Ok(h)
    }
}

/// Greedy next token: argmax of `row · output_head`, lowest index on ties.
pub fn lm_head_and_sample(row: &[f64], emb: &EmbeddingWeights) -> Result<usize> {
    Ok(argmax(&emb.logits(row)?))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
