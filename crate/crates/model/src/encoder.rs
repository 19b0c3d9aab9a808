//! From-scratch differentiable text encoder: embeddings, pre-layer-norm
//! transformer blocks with PAD-masked self-attention, GELU feed-forward,
//! and exact reverse-mode gradients for every parameter.

use localeq_core::rng::{self, Gaussian, Rng};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::ParameterTensor;
use crate::tokenizer::{TokenSequence, PAD};

/// Variance floor of layer normalization.
const LN_EPS: f64 = 1e-9;

/// Additive score for masked (PAD) attention keys; large enough that the
/// softmax underflows to exactly zero.
const MASK_SCORE: f64 = -1e30;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Standard deviation of weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.max_len < 3 {
            return Err(ModelError::BadConfig("max_len must be >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: ParameterTensor,
    pub ln1_bias: ParameterTensor,
    pub wq: ParameterTensor,
    pub bq: ParameterTensor,
    pub wk: ParameterTensor,
    pub bk: ParameterTensor,
    pub wv: ParameterTensor,
    pub bv: ParameterTensor,
    pub wo: ParameterTensor,
    pub bo: ParameterTensor,
    pub ln2_gain: ParameterTensor,
    pub ln2_bias: ParameterTensor,
    pub w1: ParameterTensor,
    pub b1: ParameterTensor,
    pub w2: ParameterTensor,
    pub b2: ParameterTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok_emb: ParameterTensor,
    pub pos_emb: ParameterTensor,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: ParameterTensor,
    pub lnf_bias: ParameterTensor,
}

impl EncoderParams {
    /// Seeded initialization: weights and embeddings from a normal with
    /// standard deviation 0.02, biases zero, layer-norm gains one.
    pub fn init(config: &EncoderConfig, vocab_total: usize, prefix: &str, rng: &mut Rng) -> Self {
        let d = config.d_model;
        let f = config.d_ff;
        let mut gauss = Gaussian::new();
        let name = |s: &str| format!("{prefix}{s}");
        let tok_emb =
            ParameterTensor::normal(name("tok_emb"), &[vocab_total, d], INIT_STD, rng, &mut gauss);
        let pos_emb = ParameterTensor::normal(
            name("pos_emb"),
            &[config.max_len, d],
            INIT_STD,
            rng,
            &mut gauss,
        );
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let ln = |s: &str| format!("{prefix}layer{l}.{s}");
            layers.push(LayerParams {
                ln1_gain: ParameterTensor::ones(ln("ln1.gain"), &[d]),
                ln1_bias: ParameterTensor::zeros(ln("ln1.bias"), &[d]),
                wq: ParameterTensor::normal(ln("attn.wq"), &[d, d], INIT_STD, rng, &mut gauss),
                bq: ParameterTensor::zeros(ln("attn.bq"), &[d]),
                wk: ParameterTensor::normal(ln("attn.wk"), &[d, d], INIT_STD, rng, &mut gauss),
                bk: ParameterTensor::zeros(ln("attn.bk"), &[d]),
                wv: ParameterTensor::normal(ln("attn.wv"), &[d, d], INIT_STD, rng, &mut gauss),
                bv: ParameterTensor::zeros(ln("attn.bv"), &[d]),
                wo: ParameterTensor::normal(ln("attn.wo"), &[d, d], INIT_STD, rng, &mut gauss),
                bo: ParameterTensor::zeros(ln("attn.bo"), &[d]),
                ln2_gain: ParameterTensor::ones(ln("ln2.gain"), &[d]),
                ln2_bias: ParameterTensor::zeros(ln("ln2.bias"), &[d]),
                w1: ParameterTensor::normal(ln("ff.w1"), &[d, f], INIT_STD, rng, &mut gauss),
                b1: ParameterTensor::zeros(ln("ff.b1"), &[f]),
                w2: ParameterTensor::normal(ln("ff.w2"), &[f, d], INIT_STD, rng, &mut gauss),
                b2: ParameterTensor::zeros(ln("ff.b2"), &[d]),
            });
        }
        Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_gain: ParameterTensor::ones(name("lnf.gain"), &[d]),
            lnf_bias: ParameterTensor::zeros(name("lnf.bias"), &[d]),
        }
    }

    /// All tensors in the fixed serialization and optimizer order.
    pub fn tensors(&self) -> Vec<&ParameterTensor> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.ln1_gain,
                &l.ln1_bias,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln2_gain,
                &l.ln2_bias,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        out.push(&self.lnf_gain);
        out.push(&self.lnf_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParameterTensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }
}

/// A padded batch of token sequences.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub b: usize,
    pub t: usize,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[TokenSequence]) -> Self {
        let b = seqs.len();
        let t = seqs.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
        let mut ids = vec![PAD; b * t];
        for (row, seq) in seqs.iter().enumerate() {
            ids[row * t..row * t + seq.len()].copy_from_slice(&seq.ids);
        }
        Self { ids, b, t }
    }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

/// out[i, o] = b[o] + sum_k x[i, k] * w[k, o]
pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let n = x.len() / d_in;
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let row = &x[i * d_in..(i + 1) * d_in];
        let out_row = &mut out[i * d_out..(i + 1) * d_out];
        out_row.copy_from_slice(&b[..d_out]);
        for (k, &xv) in row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let w_row = &w[k * d_out..(k + 1) * d_out];
            for o in 0..d_out {
                out_row[o] += xv * w_row[o];
            }
        }
    }
    out
}

/// Accumulates dx, dw, db for the linear layer above.
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d_in: usize,
    d_out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let n = x.len() / d_in;
    for i in 0..n {
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        for o in 0..d_out {
            db[o] += dy_row[o];
        }
        let x_row = &x[i * d_in..(i + 1) * d_in];
        let dx_row = &mut dx[i * d_in..(i + 1) * d_in];
        for k in 0..d_in {
            let w_row = &w[k * d_out..(k + 1) * d_out];
            let dw_row = &mut dw[k * d_out..(k + 1) * d_out];
            let xv = x_row[k];
            let mut acc = 0.0;
            for o in 0..d_out {
                acc += dy_row[o] * w_row[o];
                dw_row[o] += xv * dy_row[o];
            }
            dx_row[k] += acc;
        }
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    /// Normalized pre-affine activations.
    xhat: Vec<f64>,
    /// Per-row reciprocal standard deviation.
    inv_std: Vec<f64>,
}

fn layernorm_forward(x: &[f64], gain: &[f64], bias: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let xh = (row[j] - mu) * is;
            xhat[i * d + j] = xh;
            y[i * d + j] = gain[j] * xh + bias[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layernorm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &[f64],
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let n = dy.len() / d;
    for i in 0..n {
        let xhat = &cache.xhat[i * d..(i + 1) * d];
        let dy_row = &dy[i * d..(i + 1) * d];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            dgain[j] += dy_row[j] * xhat[j];
            dbias[j] += dy_row[j];
            let dxhat = dy_row[j] * gain[j];
            m1 += dxhat;
            m2 += dxhat * xhat[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            let dxhat = dy_row[j] * gain[j];
            dx[i * d + j] += is * (dxhat - m1 - xhat[j] * m2);
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place numerically-stable softmax over one row.
fn softmax_row(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Inverted-dropout multiplier mask: 0 with probability `rate`, otherwise
/// 1/(1-rate).
fn dropout_mask(rng: &mut Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng::unit_f64(rng) < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

fn apply_mask(x: &mut [f64], mask: &[f64]) {
    for (v, &m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

// ---------------------------------------------------------------------------
// encoder forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, indexed [b, head, query, key].
    attn: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln2: LnCache,
    h2: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
}

/// Cached activations of one forward pass; required by [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    batch: TokenBatch,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    pub attn_probs_len: usize,
}

impl EncoderCache {
    /// Attention rows of one layer as (rows, row_len); used by invariant
    /// tests to check that each softmax row sums to one.
    pub fn attention_rows(&self, layer: usize) -> (&[f64], usize) {
        (&self.layers[layer].attn, self.batch.t)
    }

    /// Pre-affine layer-norm outputs of the final normalization.
    pub fn final_xhat(&self) -> (&[f64], usize) {
        (&self.final_ln.xhat, self.batch.b * self.batch.t)
    }

    pub fn batch_dims(&self) -> (usize, usize) {
        (self.batch.b, self.batch.t)
    }
}

fn attention_forward(
    config: &EncoderConfig,
    batch: &TokenBatch,
    q: &[f64],
    k: &[f64],
    v: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (b, t, d) = (batch.b, batch.t, config.d_model);
    let h = config.n_heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = vec![0.0; b * h * t * t];
    let mut ctx = vec![0.0; b * t * d];
    for bi in 0..b {
        for hi in 0..h {
            let col = hi * dh;
            for i in 0..t {
                let q_row = &q[(bi * t + i) * d + col..(bi * t + i) * d + col + dh];
                let row = &mut attn[((bi * h + hi) * t + i) * t..((bi * h + hi) * t + i + 1) * t];
                for j in 0..t {
                    if batch.ids[bi * t + j] == PAD {
                        row[j] = MASK_SCORE;
                        continue;
                    }
                    let k_row = &k[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                    row[j] = q_row
                        .iter()
                        .zip(k_row)
                        .map(|(&a, &b)| a * b)
                        .sum::<f64>()
                        * scale;
                }
                softmax_row(row);
                let ctx_row = &mut ctx[(bi * t + i) * d + col..(bi * t + i) * d + col + dh];
                for j in 0..t {
                    let a = row[j];
                    if a == 0.0 {
                        continue;
                    }
                    let v_row = &v[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                    for (c, &vv) in ctx_row.iter_mut().zip(v_row) {
                        *c += a * vv;
                    }
                }
            }
        }
    }
    (attn, ctx)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    config: &EncoderConfig,
    batch: &TokenBatch,
    cache: &LayerCache,
    dctx: &[f64],
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let (b, t, d) = (batch.b, batch.t, config.d_model);
    let h = config.n_heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut da = vec![0.0; t];
    let mut ds = vec![0.0; t];
    for bi in 0..b {
        for hi in 0..h {
            let col = hi * dh;
            for i in 0..t {
                let a_row =
                    &cache.attn[((bi * h + hi) * t + i) * t..((bi * h + hi) * t + i + 1) * t];
                let dctx_row = &dctx[(bi * t + i) * d + col..(bi * t + i) * d + col + dh];
                // dA[i, j] = dctx_h[i] . V_h[j]; dV_h[j] += A[i, j] * dctx_h[i]
                for j in 0..t {
                    let a = a_row[j];
                    let v_row = &cache.v[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                    let mut dot = 0.0;
                    for (x, &y) in dctx_row.iter().zip(v_row) {
                        dot += x * y;
                    }
                    da[j] = dot;
                    if a != 0.0 {
                        let dv_row = &mut dv[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                        for (dvv, &g) in dv_row.iter_mut().zip(dctx_row) {
                            *dvv += a * g;
                        }
                    }
                }
                // Softmax backward within the row.
                let inner: f64 = a_row.iter().zip(&da).map(|(&a, &g)| a * g).sum();
                for j in 0..t {
                    ds[j] = a_row[j] * (da[j] - inner);
                }
                // dQ_h[i] += sum_j ds[j] * K_h[j] * scale; dK symmetric.
                let dq_row = &mut dq[(bi * t + i) * d + col..(bi * t + i) * d + col + dh];
                for j in 0..t {
                    let s = ds[j] * scale;
                    if s == 0.0 {
                        continue;
                    }
                    let k_row = &cache.k[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                    for (g, &kv) in dq_row.iter_mut().zip(k_row) {
                        *g += s * kv;
                    }
                    let q_row = &cache.q[(bi * t + i) * d + col..(bi * t + i) * d + col + dh];
                    let dk_row = &mut dk[(bi * t + j) * d + col..(bi * t + j) * d + col + dh];
                    for (g, &qv) in dk_row.iter_mut().zip(q_row) {
                        *g += s * qv;
                    }
                }
            }
        }
    }
}

/// Runs the encoder over a padded batch, returning the pooled CLS vectors
/// (`b x d_model`) and the activation cache.
///
/// `train_rng` enables dropout (at the config rate) when present.
pub fn encode(
    config: &EncoderConfig,
    params: &EncoderParams,
    batch: TokenBatch,
    mut train_rng: Option<&mut Rng>,
) -> Result<(Vec<f64>, EncoderCache), ModelError> {
    if batch.t > config.max_len {
        return Err(ModelError::SequenceTooLong {
            len: batch.t,
            max_len: config.max_len,
        });
    }
    let (b, t, d) = (batch.b, batch.t, config.d_model);
    let rate = config.dropout_rate;
    let with_dropout = |x: &mut Vec<f64>, rng: &mut Option<&mut Rng>| -> Option<Vec<f64>> {
        match rng {
            Some(r) if rate > 0.0 => {
                let mask = dropout_mask(r, x.len(), rate);
                apply_mask(x, &mask);
                Some(mask)
            }
            _ => None,
        }
    };

    // Token + learned positional embeddings.
    let mut x = vec![0.0; b * t * d];
    for bi in 0..b {
        for ti in 0..t {
            let id = batch.ids[bi * t + ti] as usize;
            let emb = &params.tok_emb.values[id * d..(id + 1) * d];
            let pos = &params.pos_emb.values[ti * d..(ti + 1) * d];
            let out = &mut x[(bi * t + ti) * d..(bi * t + ti + 1) * d];
            for j in 0..d {
                out[j] = emb[j] + pos[j];
            }
        }
    }
    let emb_drop = with_dropout(&mut x, &mut train_rng);

    let mut layer_caches = Vec::with_capacity(config.n_layers);
    for layer in &params.layers {
        let (h1, ln1) = layernorm_forward(&x, &layer.ln1_gain.values, &layer.ln1_bias.values, d);
        let q = linear_forward(&h1, &layer.wq.values, &layer.bq.values, d, d);
        let k = linear_forward(&h1, &layer.wk.values, &layer.bk.values, d, d);
        let v = linear_forward(&h1, &layer.wv.values, &layer.bv.values, d, d);
        let (attn, ctx) = attention_forward(config, &batch, &q, &k, &v);
        let mut attn_out = linear_forward(&ctx, &layer.wo.values, &layer.bo.values, d, d);
        let attn_drop = with_dropout(&mut attn_out, &mut train_rng);
        for (xi, &a) in x.iter_mut().zip(&attn_out) {
            *xi += a;
        }

        let (h2, ln2) = layernorm_forward(&x, &layer.ln2_gain.values, &layer.ln2_bias.values, d);
        let ff_pre = linear_forward(&h2, &layer.w1.values, &layer.b1.values, d, config.d_ff);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&v| gelu(v)).collect();
        let mut ff_out = linear_forward(&ff_act, &layer.w2.values, &layer.b2.values, config.d_ff, d);
        let ff_drop = with_dropout(&mut ff_out, &mut train_rng);
        for (xi, &f) in x.iter_mut().zip(&ff_out) {
            *xi += f;
        }

        layer_caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v,
            attn,
            ctx,
            attn_drop,
            ln2,
            h2,
            ff_pre,
            ff_act,
            ff_drop,
        });
    }

    let (final_out, final_ln) =
        layernorm_forward(&x, &params.lnf_gain.values, &params.lnf_bias.values, d);
    let mut pooled = vec![0.0; b * d];
    for bi in 0..b {
        pooled[bi * d..(bi + 1) * d].copy_from_slice(&final_out[bi * t * d..bi * t * d + d]);
    }
    let attn_probs_len = b * config.n_heads * t * t;
    Ok((
        pooled,
        EncoderCache {
            batch,
            emb_drop,
            layers: layer_caches,
            final_ln,
            attn_probs_len,
        },
    ))
}

/// Accumulates exact gradients of every encoder parameter given the loss
/// gradient with respect to the pooled CLS outputs (`b x d_model`).
pub fn encode_backward(
    config: &EncoderConfig,
    params: &mut EncoderParams,
    cache: &EncoderCache,
    d_pooled: &[f64],
) {
    let (b, t, d) = (cache.batch.b, cache.batch.t, config.d_model);
    assert_eq!(d_pooled.len(), b * d, "upstream gradient shape mismatch");

    // Scatter pooled gradient into position 0 of each sequence.
    let mut d_final = vec![0.0; b * t * d];
    for bi in 0..b {
        d_final[bi * t * d..bi * t * d + d].copy_from_slice(&d_pooled[bi * d..(bi + 1) * d]);
    }

    let mut dx = vec![0.0; b * t * d];
    layernorm_backward(
        &cache.final_ln,
        &params.lnf_gain.values,
        &d_final,
        d,
        &mut dx,
        &mut params.lnf_gain.grad,
        &mut params.lnf_bias.grad,
    );

    for (layer, lc) in params.layers.iter_mut().zip(&cache.layers).rev() {
        // Feed-forward sublayer backward: x = x_mid + drop(ff_out).
        let mut d_ff_out = dx.clone();
        if let Some(mask) = &lc.ff_drop {
            apply_mask(&mut d_ff_out, mask);
        }
        let mut d_ff_act = vec![0.0; lc.ff_act.len()];
        linear_backward(
            &lc.ff_act,
            &layer.w2.values,
            &d_ff_out,
            config.d_ff,
            d,
            &mut d_ff_act,
            &mut layer.w2.grad,
            &mut layer.b2.grad,
        );
        let d_ff_pre: Vec<f64> = d_ff_act
            .iter()
            .zip(&lc.ff_pre)
            .map(|(&g, &x)| g * gelu_grad(x))
            .collect();
        let mut d_h2 = vec![0.0; lc.h2.len()];
        linear_backward(
            &lc.h2,
            &layer.w1.values,
            &d_ff_pre,
            d,
            config.d_ff,
            &mut d_h2,
            &mut layer.w1.grad,
            &mut layer.b1.grad,
        );
        // dx accumulates the residual path into x_mid.
        layernorm_backward(
            &lc.ln2,
            &layer.ln2_gain.values,
            &d_h2,
            d,
            &mut dx,
            &mut layer.ln2_gain.grad,
            &mut layer.ln2_bias.grad,
        );

        // Attention sublayer backward: x_mid = x_in + drop(attn_out).
        let mut d_attn_out = dx.clone();
        if let Some(mask) = &lc.attn_drop {
            apply_mask(&mut d_attn_out, mask);
        }
        let mut d_ctx = vec![0.0; lc.ctx.len()];
        linear_backward(
            &lc.ctx,
            &layer.wo.values,
            &d_attn_out,
            d,
            d,
            &mut d_ctx,
            &mut layer.wo.grad,
            &mut layer.bo.grad,
        );
        let mut dq = vec![0.0; lc.q.len()];
        let mut dk = vec![0.0; lc.k.len()];
        let mut dv = vec![0.0; lc.v.len()];
        attention_backward(config, &cache.batch, lc, &d_ctx, &mut dq, &mut dk, &mut dv);
        let mut d_h1 = vec![0.0; lc.h1.len()];
        linear_backward(
            &lc.h1,
            &layer.wq.values,
            &dq,
            d,
            d,
            &mut d_h1,
            &mut layer.wq.grad,
            &mut layer.bq.grad,
        );
        linear_backward(
            &lc.h1,
            &layer.wk.values,
            &dk,
            d,
            d,
            &mut d_h1,
            &mut layer.wk.grad,
            &mut layer.bk.grad,
        );
        linear_backward(
            &lc.h1,
            &layer.wv.values,
            &dv,
            d,
            d,
            &mut d_h1,
            &mut layer.wv.grad,
            &mut layer.bv.grad,
        );
        layernorm_backward(
            &lc.ln1,
            &layer.ln1_gain.values,
            &d_h1,
            d,
            &mut dx,
            &mut layer.ln1_gain.grad,
            &mut layer.ln1_bias.grad,
        );
    }

    // Embedding dropout, then scatter-add into the embedding tables.
    if let Some(mask) = &cache.emb_drop {
        apply_mask(&mut dx, mask);
    }
    for bi in 0..b {
        for ti in 0..t {
            let id = cache.batch.ids[bi * t + ti] as usize;
            let g = &dx[(bi * t + ti) * d..(bi * t + ti + 1) * d];
            let tok = &mut params.tok_emb.grad[id * d..(id + 1) * d];
            let pos = &mut params.pos_emb.grad[ti * d..(ti + 1) * d];
            for j in 0..d {
                tok[j] += g[j];
                pos[j] += g[j];
            }
        }
    }
}
