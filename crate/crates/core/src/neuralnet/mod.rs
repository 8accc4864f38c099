//! Small post-norm transformer encoder with a seven-way sigmoid head.
//!
//! Per sequence: token embedding plus a fixed sinusoidal position table, then
//! `n_layers` blocks of masked multi-head self-attention, residual, layer
//! norm, GELU feed-forward, residual, layer norm. The vector at position 0
//! (the `[CLS]` slot) goes through an affine head and an element-wise sigmoid.
//!
//! Positions whose mask is 0 never take part in the computation: no query
//! attends to them and their outputs are never read. This is exactly the
//! additive `-inf` key mask, since `exp(-inf) = 0`, and it means padding
//! contents cannot influence any output. Everything runs in `f64`, and
//! [`loss_and_grads`] returns exact analytic gradients obtained by hand-written
//! backpropagation.

mod checkpoint;
mod params;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use params::{init_model, EncoderLayer, LayerNorm, Linear, ModelParams};

use crate::corpus::{ToneLabel, ToneVector, N_TONES};
use crate::error::{Error, Result};
use crate::textprep::{TokenSequence, MAX_SEQ_LEN};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub n_labels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 8000,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 128,
            max_len: 64,
            n_labels: N_TONES,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_labels != N_TONES {
            return bad(format!("n_labels must be {N_TONES}, got {}", self.n_labels));
        }
        if !(1..=MAX_SEQ_LEN).contains(&self.max_len) {
            return bad(format!(
                "max_len {} outside 1..={MAX_SEQ_LEN}",
                self.max_len
            ));
        }
        if self.vocab_size < 3 || self.d_ffn == 0 || self.n_layers == 0 {
            return bad("vocab_size >= 3, d_ffn >= 1 and n_layers >= 1 required".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Applies one `key=value` setting (keys without the `model.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = || crate::settings::parse_value::<usize>(key, value);
        match key {
            "vocab_size" => self.vocab_size = n()?,
            "d_model" => self.d_model = n()?,
            "n_heads" => self.n_heads = n()?,
            "n_layers" => self.n_layers = n()?,
            "d_ffn" => self.d_ffn = n()?,
            "max_len" => self.max_len = n()?,
            "n_labels" => self.n_labels = n()?,
            "seed" => self.seed = crate::settings::parse_value(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key model.{key}"))),
        }
        Ok(())
    }
}

/// Independent per-tone probabilities; no sum-to-one constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector(pub [f64; N_TONES]);

impl ProbVector {
    pub fn get(&self, tone: ToneLabel) -> f64 {
        self.0[tone.index()]
    }
}

/// Fixed sinusoidal position table, `max_len × d_model`.
pub fn positional_table(max_len: usize, d_model: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d_model), |(pos, i)| {
        let freq = 10000f64.powf(-((i - i % 2) as f64) / d_model as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, in logit form.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *s);
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, NormCache { xhat, inv_std })
}

/// Backprop through layer norm; accumulates gain/bias grads into `grad`.
fn layer_norm_backward(
    cache: &NormCache,
    ln: &LayerNorm,
    dy: &Array2<f64>,
    grad: &mut LayerNorm,
) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        let s = cache.inv_std[r];
        for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = s / d * (d * gi - sum_g - xi * sum_gx);
        }
    }
    dx
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    norm1: NormCache,
    hidden: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    norm2: NormCache,
}

/// Activations of one sequence, kept for the backward pass.
pub struct SequenceCache {
    tokens: Vec<usize>,
    layers: Vec<LayerCache>,
    pooled: Array1<f64>,
    logits: [f64; N_TONES],
}

impl SequenceCache {
    pub fn logits(&self) -> [f64; N_TONES] {
        self.logits
    }
}

/// Activations for a whole batch, in batch order.
pub struct ForwardCache {
    pub sequences: Vec<SequenceCache>,
}

/// Returns (token ids, positions) of the unmasked slots, after validation.
fn real_positions(seq: &TokenSequence, config: &ModelConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if seq.ids.len() != config.max_len || seq.mask.len() != config.max_len {
        return Err(Error::ShapeMismatch(format!(
            "sequence length {} (mask {}) but model max_len is {}",
            seq.ids.len(),
            seq.mask.len(),
            config.max_len
        )));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id: id as usize,
            vocab_size: config.vocab_size,
        });
    }
    if seq.mask[0] != 1 {
        return Err(Error::ShapeMismatch("position 0 must be unmasked".into()));
    }
    Ok(seq
        .ids
        .iter()
        .zip(&seq.mask)
        .enumerate()
        .filter(|(_, (_, &m))| m == 1)
        .map(|(pos, (&id, _))| (id as usize, pos))
        .unzip())
}

fn forward_sequence(
    params: &ModelParams,
    pe: &Array2<f64>,
    seq: &TokenSequence,
) -> Result<SequenceCache> {
    let config = &params.config;
    let (tokens, positions) = real_positions(seq, config)?;
    let d = config.d_model;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = Array2::zeros((tokens.len(), d));
    for (r, (&tok, &pos)) in tokens.iter().zip(&positions).enumerate() {
        let mut row = x.row_mut(r);
        row += &params.token_embedding.row(tok);
        row += &pe.row(pos);
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let q = layer.query.apply(&x);
        let k = layer.key.apply(&x);
        let v = layer.value.apply(&x);
        let mut ctx = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let attn = layer.output.apply(&ctx);
        let (hidden, norm1) = layer_norm(&(&x + &attn), &layer.norm1);
        let ffn_pre = layer.ffn_in.apply(&hidden);
        let ffn_act = ffn_pre.mapv(gelu);
        let ffn = layer.ffn_out.apply(&ffn_act);
        let (out, norm2) = layer_norm(&(&hidden + &ffn), &layer.norm2);
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            q,
            k,
            v,
            probs,
            ctx,
            norm1,
            hidden,
            ffn_pre,
            ffn_act,
            norm2,
        });
    }

    let pooled = x.row(0).to_owned();
    let z = pooled.dot(&params.head.weight) + &params.head.bias;
    let mut logits = [0.0; N_TONES];
    logits.copy_from_slice(z.as_slice().expect("contiguous logits"));
    Ok(SequenceCache {
        tokens,
        layers,
        pooled,
        logits,
    })
}

fn probs_of(logits: &[f64; N_TONES]) -> ProbVector {
    ProbVector(logits.map(sigmoid))
}

/// Logits for every sequence, in batch order. Sequences run in parallel.
pub fn logits(params: &ModelParams, batch: &[TokenSequence]) -> Result<Vec<[f64; N_TONES]>> {
    let pe = positional_table(params.config.max_len, params.config.d_model);
    batch
        .par_iter()
        .map(|seq| forward_sequence(params, &pe, seq).map(|c| c.logits))
        .collect()
}

pub fn forward(params: &ModelParams, batch: &[TokenSequence]) -> Result<Vec<ProbVector>> {
    Ok(logits(params, batch)?.iter().map(probs_of).collect())
}

/// Forward pass that also returns the activations needed by backprop.
pub fn forward_cached(
    params: &ModelParams,
    batch: &[TokenSequence],
) -> Result<(Vec<ProbVector>, ForwardCache)> {
    let pe = positional_table(params.config.max_len, params.config.d_model);
    let sequences = batch
        .iter()
        .map(|seq| forward_sequence(params, &pe, seq))
        .collect::<Result<Vec<_>>>()?;
    let probs = sequences.iter().map(|c| probs_of(&c.logits)).collect();
    Ok((probs, ForwardCache { sequences }))
}

fn check_targets(batch: &[TokenSequence], targets: &[ToneVector]) -> Result<()> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sequences vs {} targets (need equal and >= 1)",
            batch.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over examples and labels, forward only.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[TokenSequence],
    targets: &[ToneVector],
) -> Result<f64> {
    check_targets(batch, targets)?;
    let z = logits(params, batch)?;
    Ok(mean_bce(&z, targets))
}

fn mean_bce(logits: &[[f64; N_TONES]], targets: &[ToneVector]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .flat_map(|(z, y)| z.iter().zip(y.as_f64()).map(|(&z, y)| bce_with_logit(z, y)))
        .sum();
    total / (logits.len() * N_TONES) as f64
}

/// Mean BCE loss and its exact gradient with respect to every parameter.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[TokenSequence],
    targets: &[ToneVector],
) -> Result<(f64, ModelParams)> {
    check_targets(batch, targets)?;
    let (_, cache) = forward_cached(params, batch)?;
    let logits: Vec<_> = cache.sequences.iter().map(|c| c.logits).collect();
    let loss = mean_bce(&logits, targets);

    let norm = 1.0 / (batch.len() * N_TONES) as f64;
    let mut grads = params.zeros_like();
    for (seq, y) in cache.sequences.iter().zip(targets) {
        let y = y.as_f64();
        let dlogits =
            Array1::from_iter((0..N_TONES).map(|i| (sigmoid(seq.logits[i]) - y[i]) * norm));
        backward_sequence(params, seq, dlogits.view(), &mut grads);
    }
    Ok((loss, grads))
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

fn accumulate_linear(grad: &mut Linear, input: &Array2<f64>, dout: &Array2<f64>) {
    grad.weight += &input.t().dot(dout);
    grad.bias += &dout.sum_axis(Axis(0));
}

fn backward_sequence(
    params: &ModelParams,
    cache: &SequenceCache,
    dlogits: ArrayView1<f64>,
    grads: &mut ModelParams,
) {
    let config = &params.config;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    grads.head.weight += &outer(cache.pooled.view(), dlogits);
    grads.head.bias += &dlogits;
    let mut dx = Array2::zeros((cache.tokens.len(), config.d_model));
    dx.row_mut(0).assign(&params.head.weight.dot(&dlogits));

    for ((layer, lc), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        // out = norm2(hidden + ffn_out(gelu(ffn_in(hidden))))
        let dsum2 = layer_norm_backward(&lc.norm2, &layer.norm2, &dx, &mut g.norm2);
        accumulate_linear(&mut g.ffn_out, &lc.ffn_act, &dsum2);
        let dact = dsum2.dot(&layer.ffn_out.weight.t());
        let dpre = &dact * &lc.ffn_pre.mapv(gelu_grad);
        accumulate_linear(&mut g.ffn_in, &lc.hidden, &dpre);
        let dhidden = &dsum2 + &dpre.dot(&layer.ffn_in.weight.t());

        // hidden = norm1(input + output(ctx))
        let dsum1 = layer_norm_backward(&lc.norm1, &layer.norm1, &dhidden, &mut g.norm1);
        accumulate_linear(&mut g.output, &lc.ctx, &dsum1);
        let dctx = dsum1.dot(&layer.output.weight.t());

        let mut dq = Array2::zeros(lc.q.raw_dim());
        let mut dk = Array2::zeros(lc.k.raw_dim());
        let mut dv = Array2::zeros(lc.v.raw_dim());
        for (h, p) in lc.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = p * &dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let total = row.sum();
                row.zip_mut_with(&prow, |v, &pv| *v -= pv * total);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        accumulate_linear(&mut g.query, &lc.input, &dq);
        accumulate_linear(&mut g.key, &lc.input, &dk);
        accumulate_linear(&mut g.value, &lc.input, &dv);
        dx = dsum1
            + dq.dot(&layer.query.weight.t())
            + dk.dot(&layer.key.weight.t())
            + dv.dot(&layer.value.weight.t());
    }

    for (r, &tok) in cache.tokens.iter().enumerate() {
        let mut row = grads.token_embedding.row_mut(tok);
        row += &dx.row(r);
    }
}
