use rand_chacha::ChaCha8Rng;

use super::{dropout, exclude_pad, Family, ModelConfig, ParamVars, EMBEDDING, HEAD_BIAS, LAYER_NORM_EPS};
use crate::autodiff::{Float, Tensor, Var};
use crate::error::Result;
use crate::tokenizer::PaddedBatch;

use super::EXCLUDED_LOGIT as MASKED_SCORE;

/// Pre-norm transformer over `[rows, cols]` ids, returning `[rows·cols, V]` logits.
pub(super) fn forward<'t, T: Float>(
    c: &ModelConfig,
    p: &ParamVars<'_, 't, T>,
    batch: &PaddedBatch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var<'t, T>> {
    let (b, n) = (batch.rows, batch.cols);
    let table = p.get(EMBEDDING);
    let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let x = table
        .embedding(&ids)?
        .add(p.get("position.weight").embedding(&positions)?)?;
    let mut x = dropout(x, c.dropout, &mut rng)?;
    let mask = x.tape().constant(attention_mask(
        batch,
        c.n_heads,
        c.family == Family::CausalTransformer,
    ));
    for l in 0..c.n_layers {
        x = block(c, p, l, x, mask, b, n, &mut rng)?;
    }
    let x = x.layer_norm(p.get("ln_f.gain"), p.get("ln_f.bias"), LAYER_NORM_EPS)?;
    let logits = x.matmul_t(table)?;
    let logits = match c.family {
        Family::MaskedTransformer => logits.add_row(p.get(HEAD_BIAS))?,
        _ => logits,
    };
    exclude_pad(logits, c.vocab_size)
}

/// Additive `[b·heads, n, n]` mask: padded keys always, future keys when causal.
fn attention_mask<T: Float>(batch: &PaddedBatch, heads: usize, causal: bool) -> Tensor<T> {
    let n = batch.cols;
    let mut data = Vec::with_capacity(batch.rows * heads * n * n);
    for &len in &batch.lengths {
        let mut one = vec![T::zero(); n * n];
        for q in 0..n {
            for k in 0..n {
                if k >= len || (causal && k > q) {
                    one[q * n + k] = T::of(MASKED_SCORE);
                }
            }
        }
        for _ in 0..heads {
            data.extend_from_slice(&one);
        }
    }
    Tensor::new(vec![batch.rows * heads, n, n], data).expect("mask size")
}

#[allow(clippy::too_many_arguments)]
fn block<'t, T: Float>(
    c: &ModelConfig,
    p: &ParamVars<'_, 't, T>,
    l: usize,
    x: Var<'t, T>,
    mask: Var<'t, T>,
    b: usize,
    n: usize,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var<'t, T>> {
    let w = |s: &str| p.get(&format!("blocks.{l}.{s}"));
    let (d, heads, hd) = (c.d_model, c.n_heads, c.head_dim());

    let h = x.layer_norm(w("ln1.gain"), w("ln1.bias"), LAYER_NORM_EPS)?;
    // No key bias: it shifts every score of a query by the same amount.
    let no_key_bias = x.tape().constant(Tensor::zeros(&[d]));
    let bias = Var::concat(&[w("attn.q.bias"), no_key_bias, w("attn.v.bias")], 0)?;
    let qkv = h
        .matmul_t(w("attn.qkv.weight"))?
        .add_row(bias)?
        .reshape(&[b, n, 3, heads, hd])?
        .permute(&[2, 0, 3, 1, 4])?;
    let part = |i: usize| -> Result<Var<'t, T>> {
        qkv.slice(0, i, i + 1)?.reshape(&[b * heads, n, hd])
    };
    let (q, k, v) = (part(0)?, part(1)?, part(2)?);
    let scores = q
        .matmul_t(k)?
        .scale(T::of(1.0 / (hd as f64).sqrt()))
        .add(mask)?;
    let attn = dropout(scores.softmax(2)?, c.dropout, rng)?;
    let ctx = attn
        .matmul(v)?
        .reshape(&[b, heads, n, hd])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * n, d])?;
    let out = ctx
        .matmul_t(w("attn.out.weight"))?
        .add_row(w("attn.out.bias"))?;
    let x = x.add(dropout(out, c.dropout, rng)?)?;

    let h = x.layer_norm(w("ln2.gain"), w("ln2.bias"), LAYER_NORM_EPS)?;
    let ff = h
        .matmul_t(w("ffn.in.weight"))?
        .add_row(w("ffn.in.bias"))?
        .gelu()
        .matmul_t(w("ffn.out.weight"))?
        .add_row(w("ffn.out.bias"))?;
    x.add(dropout(ff, c.dropout, rng)?)
}
