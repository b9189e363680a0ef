use rand_chacha::ChaCha8Rng;

use super::{dropout, exclude_pad, ModelConfig, ParamVars, EMBEDDING, HEAD_BIAS};
use crate::autodiff::{Float, Tensor, Var};
use crate::error::Result;
use crate::tokenizer::PaddedBatch;

/// Stacked LSTM over `[rows, cols]` ids, returning `[rows·cols, V]` logits.
///
/// Gate order inside the `4d` projections is input, forget, cell, output.
pub(super) fn forward<'t, T: Float>(
    c: &ModelConfig,
    p: &ParamVars<'_, 't, T>,
    batch: &PaddedBatch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var<'t, T>> {
    let (b, steps, d) = (batch.rows, batch.cols, c.d_model);
    let table = p.get(EMBEDDING);
    let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let mut x = dropout(table.embedding(&ids)?, c.dropout, &mut rng)?;
    for l in 0..c.n_layers {
        x = layer(p, l, x, b, steps, d)?;
        x = dropout(x, c.dropout, &mut rng)?;
    }
    exclude_pad(x.matmul_t(table)?.add_row(p.get(HEAD_BIAS))?, c.vocab_size)
}

/// One layer: `x` is `[b·steps, d]` in batch-major order; so is the result.
fn layer<'t, T: Float>(
    p: &ParamVars<'_, 't, T>,
    l: usize,
    x: Var<'t, T>,
    b: usize,
    steps: usize,
    d: usize,
) -> Result<Var<'t, T>> {
    let name = |s: &str| format!("lstm.{l}.{s}");
    let w_hh = p.get(&name("weight_hh"));
    let projected = x
        .matmul_t(p.get(&name("weight_ih")))?
        .add_row(p.get(&name("bias_ih")))?
        .add_row(p.get(&name("bias_hh")))?
        .reshape(&[b, steps, 4 * d])?;
    let tape = x.tape();
    let mut h = tape.constant(Tensor::zeros(&[b, d]));
    let mut cell = tape.constant(Tensor::zeros(&[b, d]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut gates = projected.slice(1, t, t + 1)?.reshape(&[b, 4 * d])?;
        if t > 0 {
            gates = gates.add(h.matmul_t(w_hh)?)?;
        }
        let i = gates.slice(1, 0, d)?.sigmoid();
        let f = gates.slice(1, d, 2 * d)?.sigmoid();
        let g = gates.slice(1, 2 * d, 3 * d)?.tanh();
        let o = gates.slice(1, 3 * d, 4 * d)?.sigmoid();
        cell = f.mul(cell)?.add(i.mul(g)?)?;
        h = o.mul(cell.tanh())?;
        outputs.push(h.reshape(&[b, 1, d])?);
    }
    Var::concat(&outputs, 1)?.reshape(&[b * steps, d])
}
