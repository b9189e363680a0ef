//! Sentence scoring: causal log-probabilities, masked pseudo-log-likelihoods and
//! perplexity, over any model that yields per-position token distributions.

use rayon::prelude::*;

use crate::autodiff::{log_sum_exp, Float};
use crate::error::{Error, Result};
use crate::models::{LanguageModel, Objective};
use crate::tokenizer::{pad_batch, PaddedBatch, Specials};

/// Sequences scored per forward pass.
pub const SCORE_BATCH: usize = 32;

/// A frozen model exposing log-probabilities at every position of a batch.
///
/// For [`Objective::Causal`] row `t` is the distribution of the token after
/// position `t`; for [`Objective::Masked`] it is the distribution of the token at
/// position `t`.
pub trait TokenScorer: Sync {
    fn objective(&self) -> Objective;

    fn vocab_size(&self) -> usize;

    fn specials(&self) -> Specials {
        Specials::standard()
    }

    /// Row-major `[rows, cols, V]` log-probabilities.
    fn log_probs(&self, batch: &PaddedBatch) -> Result<Vec<f64>>;
}

impl<T: Float> TokenScorer for LanguageModel<T> {
    fn objective(&self) -> Objective {
        self.config().family.objective()
    }

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn log_probs(&self, batch: &PaddedBatch) -> Result<Vec<f64>> {
        let logits = self.logits(batch)?;
        let v = self.vocab_size();
        let mut out = logits.to_f64();
        for row in out.chunks_mut(v) {
            let lse = log_sum_exp(row.iter().copied());
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(out)
    }
}

/// Runs `per_batch` over fixed-size chunks in parallel, keeping input order.
fn batched<S, F>(scorer: &S, sequences: &[Vec<u32>], per_batch: F) -> Result<Vec<f64>>
where
    S: TokenScorer + ?Sized,
    F: Fn(usize, &[Vec<u32>], &PaddedBatch, &[f64], usize) -> Vec<f64> + Sync,
{
    let pad = scorer.specials().pad;
    let v = scorer.vocab_size();
    let parts: Vec<Vec<f64>> = sequences
        .par_chunks(SCORE_BATCH)
        .enumerate()
        .map(|(c, chunk)| {
            let batch = pad_batch(chunk, pad);
            let lp = scorer.log_probs(&batch)?;
            Ok(per_batch(c * SCORE_BATCH, chunk, &batch, &lp, v))
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn at(lp: &[f64], batch: &PaddedBatch, v: usize, row: usize, col: usize, id: u32) -> f64 {
    lp[(row * batch.cols + col) * v + id as usize]
}

fn require(scorer: &(impl TokenScorer + ?Sized), objective: Objective, op: &str) -> Result<()> {
    if scorer.objective() != objective {
        return Err(Error::Config(format!("{op} needs a {objective:?} model")));
    }
    Ok(())
}

/// `Σ_t log P(id_t | id_<t)` over every target after the first token, `<eos>` included.
pub fn sequence_logprobs<S>(scorer: &S, sequences: &[Vec<u32>]) -> Result<Vec<f64>>
where
    S: TokenScorer + ?Sized,
{
    require(scorer, Objective::Causal, "sequence_logprob")?;
    batched(scorer, sequences, |_, chunk, batch, lp, v| {
        chunk
            .iter()
            .enumerate()
            .map(|(r, ids)| (1..ids.len()).map(|t| at(lp, batch, v, r, t - 1, ids[t])).sum())
            .collect()
    })
}

pub fn sequence_logprob<S: TokenScorer + ?Sized>(scorer: &S, ids: &[u32]) -> Result<f64> {
    Ok(sequence_logprobs(scorer, &[ids.to_vec()])?[0])
}

/// Positions a masked model is scored on: every non-special token.
pub fn maskable_positions(ids: &[u32], specials: &Specials) -> Vec<usize> {
    (0..ids.len()).filter(|&j| !specials.is_special(ids[j])).collect()
}

/// Per-position masked log-probabilities: `log P(id_j | ids with j masked)` for
/// each maskable `j` of each sequence, flattened in order.
fn masked_terms<S>(scorer: &S, sequences: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>
where
    S: TokenScorer + ?Sized,
{
    require(scorer, Objective::Masked, "pseudo_logprob")?;
    let sp = scorer.specials();
    let mut variants = Vec::new();
    let mut owners = Vec::new();
    for (s, ids) in sequences.iter().enumerate() {
        for j in maskable_positions(ids, &sp) {
            let mut masked = ids.clone();
            masked[j] = sp.mask;
            variants.push(masked);
            owners.push((s, j, ids[j]));
        }
    }
    let scores = batched(scorer, &variants, |start, chunk, batch, lp, v| {
        (0..chunk.len())
            .map(|r| {
                let (_, j, id) = owners[start + r];
                at(lp, batch, v, r, j, id)
            })
            .collect()
    })?;
    let mut out = vec![Vec::new(); sequences.len()];
    for (&(s, _, _), score) in owners.iter().zip(scores) {
        out[s].push(score);
    }
    Ok(out)
}

/// `Σ_j log P(id_j | ids with position j replaced by <mask>)` over non-special `j`.
pub fn pseudo_logprobs<S>(scorer: &S, sequences: &[Vec<u32>]) -> Result<Vec<f64>>
where
    S: TokenScorer + ?Sized,
{
    Ok(masked_terms(scorer, sequences)?
        .into_iter()
        .map(|terms| terms.into_iter().sum())
        .collect())
}

pub fn pseudo_logprob<S: TokenScorer + ?Sized>(scorer: &S, ids: &[u32]) -> Result<f64> {
    Ok(pseudo_logprobs(scorer, &[ids.to_vec()])?[0])
}

/// Sentence scores under the scorer's own objective.
pub fn sentence_scores<S: TokenScorer + ?Sized>(scorer: &S, sequences: &[Vec<u32>]) -> Result<Vec<f64>> {
    match scorer.objective() {
        Objective::Causal => sequence_logprobs(scorer, sequences),
        Objective::Masked => pseudo_logprobs(scorer, sequences),
    }
}

/// `exp(−mean)` of token log-probabilities.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::InsufficientData("perplexity of zero tokens".into()));
    }
    let total: f64 = logprobs.iter().sum();
    Ok((-total / logprobs.len() as f64).exp())
}

/// Total log-probability and token count over a split.
///
/// Causal: every next-token target. Masked: every non-special position, masked
/// once each.
pub fn split_logprob<S>(scorer: &S, sequences: &[Vec<u32>]) -> Result<(f64, usize)>
where
    S: TokenScorer + ?Sized,
{
    match scorer.objective() {
        Objective::Causal => {
            let n = sequences.iter().map(|s| s.len().saturating_sub(1)).sum();
            Ok((sequence_logprobs(scorer, sequences)?.iter().sum(), n))
        }
        Objective::Masked => {
            let terms = masked_terms(scorer, sequences)?;
            let n = terms.iter().map(Vec::len).sum();
            Ok((terms.iter().flatten().sum(), n))
        }
    }
}

pub fn perplexity<S: TokenScorer + ?Sized>(scorer: &S, sequences: &[Vec<u32>]) -> Result<f64> {
    let (total, n) = split_logprob(scorer, sequences)?;
    if n == 0 {
        return Err(Error::InsufficientData("perplexity of zero tokens".into()));
    }
    Ok((-total / n as f64).exp())
}

/// Same distribution over the vocabulary at every position.
#[derive(Clone, Debug)]
pub struct UniformScorer {
    pub vocab_size: usize,
    pub objective: Objective,
}

impl TokenScorer for UniformScorer {
    fn objective(&self) -> Objective {
        self.objective
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, batch: &PaddedBatch) -> Result<Vec<f64>> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(vec![lp; batch.rows * batch.cols * self.vocab_size])
    }
}

/// First-order Markov chain over token ids, `table[prev][next] = log P(next | prev)`.
///
/// As a masked scorer, position `j` gets the exact chain conditional given both
/// neighbours: `P(w | prev, next) ∝ P(w | prev) · P(next | w)`.
#[derive(Clone, Debug)]
pub struct BigramModel {
    vocab_size: usize,
    table: Vec<f64>,
    objective: Objective,
}

impl BigramModel {
    /// `table` holds log-probabilities; every row must normalize.
    pub fn new(vocab_size: usize, table: Vec<f64>, objective: Objective) -> Result<Self> {
        if table.len() != vocab_size * vocab_size {
            return Err(Error::shape("bigram", &[vocab_size, vocab_size], &[table.len()]));
        }
        for (r, row) in table.chunks(vocab_size).enumerate() {
            let total = log_sum_exp(row.iter().copied());
            if total.abs() > 1e-9 {
                return Err(Error::Config(format!("bigram row {r} sums to exp({total})")));
            }
        }
        Ok(BigramModel {
            vocab_size,
            table,
            objective,
        })
    }

    /// Random normalized table from unnormalized `N(0, 1)` scores.
    pub fn random(vocab_size: usize, objective: Objective, rng: &mut impl rand::Rng) -> Self {
        let mut table = Vec::with_capacity(vocab_size * vocab_size);
        for _ in 0..vocab_size {
            let row: Vec<f64> = (0..vocab_size)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng))
                .collect();
            let lse = log_sum_exp(row.iter().copied());
            table.extend(row.into_iter().map(|x| x - lse));
        }
        BigramModel {
            vocab_size,
            table,
            objective,
        }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn logp(&self, prev: u32, next: u32) -> f64 {
        self.table[prev as usize * self.vocab_size + next as usize]
    }
}

impl TokenScorer for BigramModel {
    fn objective(&self) -> Objective {
        self.objective
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, batch: &PaddedBatch) -> Result<Vec<f64>> {
        let v = self.vocab_size;
        let mut out = Vec::with_capacity(batch.rows * batch.cols * v);
        for r in 0..batch.rows {
            let ids = batch.row(r);
            let len = batch.lengths[r];
            for t in 0..batch.cols {
                match self.objective {
                    Objective::Causal => {
                        out.extend_from_slice(&self.table[ids[t] as usize * v..(ids[t] as usize + 1) * v])
                    }
                    Objective::Masked => {
                        let mut row: Vec<f64> = (0..v as u32)
                            .map(|w| {
                                let left = if t > 0 { self.logp(ids[t - 1], w) } else { 0.0 };
                                let right = if t + 1 < len { self.logp(w, ids[t + 1]) } else { 0.0 };
                                left + right
                            })
                            .collect();
                        let lse = log_sum_exp(row.iter().copied());
                        row.iter_mut().for_each(|x| *x -= lse);
                        out.extend(row);
                    }
                }
            }
        }
        Ok(out)
    }
}
