//! Training protocol: per-family objectives, AdamW, reduce-on-plateau scheduling,
//! early stopping and seed-averaged grid search.

mod masking;
mod optim;
mod schedule;
mod search;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use masking::{mask_batch, MaskedBatch, MASK_RATIO};
pub use optim::AdamW;
pub use schedule::{replay, Decision, EarlyStopping, PlateauScheduler};
pub use search::{
    grid_search, ledger_table, merge_ledger, timing_table, SearchResult, SearchRow, SearchSpace, LEDGER_KEY,
};

use crate::autodiff::{Float, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::models::{LanguageModel, ModelConfig, Objective};
use crate::rng;
use crate::scoring::split_logprob;
use crate::tokenizer::{pad_batch, PaddedBatch, Specials};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Attention heads; ignored by the LSTM.
    pub n_heads: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mask_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 16,
            weight_decay: 0.01,
            dropout: 0.1,
            n_heads: 8,
            max_epochs: 100,
            seed: 0,
            mask_ratio: MASK_RATIO,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {}", self.mask_ratio)));
        }
        Ok(())
    }

    /// The architecture with this run's dropout and head count applied.
    pub fn model_config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut c = base.clone();
        c.dropout = self.dropout;
        if c.family.is_transformer() {
            c.n_heads = self.n_heads;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads overrides from `key = value` settings; absent keys keep `self`'s values.
    pub fn with_kv(&self, kv: &KeyValues) -> Result<Self> {
        let c = TrainConfig {
            learning_rate: kv.get_or("learning_rate", self.learning_rate)?,
            batch_size: kv.get_or("batch_size", self.batch_size)?,
            weight_decay: kv.get_or("weight_decay", self.weight_decay)?,
            dropout: kv.get_or("dropout", self.dropout)?,
            n_heads: kv.get_or("n_heads", self.n_heads)?,
            max_epochs: kv.get_or("max_epochs", self.max_epochs)?,
            seed: kv.get_or("seed", self.seed)?,
            mask_ratio: kv.get_or("mask_ratio", self.mask_ratio)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Independent random streams of one run.
pub struct RunRngs {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub masking: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            shuffle: rng::stream(seed, rng::SHUFFLE),
            dropout: rng::stream(seed, rng::DROPOUT),
            masking: rng::stream(seed, rng::MASKING),
        }
    }
}

/// Next-token targets for a causal batch: `ids[t+1]`, or pad past the end.
pub fn causal_targets(batch: &PaddedBatch, pad: u32) -> Vec<usize> {
    let mut targets = vec![pad as usize; batch.ids.len()];
    for r in 0..batch.rows {
        for t in 0..batch.lengths[r].saturating_sub(1) {
            targets[r * batch.cols + t] = batch.ids[r * batch.cols + t + 1] as usize;
        }
    }
    targets
}

/// Input batch and per-position targets for one optimization step.
pub fn training_batch(
    objective: Objective,
    sequences: &[&Vec<u32>],
    mask_ratio: f64,
    rngs: &mut RunRngs,
) -> (PaddedBatch, Vec<usize>) {
    let sp = Specials::standard();
    let batch = pad_batch(sequences, sp.pad);
    match objective {
        Objective::Causal => {
            let targets = causal_targets(&batch, sp.pad);
            (batch, targets)
        }
        Objective::Masked => {
            let m = mask_batch(&batch, mask_ratio, &sp, &mut rngs.masking);
            (m.input, m.targets)
        }
    }
}

/// Loss and per-parameter gradients for one batch.
pub fn loss_and_grads<T: Float>(
    model: &LanguageModel<T>,
    input: &PaddedBatch,
    targets: &[usize],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let tape = Tape::new();
    let vars = model.params().attach(&tape);
    let logits = model.forward(&vars, input, dropout_rng)?;
    let loss = logits.cross_entropy(targets, Specials::standard().pad as usize)?;
    let value = loss.item().as_f64();
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|v| grads.take(v.id()).expect("every parameter requires grad"))
        .collect();
    Ok((value, grads))
}

/// One pass over `train` in seeded random order. Returns the mean batch loss.
pub fn train_epoch<T: Float>(
    model: &mut LanguageModel<T>,
    opt: &mut AdamW<T>,
    train: &[Vec<u32>],
    cfg: &TrainConfig,
    lr: f64,
    rngs: &mut RunRngs,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let objective = model.config().family.objective();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rngs.shuffle);
    let mut total = 0.0;
    let mut batches = 0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let seqs: Vec<&Vec<u32>> = chunk.iter().map(|&i| &train[i]).collect();
        let (input, targets) = training_batch(objective, &seqs, cfg.mask_ratio, rngs);
        let (loss, grads) = loss_and_grads(model, &input, &targets, Some(&mut rngs.dropout))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { batch: b });
        }
        opt.step(model.params_mut(), &grads, lr);
        total += loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Evaluation loss in nats per token: next-token cross-entropy for causal models,
/// every-position-once pseudo cross-entropy for masked models.
pub fn evaluation_loss<T: Float>(model: &LanguageModel<T>, split: &[Vec<u32>]) -> Result<f64> {
    let (total, n) = split_logprob(model, split)?;
    if n == 0 {
        return Err(Error::InsufficientData("no scorable tokens in split".into()));
    }
    Ok(-total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult<T: Float> {
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
    /// Parameters from the best-validation epoch.
    pub model: LanguageModel<T>,
    pub wall_time: f64,
}

impl<T: Float> RunResult<T> {
    pub fn best_val_perplexity(&self) -> f64 {
        self.best_val_loss.exp()
    }
}

/// Trains a fresh model (initialized from `cfg.seed`) until early stopping and
/// returns the best-validation parameters.
pub fn train_run<T: Float>(
    base: &ModelConfig,
    train: &[Vec<u32>],
    val: &[Vec<u32>],
    cfg: &TrainConfig,
) -> Result<RunResult<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = LanguageModel::<T>::build(cfg.model_config(base)?, cfg.seed)?;
    let mut opt = AdamW::new(model.params(), cfg.weight_decay);
    let mut rngs = RunRngs::new(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.learning_rate, cfg.max_epochs);
    let mut best = model.clone();
    let mut trace = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let lr = stopper.lr();
        let train_loss = train_epoch(&mut model, &mut opt, train, cfg, lr, &mut rngs)?;
        let val_loss = evaluation_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { batch: 0 });
        }
        log::info!(
            "{} epoch {epoch}: lr {lr:e} train {train_loss:.4} val {val_loss:.4}",
            model.config().tag()
        );
        trace.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let decision = stopper.observe(val_loss);
        if stopper.is_best() {
            best = model.clone();
        }
        if decision == Decision::Stop {
            break;
        }
    }
    Ok(RunResult {
        config: cfg.clone(),
        best_val_loss: stopper.best_loss(),
        best_epoch: stopper.best_epoch().expect("at least one epoch"),
        trace,
        model: best,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    fn tiny(family: Family) -> ModelConfig {
        let layers = family.layer_options()[0];
        let mut c = ModelConfig::standard(family, layers, 12).unwrap().with_width(8, 16, 2).unwrap();
        c.max_len = 16;
        c
    }

    fn corpus() -> Vec<Vec<u32>> {
        (0..12).map(|i| vec![0, 5 + (i % 7), 5 + (i * 3 % 7), 1]).collect()
    }

    #[test]
    fn causal_targets_shift_left() {
        let b = pad_batch(&[vec![0, 5, 6, 1], vec![0, 7, 1]], 4);
        assert_eq!(causal_targets(&b, 4), vec![5, 6, 1, 4, 7, 1, 4, 4]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.24,
            batch_size: 4,
            n_heads: 2,
            ..TrainConfig::default()
        };
        for family in [Family::Lstm, Family::MaskedTransformer] {
            let mut m = LanguageModel::<f64>::build(cfg.model_config(&tiny(family)).unwrap(), 1).unwrap();
            let before = m.params().flatten();
            let mut opt = AdamW::new(m.params(), cfg.weight_decay);
            train_epoch(&mut m, &mut opt, &corpus(), &cfg, 0.0, &mut RunRngs::new(1)).unwrap();
            assert_eq!(m.params().flatten(), before);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            n_heads: 2,
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        for family in [Family::Lstm, Family::CausalTransformer, Family::MaskedTransformer] {
            let a = train_run::<f64>(&tiny(family), &corpus(), &corpus()[..4], &cfg).unwrap();
            let b = train_run::<f64>(&tiny(family), &corpus(), &corpus()[..4], &cfg).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.model.params().flatten(), b.model.params().flatten());
            let min = a.trace.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
            assert_eq!(a.best_val_loss, min);
        }
    }

    #[test]
    fn best_epoch_model_is_returned() {
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            max_epochs: 4,
            seed: 2,
            ..TrainConfig::default()
        };
        let r = train_run::<f64>(&tiny(Family::Lstm), &corpus(), &corpus()[..4], &cfg).unwrap();
        let loss = evaluation_loss(&r.model, &corpus()[..4]).unwrap();
        assert_eq!(loss, r.best_val_loss);
    }
}
