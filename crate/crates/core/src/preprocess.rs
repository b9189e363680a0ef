//! Normalization, `<unk>` thresholding, length filtering, train/val/test
//! splitting, and corpus statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::corpus::RawUtterance;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::table::{thousands, Table};
use crate::tokenizer::{Vocabulary, UNK};

/// Lowercase word tokens of one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenizedUtterance(Vec<String>);

impl TokenizedUtterance {
    /// Rejects empty tokens and tokens containing whitespace.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Config(format!("invalid token {bad:?}")));
        }
        Ok(TokenizedUtterance(tokens))
    }

    /// Splits a space-separated line.
    pub fn from_line(line: &str) -> Self {
        TokenizedUtterance(line.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_line(&self) -> String {
        self.0.join(" ")
    }
}

const TERMINAL: [char; 3] = ['.', '?', '!'];

/// Lowercases, splits on whitespace, drops terminal punctuation and commas, and
/// keeps internal apostrophes.
pub fn normalize(u: &RawUtterance) -> TokenizedUtterance {
    normalize_text(&u.text)
}

pub fn normalize_text(text: &str) -> TokenizedUtterance {
    let tokens = text
        .split_whitespace()
        .filter_map(|raw| {
            let lowered = raw.to_lowercase().replace(',', "");
            let trimmed = lowered.trim_matches(|c| TERMINAL.contains(&c));
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
        .collect();
    TokenizedUtterance(tokens)
}

/// Word counts over a corpus.
pub type FrequencyTable = BTreeMap<String, usize>;

pub fn count_frequencies(corpus: &[TokenizedUtterance]) -> FrequencyTable {
    let mut counts = FrequencyTable::new();
    for u in corpus {
        for tok in u.tokens() {
            *counts.entry(tok.clone()).or_default() += 1;
        }
    }
    counts
}

/// Replaces every token seen fewer than `min_count` times in `train` with
/// `<unk>`. Returns the replaced training corpus and the training counts.
pub fn apply_unk(
    train: &[TokenizedUtterance],
    min_count: usize,
) -> Result<(Vec<TokenizedUtterance>, FrequencyTable)> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let freq = count_frequencies(train);
    Ok((replace_rare(train, &freq, min_count), freq))
}

/// Applies the training-split threshold to another split: tokens with training
/// frequency below `min_count` (including unseen ones) become `<unk>`.
pub fn replace_rare(
    corpus: &[TokenizedUtterance],
    train_freq: &FrequencyTable,
    min_count: usize,
) -> Vec<TokenizedUtterance> {
    corpus
        .iter()
        .map(|u| {
            TokenizedUtterance(
                u.tokens()
                    .iter()
                    .map(|t| {
                        if train_freq.get(t).copied().unwrap_or(0) >= min_count {
                            t.clone()
                        } else {
                            UNK.to_string()
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Drops utterances with fewer than `min_words` tokens.
pub fn filter_short(corpus: &[TokenizedUtterance], min_words: usize) -> Vec<TokenizedUtterance> {
    corpus
        .iter()
        .filter(|u| u.len() >= min_words)
        .cloned()
        .collect()
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.90,
            val: 0.05,
            test: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, sliced contiguously: `floor(f·n)` for validation
/// and test, the remainder for training.
pub fn split_indices(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    let sum = fractions.train + fractions.val + fractions.test;
    if (sum - 1.0).abs() > 1e-9 || [fractions.train, fractions.val, fractions.test].iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {sum}"
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 utterances to split, got {n}"
        )));
    }
    let n_val = (fractions.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (fractions.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, rng::SPLIT));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitCorpus {
    pub train: Vec<TokenizedUtterance>,
    pub val: Vec<TokenizedUtterance>,
    pub test: Vec<TokenizedUtterance>,
    pub seed: u64,
}

pub fn split_corpus(
    corpus: &[TokenizedUtterance],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitCorpus> {
    let idx = split_indices(corpus.len(), fractions, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| corpus[i].clone()).collect();
    Ok(SplitCorpus {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
        seed,
    })
}

/// Settings for [`prepare`].
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub min_count: usize,
    pub min_words: usize,
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_count: 3,
            min_words: 2,
            fractions: SplitFractions::default(),
            seed: 0,
        }
    }
}

/// A preprocessed dataset: splits, the training vocabulary, and training counts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: SplitCorpus,
    pub vocab: Vocabulary,
    pub train_freq: FrequencyTable,
}

/// Normalize → split → `<unk>` threshold from training counts → drop short
/// training and validation utterances → build the vocabulary.
pub fn prepare(utterances: &[RawUtterance], cfg: &PreprocessConfig) -> Result<Prepared> {
    let normalized: Vec<TokenizedUtterance> = utterances
        .iter()
        .map(normalize)
        .filter(|u| !u.is_empty())
        .collect();
    let split = split_corpus(&normalized, cfg.fractions, cfg.seed)?;
    let (train, train_freq) = apply_unk(&split.train, cfg.min_count)?;
    let val = replace_rare(&split.val, &train_freq, cfg.min_count);
    let test = replace_rare(&split.test, &train_freq, cfg.min_count);
    let train = filter_short(&train, cfg.min_words);
    let val = filter_short(&val, cfg.min_words);
    let vocab = Vocabulary::build(&train)?;
    Ok(Prepared {
        split: SplitCorpus {
            train,
            val,
            test,
            seed: cfg.seed,
        },
        vocab,
        train_freq,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub n_utterances: usize,
    pub mean_len: f64,
    /// Population standard deviation of utterance length.
    pub sd_len: f64,
    pub n_tokens: usize,
    pub oov_rate: f64,
    pub vocab_size: usize,
}

/// Counts tokens that are `<unk>` or absent from `train_vocab` as out-of-vocabulary.
pub fn compute_stats(split: &[TokenizedUtterance], train_vocab: &Vocabulary) -> CorpusStats {
    let n_utterances = split.len();
    let n_tokens: usize = split.iter().map(TokenizedUtterance::len).sum();
    let mean_len = if n_utterances == 0 {
        0.0
    } else {
        n_tokens as f64 / n_utterances as f64
    };
    let sd_len = if n_utterances == 0 {
        0.0
    } else {
        let ss: f64 = split
            .iter()
            .map(|u| (u.len() as f64 - mean_len).powi(2))
            .sum();
        (ss / n_utterances as f64).sqrt()
    };
    let oov = split
        .iter()
        .flat_map(|u| u.tokens())
        .filter(|t| *t == UNK || !train_vocab.contains(t))
        .count();
    CorpusStats {
        n_utterances,
        mean_len,
        sd_len,
        n_tokens,
        oov_rate: if n_tokens == 0 {
            0.0
        } else {
            oov as f64 / n_tokens as f64
        },
        vocab_size: train_vocab.len(),
    }
}

/// Training and validation statistics for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub dataset: String,
    pub train: CorpusStats,
    pub val: CorpusStats,
}

/// Long-format CSV table: one row per (dataset, split).
pub fn stats_csv(rows: &[DatasetStats]) -> Table {
    let mut t = Table::new([
        "dataset",
        "split",
        "n_utterances",
        "mean_len",
        "sd_len",
        "n_tokens",
        "oov_rate",
        "vocab_size",
    ]);
    for r in rows {
        for (name, s) in [("train", &r.train), ("val", &r.val)] {
            t.push([
                r.dataset.clone(),
                name.to_string(),
                s.n_utterances.to_string(),
                format!("{:.4}", s.mean_len),
                format!("{:.4}", s.sd_len),
                s.n_tokens.to_string(),
                format!("{:.6}", s.oov_rate),
                s.vocab_size.to_string(),
            ]);
        }
    }
    t
}

/// Metric rows by dataset columns, training block then validation block.
pub fn stats_display(rows: &[DatasetStats]) -> Table {
    let mut t = Table::new(
        std::iter::once(String::new()).chain(rows.iter().map(|r| r.dataset.clone())),
    );
    let line = |label: &str, f: &dyn Fn(&DatasetStats) -> String| {
        std::iter::once(label.to_string())
            .chain(rows.iter().map(f))
            .collect::<Vec<_>>()
    };
    t.push(line("Training", &|_| String::new()));
    t.push(line("  Number of utterances", &|r| thousands(r.train.n_utterances)));
    t.push(line("  Mean (SD) utterance length", &|r| {
        format!("{:.2} ({:.2})", r.train.mean_len, r.train.sd_len)
    }));
    t.push(line("  Number of tokens", &|r| thousands(r.train.n_tokens)));
    t.push(line("  Out-of-vocabulary rate", &|r| {
        format!("{:.2}%", 100.0 * r.train.oov_rate)
    }));
    t.push(line("  Vocabulary size", &|r| thousands(r.train.vocab_size)));
    t.push(line("Validation", &|_| String::new()));
    t.push(line("  Number of utterances", &|r| thousands(r.val.n_utterances)));
    t.push(line("  Mean (SD) utterance length", &|r| {
        format!("{:.2} ({:.2})", r.val.mean_len, r.val.sd_len)
    }));
    t.push(line("  Number of tokens", &|r| thousands(r.val.n_tokens)));
    t.push(line("  Out-of-vocabulary rate", &|r| {
        format!("{:.2}%", 100.0 * r.val.oov_rate)
    }));
    t
}
