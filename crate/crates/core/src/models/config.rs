use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Lstm,
    CausalTransformer,
    MaskedTransformer,
}

/// What a model's output distribution at position `t` predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// The token after position `t`, given tokens `..=t`.
    Causal,
    /// The token at position `t`, given the whole (masked) sequence.
    Masked,
}

impl Family {
    pub fn objective(self) -> Objective {
        match self {
            Family::Lstm | Family::CausalTransformer => Objective::Causal,
            Family::MaskedTransformer => Objective::Masked,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Lstm => "lstm",
            Family::CausalTransformer => "causal",
            Family::MaskedTransformer => "masked",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Lstm => "LSTM",
            Family::CausalTransformer => "Causal Transformer",
            Family::MaskedTransformer => "Masked Transformer",
        }
    }

    /// Layer counts with a standard configuration.
    pub fn layer_options(self) -> [usize; 2] {
        match self {
            Family::Lstm => [1, 2],
            Family::CausalTransformer | Family::MaskedTransformer => [2, 8],
        }
    }

    pub fn is_transformer(self) -> bool {
        !matches!(self, Family::Lstm)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lstm" => Ok(Family::Lstm),
            "causal" | "gpt2" | "gpt-2" | "causal_transformer" => Ok(Family::CausalTransformer),
            "masked" | "babyberta" | "masked_transformer" => Ok(Family::MaskedTransformer),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

/// The six standard architectures, in report order.
pub const ARCHITECTURES: [(Family, usize); 6] = [
    (Family::Lstm, 1),
    (Family::Lstm, 2),
    (Family::CausalTransformer, 2),
    (Family::CausalTransformer, 8),
    (Family::MaskedTransformer, 2),
    (Family::MaskedTransformer, 8),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    pub n_layers: usize,
    /// Embedding and hidden size (the LSTM hidden size equals it, as tying requires).
    pub d_model: usize,
    /// Transformer feed-forward inner size.
    pub d_ffn: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Rows of the learned positional table.
    pub max_len: usize,
    pub init_std: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl ModelConfig {
    /// Standard sizes: width 512, FFN 2048, 8 heads, 512 positions.
    pub fn standard(family: Family, n_layers: usize, vocab_size: usize) -> Result<Self> {
        let cfg = ModelConfig {
            family,
            n_layers,
            d_model: 512,
            d_ffn: 2048,
            n_heads: 8,
            dropout: 0.1,
            vocab_size,
            max_len: 512,
            init_std: 0.02,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_width(mut self, d_model: usize, d_ffn: usize, n_heads: usize) -> Result<Self> {
        self.d_model = d_model;
        self.d_ffn = d_ffn;
        self.n_heads = n_heads;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.family.layer_options().contains(&self.n_layers) {
            return Err(Error::Config(format!(
                "{} supports {:?} layers, not {}",
                self.family.display_name(),
                self.family.layer_options(),
                self.n_layers
            )));
        }
        if self.d_model == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.family.is_transformer() && (self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads)) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// `LSTM (1-layer)` style label.
    pub fn label(&self) -> String {
        format!("{} ({}-layer)", self.family.display_name(), self.n_layers)
    }

    /// `lstm-1` style identifier, safe in file names.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.family.tag(), self.n_layers)
    }

    /// Trainable scalars, from the architecture definition alone.
    ///
    /// LSTM: `V·d + L·4(d·d + d·d + 2d) + V` (tied table, two bias vectors per
    /// cell, output bias). Transformer: `V·d + P·d + L(4d² + 2d·f + 8d + f) + 2d`,
    /// plus an output bias of `V` for the masked family.
    pub fn expected_param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ffn, self.n_layers);
        match self.family {
            Family::Lstm => v * d + l * 4 * (d * d + d * d + 2 * d) + v,
            Family::CausalTransformer | Family::MaskedTransformer => {
                let block = 4 * d * d + 2 * d * f + 8 * d + f;
                let head_bias = if self.family == Family::MaskedTransformer { v } else { 0 };
                v * d + self.max_len * d + l * block + 2 * d + head_bias
            }
        }
    }

    /// `key = value` lines, the config record stored in checkpoints.
    pub fn to_kv(&self) -> String {
        format!(
            "family = {}\nn_layers = {}\nd_model = {}\nd_ffn = {}\nn_heads = {}\ndropout = {}\nvocab_size = {}\nmax_len = {}\ninit_std = {}\n",
            self.family,
            self.n_layers,
            self.d_model,
            self.d_ffn,
            self.n_heads,
            self.dropout,
            self.vocab_size,
            self.max_len,
            self.init_std
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = crate::kv::KeyValues::parse(text, "model config")?;
        let cfg = ModelConfig {
            family: kv.require("family")?,
            n_layers: kv.require("n_layers")?,
            d_model: kv.require("d_model")?,
            d_ffn: kv.require("d_ffn")?,
            n_heads: kv.require("n_heads")?,
            dropout: kv.require("dropout")?,
            vocab_size: kv.require("vocab_size")?,
            max_len: kv.require("max_len")?,
            init_std: kv.require("init_std")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
