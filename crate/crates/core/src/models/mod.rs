//! The three model families behind one language-model interface.
//!
//! All families share one `[V, d]` token table between the input lookup and the
//! output projection. Logits come back flattened as `[rows·cols, V]` in batch
//! order.

mod checkpoint;
mod config;
mod lstm;
mod params;
mod transformer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, meta_path, save_checkpoint, CheckpointMeta,
};
pub use config::{Family, ModelConfig, Objective, ARCHITECTURES, LAYER_NORM_EPS};
pub use params::Params;

use crate::autodiff::{Float, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{PaddedBatch, Specials};

pub const EMBEDDING: &str = "embedding.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Debug)]
pub struct LanguageModel<T: Float> {
    config: ModelConfig,
    params: Params<T>,
}

impl<T: Float> LanguageModel<T> {
    /// Builds a freshly initialized model: weights `N(0, init_std)`, biases 0,
    /// layer-norm gains 1.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::Config(format!("init_std: {e}")))?;
        let mut params = Params::default();
        for spec in param_specs(&config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Normal => (0..n).map(|_| T::of(normal.sample(&mut rng))).collect(),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            params.push(spec.name, Tensor::new(spec.shape, data)?);
        }
        Ok(LanguageModel { config, params })
    }

    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(LanguageModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
        }
        self.config.dropout = p;
        Ok(())
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn specials(&self) -> Specials {
        Specials::standard()
    }

    /// Exact number of trainable scalars; the tied table is counted once.
    pub fn count_params(&self) -> usize {
        self.params.count_scalars()
    }

    pub fn embedding_table(&self) -> &Tensor<T> {
        self.params.get(EMBEDDING).expect("every family has a token table")
    }

    /// Records the forward pass on the tape of `vars` (one variable per parameter,
    /// in parameter order). Dropout is active only when `rng` is given.
    pub fn forward<'t>(
        &self,
        vars: &[Var<'t, T>],
        batch: &PaddedBatch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'t, T>> {
        if vars.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        if batch.rows == 0 || batch.cols == 0 {
            return Err(Error::shape("forward", &[batch.rows, batch.cols], &[]));
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::shape("forward", &[self.config.vocab_size], &[id as usize]));
        }
        let p = ParamVars {
            params: &self.params,
            vars,
        };
        match self.config.family {
            Family::Lstm => lstm::forward(&self.config, &p, batch, rng),
            Family::CausalTransformer | Family::MaskedTransformer => {
                if batch.cols > self.config.max_len {
                    return Err(Error::Length {
                        len: batch.cols,
                        max: self.config.max_len,
                    });
                }
                transformer::forward(&self.config, &p, batch, rng)
            }
        }
    }

    /// Evaluation-mode logits shaped `[rows, cols, V]`.
    pub fn logits(&self, batch: &PaddedBatch) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let vars = self.params.attach_frozen(&tape);
        let out = self.forward(&vars, batch, None)?;
        let value = (*out.value()).clone();
        value.reshape(&[batch.rows, batch.cols, self.config.vocab_size])
    }

    /// Next-token logits; position `t` sees only tokens `..=t`.
    pub fn forward_causal(&self, batch: &PaddedBatch) -> Result<Tensor<T>> {
        if self.config.family.objective() != Objective::Causal {
            return Err(Error::Config(
                "forward_causal requires an LSTM or causal transformer".into(),
            ));
        }
        self.logits(batch)
    }

    /// Token logits at every position given the whole sequence.
    pub fn forward_masked(&self, batch: &PaddedBatch) -> Result<Tensor<T>> {
        if self.config.family != Family::MaskedTransformer {
            return Err(Error::Config("forward_masked requires a masked transformer".into()));
        }
        self.logits(batch)
    }

    pub fn cast<U: Float>(&self) -> LanguageModel<U> {
        let mut params = Params::default();
        for (name, t) in self.params.iter() {
            params.push(name, t.cast());
        }
        LanguageModel {
            config: self.config.clone(),
            params,
        }
    }
}

/// Parameter variables addressed by name.
pub(crate) struct ParamVars<'a, 't, T: Float> {
    params: &'a Params<T>,
    vars: &'a [Var<'t, T>],
}

impl<'t, T: Float> ParamVars<'_, 't, T> {
    pub(crate) fn get(&self, name: &str) -> Var<'t, T> {
        let i = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }
}

/// Removes `<pad>` from the output distribution. With a tied table this also keeps
/// the pad row free of gradient.
pub(crate) fn exclude_pad<'t, T: Float>(logits: Var<'t, T>, vocab: usize) -> Result<Var<'t, T>> {
    let mut row = vec![T::zero(); vocab];
    row[Specials::standard().pad as usize] = T::of(EXCLUDED_LOGIT);
    let row = logits.tape().constant(Tensor::new(vec![vocab], row)?);
    logits.add_row(row)
}

pub(crate) const EXCLUDED_LOGIT: f64 = -1e9;

pub(crate) fn dropout<'t, T: Float>(
    x: Var<'t, T>,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var<'t, T>> {
    x.dropout(p, rng.as_deref_mut())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

/// Parameter names, shapes and initializers in their canonical order.
fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let (v, d, f) = (c.vocab_size, c.d_model, c.d_ffn);
    let mut out = vec![spec(EMBEDDING.into(), &[v, d], Init::Normal)];
    match c.family {
        Family::Lstm => {
            for l in 0..c.n_layers {
                out.push(spec(format!("lstm.{l}.weight_ih"), &[4 * d, d], Init::Normal));
                out.push(spec(format!("lstm.{l}.weight_hh"), &[4 * d, d], Init::Normal));
                out.push(spec(format!("lstm.{l}.bias_ih"), &[4 * d], Init::Zeros));
                out.push(spec(format!("lstm.{l}.bias_hh"), &[4 * d], Init::Zeros));
            }
            out.push(spec(HEAD_BIAS.into(), &[v], Init::Zeros));
        }
        Family::CausalTransformer | Family::MaskedTransformer => {
            out.push(spec("position.weight".into(), &[c.max_len, d], Init::Normal));
            for l in 0..c.n_layers {
                let b = |s: &str| format!("blocks.{l}.{s}");
                out.push(spec(b("ln1.gain"), &[d], Init::Ones));
                out.push(spec(b("ln1.bias"), &[d], Init::Zeros));
                out.push(spec(b("attn.qkv.weight"), &[3 * d, d], Init::Normal));
                out.push(spec(b("attn.q.bias"), &[d], Init::Zeros));
                out.push(spec(b("attn.v.bias"), &[d], Init::Zeros));
                out.push(spec(b("attn.out.weight"), &[d, d], Init::Normal));
                out.push(spec(b("attn.out.bias"), &[d], Init::Zeros));
                out.push(spec(b("ln2.gain"), &[d], Init::Ones));
                out.push(spec(b("ln2.bias"), &[d], Init::Zeros));
                out.push(spec(b("ffn.in.weight"), &[f, d], Init::Normal));
                out.push(spec(b("ffn.in.bias"), &[f], Init::Zeros));
                out.push(spec(b("ffn.out.weight"), &[d, f], Init::Normal));
                out.push(spec(b("ffn.out.bias"), &[d], Init::Zeros));
            }
            out.push(spec("ln_f.gain".into(), &[d], Init::Ones));
            out.push(spec("ln_f.bias".into(), &[d], Init::Zeros));
            if c.family == Family::MaskedTransformer {
                out.push(spec(HEAD_BIAS.into(), &[v], Init::Zeros));
            }
        }
    }
    out
}

/// Uniform draw helper used by tests that perturb inputs.
pub fn random_ids(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(5..vocab as u32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::pad_batch;

    fn small(family: Family, layers: usize) -> ModelConfig {
        let mut c = ModelConfig::standard(family, layers, 20)
            .unwrap()
            .with_width(16, 32, 4)
            .unwrap();
        c.max_len = 12;
        c.dropout = 0.0;
        c
    }

    #[test]
    fn counts_match_closed_form_for_every_architecture() {
        for (family, layers) in ARCHITECTURES {
            let c = small(family, layers);
            let m = LanguageModel::<f64>::build(c.clone(), 0).unwrap();
            assert_eq!(m.count_params(), c.expected_param_count(), "{}", c.label());
        }
    }

    #[test]
    fn initialization_scheme() {
        let m = LanguageModel::<f64>::build(small(Family::CausalTransformer, 2), 1).unwrap();
        assert!(m.params().get("blocks.0.ln1.gain").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(m.params().get("blocks.1.ffn.in.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let e = m.embedding_table().data();
        let sd = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.004, "{sd}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a = LanguageModel::<f64>::build(small(Family::Lstm, 1), 9).unwrap();
        let b = LanguageModel::<f64>::build(small(Family::Lstm, 1), 9).unwrap();
        assert_eq!(a.params().flatten(), b.params().flatten());
    }

    #[test]
    fn logits_shape_and_family_guards() {
        let lstm = LanguageModel::<f64>::build(small(Family::Lstm, 1), 0).unwrap();
        let batch = pad_batch(&[vec![0, 5, 6, 1], vec![0, 7, 1]], 4);
        assert_eq!(lstm.forward_causal(&batch).unwrap().shape(), &[2, 4, 20]);
        assert!(lstm.forward_masked(&batch).is_err());
        let masked = LanguageModel::<f64>::build(small(Family::MaskedTransformer, 2), 0).unwrap();
        assert!(masked.forward_causal(&batch).is_err());
    }

    #[test]
    fn overlong_sequence_is_a_length_error() {
        let m = LanguageModel::<f64>::build(small(Family::CausalTransformer, 2), 0).unwrap();
        let batch = pad_batch(&[vec![5u32; 13]], 4);
        assert!(matches!(m.forward_causal(&batch), Err(Error::Length { len: 13, max: 12 })));
    }

    #[test]
    fn out_of_range_id_rejected() {
        let m = LanguageModel::<f64>::build(small(Family::Lstm, 1), 0).unwrap();
        assert!(m.forward_causal(&pad_batch(&[vec![0, 99, 1]], 4)).is_err());
    }

    #[test]
    fn f32_model_tracks_f64() {
        let m = LanguageModel::<f64>::build(small(Family::CausalTransformer, 2), 2).unwrap();
        let m32: LanguageModel<f32> = m.cast();
        let batch = pad_batch(&[vec![0, 5, 9, 11, 1]], 4);
        let a = m.logits(&batch).unwrap();
        let b = m32.logits(&batch).unwrap();
        let pad = Specials::standard().pad as usize;
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            if i % 20 != pad {
                assert!((x - *y as f64).abs() < 1e-4);
            }
        }
    }
}
